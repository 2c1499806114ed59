"""Smoke test for the fairserve extension module.

    maturin build -m crates/py/Cargo.toml -o dist && pip install dist/fairserve-*.whl
    python crates/py/python/smoke_test.py
"""
import math
import os
import tempfile

import fairserve


def main():
    assert fairserve.app_stage_weight(10, 4, 30, alpha=1, beta=0, gamma=0) == 10.0
    assert math.isclose(fairserve.service_increment(5, 0, 0, 50.0, alpha=1, beta=0, gamma=0), 0.1)
    assert fairserve.jain_index([1.0, 1.0, 1.0]) == 1.0
    try:
        fairserve.jain_index([])
    except ValueError:
        pass
    else:
        raise AssertionError("empty jain_index should raise")

    assert set(fairserve.presets()) == {"table1", "abuse", "case-study"}
    trace = fairserve.Trace.generate(preset="case-study", seed=3)
    assert trace.seed == 3 and len(trace) == trace.num_interactions > 0
    hist = dict(trace.bucket_histogram())
    assert sum(hist.values()) == len(trace)

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "trace.jsonl")
        trace.save(path)
        again = fairserve.Trace.load(path)
        assert again.num_calls == trace.num_calls
        try:
            fairserve.Trace.load(os.path.join(d, "missing.jsonl"))
        except OSError:
            pass
        else:
            raise AssertionError("missing trace should raise")

    reports = fairserve.compare(trace, ["fcfs", "fs-wi"], preset="case-study")
    assert [r["policy"] for r in reports] == ["fcfs", "fs-wi"]
    fs = fairserve.run(trace, "fs-wi", preset="case-study")
    assert fs == reports[1]
    assert fs["global"]["wasted_tokens"] == 0

    try:
        fairserve.run(trace, "lottery")
    except ValueError as e:
        assert "lottery" in str(e)
    else:
        raise AssertionError("unknown policy should raise")

    print("smoke test ok:", trace, "fs-wi served users",
          round(fs["global"]["served_users_pct_interactions"], 2))


if __name__ == "__main__":
    main()
