//! Plain re-statement of the engine loop, written for clarity rather than speed:
//! linear scans everywhere, no heaps, no per-user bookkeeping.

use fairserve_core::engine::{
    Admission, EngineConfig, EngineEvent, EngineView, EventKind, Policy, RequestMeta,
};
use fairserve_core::workload::{InteractionStatus, RequestId, Trace};

#[derive(Clone, Copy, PartialEq)]
enum St {
    Pending,
    Queued,
    Blocked,
    Running,
    Done,
}

struct Req {
    meta: RequestMeta,
    out_true: u32,
    reserve: u64,
    decoded: u32,
    st: St,
    seq: u64,
    it: usize,
}

pub struct Outcome {
    pub events: Vec<EngineEvent>,
    pub status: Vec<InteractionStatus>,
    pub iterations: u64,
}

struct Sim<'a> {
    trace: &'a Trace,
    cfg: EngineConfig,
    clock: f64,
    occ: u64,
    reqs: Vec<Req>,
    batch: Vec<usize>,
    next_seq: u64,
    events: Vec<EngineEvent>,
    status: Vec<InteractionStatus>,
}

impl Sim<'_> {
    fn add_call(&mut self, it: usize, stage: u32, at: f64) {
        let i = &self.trace.interactions[it];
        let c = i.calls[stage as usize - 1];
        let app = self.trace.apps.iter().find(|a| a.app_id == i.app_id).unwrap();
        let reserve = if (stage as usize) <= app.stages.len() {
            app.stages[stage as usize - 1].expected_output_tokens.ceil() as u64
        } else {
            self.cfg.default_output_reserve as u64
        };
        let meta = RequestMeta {
            id: RequestId(self.reqs.len() as u64),
            user: i.user_id,
            app: i.app_id,
            interaction: i.interaction_id,
            stage,
            num_calls: i.calls.len() as u32,
            input_tokens: c.input_tokens,
            system_tokens: c.system_tokens,
            arrival_ms: at,
            head_arrival_ms: i.head_arrival_ms,
        };
        self.reqs.push(Req {
            meta,
            out_true: c.output_tokens_true,
            reserve,
            decoded: 0,
            st: St::Pending,
            seq: self.next_seq,
            it,
        });
        self.next_seq += 1;
    }

    fn log(&mut self, t: f64, kind: EventKind, r: usize, tokens: u64) {
        let m = self.reqs[r].meta;
        self.events.push(EngineEvent {
            t_ms: t,
            kind,
            request_id: m.id,
            interaction_id: m.interaction,
            stage: m.stage,
            tokens,
            occupancy: self.occ,
        });
    }

    fn prompt(&self, r: usize) -> u64 {
        self.reqs[r].meta.input_tokens as u64 + self.reqs[r].meta.system_tokens as u64
    }

    fn view(&self) -> EngineView {
        EngineView {
            now_ms: self.clock,
            occupied_tokens: self.occ,
            capacity_tokens: self.cfg.kv_capacity_tokens,
            overload_threshold: self.cfg.overload_threshold,
            batch_len: self.batch.len(),
        }
    }

    fn next_pending(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, r) in self.reqs.iter().enumerate() {
            if r.st != St::Pending {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => {
                    let (tb, sb) = (self.reqs[b].meta.arrival_ms, self.reqs[b].seq);
                    r.meta.arrival_ms < tb || (r.meta.arrival_ms == tb && r.seq < sb)
                }
            };
            if better {
                best = Some(i);
            }
        }
        best
    }

    fn past_horizon(&self, t: f64) -> bool {
        matches!(self.cfg.horizon_ms, Some(h) if t >= h)
    }
}

pub fn run(trace: &Trace, policy: &mut dyn Policy, cfg: EngineConfig) -> Result<Outcome, String> {
    let mut s = Sim {
        trace,
        cfg,
        clock: 0.0,
        occ: 0,
        reqs: Vec::new(),
        batch: Vec::new(),
        next_seq: 0,
        events: Vec::new(),
        status: vec![InteractionStatus::Pending; trace.interactions.len()],
    };
    for it in 0..trace.interactions.len() {
        let t = trace.interactions[it].head_arrival_ms;
        s.add_call(it, 1, t);
    }
    let mut iterations = 0;
    loop {
        if s.past_horizon(s.clock) {
            for r in std::mem::take(&mut s.batch) {
                s.occ -= s.prompt(r) + s.reqs[r].decoded as u64;
                s.reqs[r].st = St::Done;
                let d = s.reqs[r].decoded as u64;
                s.log(s.clock, EventKind::Abort, r, d);
            }
            break;
        }

        // arrivals
        while let Some(r) = s.next_pending() {
            let at = s.reqs[r].meta.arrival_ms;
            if at > s.clock || s.past_horizon(at) {
                break;
            }
            let it = s.reqs[r].it;
            let stage = s.reqs[r].meta.stage;
            if stage == 1 {
                s.status[it] = InteractionStatus::Active;
            }
            s.log(at, EventKind::Arrive, r, 0);
            let need = s.prompt(r) + s.reqs[r].reserve.max(s.reqs[r].out_true as u64);
            if need > cfg.kv_capacity_tokens {
                s.reqs[r].st = St::Done;
                s.status[it] = InteractionStatus::Rejected;
                s.log(s.clock, EventKind::Oversize, r, 0);
                continue;
            }
            let meta = s.reqs[r].meta;
            match policy.on_arrival(&meta, &s.view()) {
                Admission::Enqueue => {
                    s.reqs[r].st = St::Queued;
                    s.log(s.clock, EventKind::Enqueue, r, 0);
                }
                Admission::Block => {
                    s.reqs[r].st = St::Blocked;
                    s.status[it] = if stage == 1 {
                        InteractionStatus::BlockedAtHead
                    } else {
                        InteractionStatus::AbortedMidway
                    };
                    s.log(s.clock, EventKind::Block, r, 0);
                }
            }
        }

        // admission
        let mut new_prompt = 0;
        while s.batch.len() < cfg.max_batch_size {
            let Some(id) = policy.select_next(&s.view()) else {
                break;
            };
            let r = id.0 as usize;
            if r >= s.reqs.len() || s.reqs[r].st != St::Queued {
                return Err(format!("policy nominated {r}, which is not queued"));
            }
            if s.occ + s.prompt(r) + s.reqs[r].reserve > cfg.kv_capacity_tokens {
                break;
            }
            policy.on_admit(id);
            s.reqs[r].st = St::Running;
            s.occ += s.prompt(r);
            s.batch.push(r);
            new_prompt += s.prompt(r);
            let p = s.prompt(r);
            s.log(s.clock, EventKind::Admit, r, p);
        }

        if s.batch.is_empty() {
            match s.next_pending() {
                None => break,
                Some(r) => {
                    let at = s.reqs[r].meta.arrival_ms;
                    s.clock = match cfg.horizon_ms {
                        Some(h) if at >= h => h.max(s.clock),
                        _ => at,
                    };
                }
            }
            continue;
        }

        let duration = cfg.timing.iter_base_ms
            + cfg.timing.decode_ms_per_request * s.batch.len() as f64
            + cfg.timing.prefill_ms_per_token * new_prompt as f64;
        let end = s.clock + duration;
        s.occ += s.batch.len() as u64;
        for k in 0..s.batch.len() {
            let r = s.batch[k];
            s.reqs[r].decoded += 1;
            if s.reqs[r].decoded == 1 {
                s.log(end, EventKind::FirstToken, r, 0);
            }
        }
        let batch = std::mem::take(&mut s.batch);
        for r in batch {
            if s.reqs[r].decoded < s.reqs[r].out_true {
                s.batch.push(r);
                continue;
            }
            s.occ -= s.prompt(r) + s.reqs[r].decoded as u64;
            s.reqs[r].st = St::Done;
            let d = s.reqs[r].decoded;
            s.log(end, EventKind::Finish, r, d as u64);
            let meta = s.reqs[r].meta;
            policy.on_finish(&meta, d);
            let it = s.reqs[r].it;
            if meta.stage < meta.num_calls {
                let think = trace.interactions[it].think_time_ms;
                s.add_call(it, meta.stage + 1, end + think);
            } else {
                s.status[it] = InteractionStatus::Completed;
            }
        }
        s.clock = end;
        iterations += 1;
    }
    Ok(Outcome {
        events: s.events,
        status: s.status,
        iterations,
    })
}
