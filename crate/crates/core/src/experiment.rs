//! Experiment configuration, presets and the gen/run/compare pipeline.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{self, EngineConfig, EngineEvent, RunLog, TimingModel};
use crate::error::{ConfigError, Error, TraceError};
use crate::metrics::{self, ReportOptions, RunReport};
use crate::sched::{build_policy, AppLimit, FairServeConfig, PolicyConfig, RpmConfig, RpmScope, VtcConfig};
use crate::workload::{
    build_app_profiles, generate_trace, read_trace, AppConfig, AppId, AppStageProfile, GraphBucket,
    LengthModel, PopulationConfig, TokenWeights, Trace, UserGroup,
};

pub const PRESETS: [&str; 3] = ["table1", "abuse", "case-study"];

/// Parameters of a generated workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub duration_ms: f64,
    pub apps: Vec<AppConfig>,
    pub population: PopulationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Existing trace file. Takes precedence over `workload`.
    #[serde(default)]
    pub trace_path: Option<PathBuf>,
    #[serde(default)]
    pub workload: Option<WorkloadConfig>,
    #[serde(default)]
    pub engine: EngineConfig,
    pub policies: Vec<PolicyConfig>,
    #[serde(default)]
    pub delay_threshold_ms: Option<f64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(src: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(src)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        let src = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_toml_str(&src).map_err(|e| Error::ConfigParse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("experiment config is always representable")
    }

    pub fn preset(name: &str) -> Result<Self, Error> {
        match name {
            "table1" => Ok(table1_preset()),
            "abuse" => Ok(abuse_preset()),
            "case-study" => Ok(case_study_preset()),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.policies.is_empty() {
            return Err(ConfigError::invalid("policies", "at least one policy is required"));
        }
        if self.trace_path.is_none() && self.workload.is_none() {
            return Err(ConfigError::invalid(
                "workload",
                "either `trace_path` or a `workload` section is required",
            ));
        }
        if let Some(t) = self.delay_threshold_ms {
            if !(t.is_finite() && t >= 0.0) {
                return Err(ConfigError::invalid("delay_threshold_ms", "must be nonnegative"));
            }
        }
        self.engine.validate()
    }

    pub fn report_options(&self) -> ReportOptions {
        ReportOptions {
            delay_threshold_ms: self.delay_threshold_ms,
            token_weights: TokenWeights::default(),
        }
    }

    /// Generates the configured workload with the config's seed.
    pub fn generate(&self) -> Result<Trace, Error> {
        let w = self
            .workload
            .as_ref()
            .ok_or_else(|| ConfigError::invalid("workload", "no workload section to generate from"))?;
        let profiles = build_app_profiles(&w.apps)?;
        Ok(generate_trace(&profiles, &w.population, self.seed, w.duration_ms)?)
    }

    /// The trace file if one is set, otherwise a freshly generated trace.
    pub fn trace(&self) -> Result<Trace, Error> {
        match &self.trace_path {
            Some(p) => Ok(read_trace(p)?),
            None => self.generate(),
        }
    }

    /// The configured block for `name`, or its defaults.
    pub fn policy(&self, name: &str) -> Result<PolicyConfig, Error> {
        match self.policies.iter().find(|p| p.name() == name) {
            Some(p) => Ok(p.clone()),
            None => PolicyConfig::default_for(name),
        }
    }
}

/// Result of simulating one policy.
#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub log: RunLog,
    pub report: RunReport,
}

pub fn run_policy(
    trace: &Trace,
    policy: &PolicyConfig,
    engine_cfg: EngineConfig,
    opts: &ReportOptions,
) -> Result<PolicyRun, Error> {
    let p = build_policy(policy, trace)?;
    let log = engine::run(trace, p, engine_cfg)?;
    let report = metrics::compute_report(&log, trace, opts)?;
    Ok(PolicyRun { log, report })
}

/// Runs every policy on the same trace, in parallel. Results keep the
/// order of `policies`.
pub fn compare(
    trace: &Trace,
    policies: &[PolicyConfig],
    engine_cfg: EngineConfig,
    opts: &ReportOptions,
) -> Result<Vec<PolicyRun>, Error> {
    std::thread::scope(|s| {
        let handles: Vec<_> = policies
            .iter()
            .map(|p| s.spawn(move || run_policy(trace, p, engine_cfg, opts)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("policy run panicked"))
            .collect()
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), Error> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Header line of an events file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunHeader {
    policy: String,
    iterations: u64,
    busy_ms: f64,
    end_ms: f64,
    peak_occupancy: u64,
    max_backlogged_service_gap: Option<f64>,
}

/// Writes a run log as JSONL: a header line, then one event per line.
pub fn write_run_log(log: &RunLog, path: &Path) -> Result<(), Error> {
    let mut w = create(path)?;
    let header = RunHeader {
        policy: log.policy.clone(),
        iterations: log.iterations,
        busy_ms: log.busy_ms,
        end_ms: log.end_ms,
        peak_occupancy: log.peak_occupancy,
        max_backlogged_service_gap: log.max_backlogged_service_gap,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    engine::write_events(&log.events, &mut w).map_err(|e| Error::io(path, e))?;
    finish(w, path)
}

pub fn read_run_log(path: &Path) -> Result<RunLog, Error> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let parse_err = |line: usize, message: String| Error::Trace(TraceError::Parse { line, message });
    let first = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty events file".into()))?
        .map_err(|e| Error::io(path, e))?;
    let h: RunHeader = serde_json::from_str(&first).map_err(|e| parse_err(1, e.to_string()))?;
    let mut events: Vec<EngineEvent> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line).map_err(|e| parse_err(i + 2, e.to_string()))?);
    }
    Ok(RunLog {
        policy: h.policy,
        events,
        iterations: h.iterations,
        busy_ms: h.busy_ms,
        end_ms: h.end_ms,
        peak_occupancy: h.peak_occupancy,
        max_backlogged_service_gap: h.max_backlogged_service_gap,
        interaction_status: Vec::new(),
    })
}

/// Writes report.csv, report.json, table2.csv, table3.csv and figs/*.csv
/// under `dir`; with `emit_events`, also events/<policy>.jsonl. Returns the
/// written paths in a fixed order.
pub fn write_outputs(dir: &Path, runs: &[PolicyRun], emit_events: bool) -> Result<Vec<PathBuf>, Error> {
    let reports: Vec<RunReport> = runs.iter().map(|r| r.report.clone()).collect();
    let mut written = Vec::new();

    let mut emit = |name: &str, f: &dyn Fn(&mut BufWriter<File>) -> Result<(), Error>| {
        let path = dir.join(name);
        let mut w = create(&path)?;
        f(&mut w)?;
        finish(w, &path)?;
        written.push(path);
        Ok::<_, Error>(())
    };
    emit("report.csv", &|w| metrics::write_report_csv(&reports, w))?;
    emit("report.json", &|w| {
        metrics::write_report_json(&reports, &mut *w)?;
        w.write_all(b"\n").map_err(|e| Error::io("report.json", e))
    })?;
    emit("table2.csv", &|w| metrics::write_table2_csv(&reports, w))?;
    emit("table3.csv", &|w| metrics::write_table3_csv(&reports, w))?;
    emit("figs/fig7_throttling.csv", &|w| metrics::write_figure_csv(&metrics::fig7_rows(&reports), w))?;
    emit("figs/fig8_service.csv", &|w| metrics::write_figure_csv(&metrics::fig8_rows(&reports), w))?;

    if emit_events {
        for r in runs {
            let path = dir.join("events").join(format!("{}.jsonl", r.log.policy));
            write_run_log(&r.log, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn all_policies() -> Vec<PolicyConfig> {
    ["fcfs", "rpm", "vtc", "fs-w", "fs-wi"]
        .iter()
        .map(|n| PolicyConfig::default_for(n).expect("known name"))
        .collect()
}

/// The measured graph-size mix: bucket shares and per-interaction token totals.
pub fn table1_graph_mix() -> Vec<GraphBucket> {
    vec![
        GraphBucket::single(0.7322, 1, 4994.65, 136.86),
        GraphBucket::range(0.2609, 2, 10, 21352.13, 241.19),
        GraphBucket::range(0.0050, 11, 20, 51200.13, 3258.75),
        GraphBucket::range(0.0011, 21, 30, 65924.80, 9217.13),
        GraphBucket::range(0.00005, 31, 40, 94096.51, 13582.78),
        GraphBucket::range(0.00005, 41, 50, 161158.58, 12874.49),
        GraphBucket::range(0.00005, 51, 60, 543559.74, 22102.99),
    ]
}

fn table1_preset() -> ExperimentConfig {
    ExperimentConfig {
        seed: 1,
        trace_path: None,
        workload: Some(WorkloadConfig {
            duration_ms: 1_000_000.0,
            apps: vec![AppConfig {
                app_id: AppId(0),
                rpm_limit: 600,
                graph_mix: table1_graph_mix(),
                length_model: LengthModel::default(),
                think_time_ms: 500.0,
                stages: None,
            }],
            population: PopulationConfig {
                groups: vec![UserGroup {
                    app_id: AppId(0),
                    users: 100,
                    rate_per_s: 1.0,
                    priority: 1.0,
                }],
                abusive_fraction: 0.0,
                abusive_multiplier: 20.0,
            },
        }),
        engine: EngineConfig {
            kv_capacity_tokens: 2_000_000,
            ..EngineConfig::default()
        },
        policies: all_policies(),
        delay_threshold_ms: None,
        out_dir: None,
    }
}

/// Three apps: an agentic app chaining a few calls, a chat app, and a deep
/// agent whose interactions need more calls than the flat per-user limit
/// admits in one window. A tenth of the users are abusive and start
/// interactions 20 times faster. FairServe's per-user limit is much tighter
/// than the rate limiter's, but it applies only under overload and only to
/// interaction heads.
fn abuse_preset() -> ExperimentConfig {
    let user_limit = 45;
    let overload_user_limit = 6;
    let app = |id, mix: Vec<GraphBucket>, think_time_ms| AppConfig {
        app_id: AppId(id),
        rpm_limit: 5000,
        graph_mix: mix,
        length_model: LengthModel::default(),
        think_time_ms,
        stages: None,
    };
    let group = |id, users, rate_per_s| UserGroup {
        app_id: AppId(id),
        users,
        rate_per_s,
        priority: 1.0,
    };
    ExperimentConfig {
        seed: 7,
        trace_path: None,
        workload: Some(WorkloadConfig {
            duration_ms: 120_000.0,
            apps: vec![
                app(
                    0,
                    vec![
                        GraphBucket::range(0.6, 3, 6, 6000.0, 600.0),
                        GraphBucket::single(0.4, 1, 1500.0, 150.0),
                    ],
                    200.0,
                ),
                app(1, vec![GraphBucket::single(1.0, 1, 800.0, 120.0)], 0.0),
                app(2, vec![GraphBucket::range(1.0, 48, 55, 51000.0, 2550.0)], 100.0),
            ],
            population: PopulationConfig {
                groups: vec![group(0, 30, 0.05), group(1, 30, 0.1), group(2, 4, 0.02)],
                abusive_fraction: 0.1,
                abusive_multiplier: 20.0,
            },
        }),
        engine: EngineConfig {
            kv_capacity_tokens: 24_000,
            overload_threshold: 0.15,
            max_batch_size: 64,
            timing: TimingModel::default(),
            default_output_reserve: 128,
            horizon_ms: Some(150_000.0),
        },
        policies: vec![
            PolicyConfig::Fcfs,
            PolicyConfig::Rpm(RpmConfig {
                scope: RpmScope::Combined,
                user_limit,
                app_limits: Vec::new(),
                window_ms: 60_000,
            }),
            PolicyConfig::Vtc(VtcConfig::default()),
            PolicyConfig::FsW(FairServeConfig::default()),
            PolicyConfig::FsWi(FairServeConfig {
                global_user_limit: overload_user_limit,
                ..FairServeConfig::default()
            }),
        ],
        delay_threshold_ms: None,
        out_dir: None,
    }
}

/// Three apps: moderate prompts with long decodes, very long prompts, and a
/// light agentic app driven by a few busy tenants. The rate limiter uses one
/// flat per-user limit; FairServe's limits are per app.
fn case_study_preset() -> ExperimentConfig {
    let stage = |i: f64, o: f64| {
        Some(vec![AppStageProfile {
            expected_input_tokens: i,
            expected_system_tokens: 0.0,
            expected_output_tokens: o,
        }])
    };
    ExperimentConfig {
        seed: 14,
        trace_path: None,
        workload: Some(WorkloadConfig {
            duration_ms: 120_000.0,
            apps: vec![
                AppConfig {
                    app_id: AppId(14),
                    rpm_limit: 1000,
                    graph_mix: vec![GraphBucket::single(1.0, 1, 6370.0, 102.0)],
                    length_model: LengthModel::default(),
                    think_time_ms: 0.0,
                    stages: stage(6370.0, 102.0),
                },
                AppConfig {
                    app_id: AppId(7),
                    rpm_limit: 1000,
                    graph_mix: vec![GraphBucket::single(1.0, 1, 14854.0, 74.0)],
                    length_model: LengthModel::default(),
                    think_time_ms: 0.0,
                    stages: stage(14854.0, 74.0),
                },
                AppConfig {
                    app_id: AppId(12),
                    rpm_limit: 1000,
                    graph_mix: vec![GraphBucket::single(1.0, 4, 4.0 * 999.0, 4.0 * 32.0)],
                    length_model: LengthModel::default(),
                    think_time_ms: 50.0,
                    stages: stage(999.0, 32.0),
                },
            ],
            population: PopulationConfig {
                groups: vec![
                    UserGroup {
                        app_id: AppId(14),
                        users: 120,
                        rate_per_s: 0.019,
                        priority: 1.0,
                    },
                    UserGroup {
                        app_id: AppId(7),
                        users: 60,
                        rate_per_s: 0.019,
                        priority: 1.0,
                    },
                    UserGroup {
                        app_id: AppId(12),
                        users: 2,
                        rate_per_s: 0.3,
                        priority: 1.0,
                    },
                ],
                abusive_fraction: 0.0,
                abusive_multiplier: 20.0,
            },
        }),
        engine: EngineConfig {
            kv_capacity_tokens: 40_000,
            overload_threshold: 0.9,
            max_batch_size: 64,
            timing: TimingModel::default(),
            default_output_reserve: 128,
            horizon_ms: Some(120_000.0),
        },
        policies: vec![
            PolicyConfig::Rpm(RpmConfig {
                scope: RpmScope::User,
                user_limit: 2,
                app_limits: Vec::new(),
                window_ms: 60_000,
            }),
            PolicyConfig::Vtc(VtcConfig::default()),
            PolicyConfig::FsW(FairServeConfig::default()),
            PolicyConfig::FsWi(FairServeConfig {
                global_user_limit: 1000,
                per_app_limits: vec![
                    AppLimit { app_id: AppId(14), limit: 1000 },
                    AppLimit { app_id: AppId(7), limit: 1000 },
                    AppLimit { app_id: AppId(12), limit: 1000 },
                ],
                ..FairServeConfig::default()
            }),
        ],
        delay_threshold_ms: None,
        out_dir: None,
    }
}
