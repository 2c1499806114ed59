//! Fair scheduling for multi-tenant LLM serving, with a deterministic
//! continuous-batching simulator to evaluate it.
//!
//! * [`workload`]: users, apps, interaction chains and synthetic traces.
//! * [`engine`]: the iteration-level engine and the [`engine::Policy`] hooks.
//! * [`sched`]: FairServe (`fs-w`, `fs-wi`) and the FCFS, RPM and VTC baselines.
//! * [`metrics`]: run reports from event logs.
//! * [`experiment`]: configs, presets and the gen/run/compare pipeline.

pub mod engine;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod sched;
pub mod workload;

pub use error::{ConfigError, EngineError, Error, MetricsError, TraceError};
