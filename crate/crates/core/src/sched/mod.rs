//! Scheduling policies.

pub mod baselines;
pub mod fairserve;
mod queue;
mod throttle;

use serde::{Deserialize, Serialize};

pub use baselines::{
    fcfs_select_next, rpm_on_arrival, vtc_on_finish, vtc_select_next, Fcfs, Rpm, RpmConfig, RpmLimits,
    RpmScope, Vtc, VtcConfig, VtcState,
};
pub use fairserve::{
    app_stage_weight, oit_on_arrival, service_increment, wsc_on_finish, wsc_select_next, FairServe,
    FairServeConfig, ServiceState, ThrottleConfig, TokenCounts,
};
pub use queue::{adjust_counter_on_arrival, UserQueue, WaitQueue};
pub use throttle::{AppLimit, ThrottleState, DEFAULT_WINDOW_MS};

use crate::engine::Policy;
use crate::error::{ConfigError, Error};
use crate::workload::Trace;

/// Policy selection plus its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode")]
pub enum PolicyConfig {
    #[serde(rename = "fcfs")]
    Fcfs,
    #[serde(rename = "rpm")]
    Rpm(RpmConfig),
    #[serde(rename = "vtc")]
    Vtc(VtcConfig),
    #[serde(rename = "fs-w")]
    FsW(FairServeConfig),
    #[serde(rename = "fs-wi")]
    FsWi(FairServeConfig),
}

pub const POLICY_NAMES: [&str; 5] = ["fcfs", "rpm", "vtc", "fs-w", "fs-wi"];

impl PolicyConfig {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyConfig::Fcfs => "fcfs",
            PolicyConfig::Rpm(_) => "rpm",
            PolicyConfig::Vtc(_) => "vtc",
            PolicyConfig::FsW(_) => "fs-w",
            PolicyConfig::FsWi(_) => "fs-wi",
        }
    }

    /// Default parameters for a policy name.
    pub fn default_for(name: &str) -> Result<Self, Error> {
        Ok(match name {
            "fcfs" => PolicyConfig::Fcfs,
            "rpm" => PolicyConfig::Rpm(RpmConfig::default()),
            "vtc" => PolicyConfig::Vtc(VtcConfig::default()),
            "fs-w" => PolicyConfig::FsW(FairServeConfig::default()),
            "fs-wi" => PolicyConfig::FsWi(FairServeConfig::default()),
            other => return Err(Error::UnknownPolicy(other.to_string())),
        })
    }
}

pub fn build_policy(cfg: &PolicyConfig, trace: &Trace) -> Result<Box<dyn Policy>, ConfigError> {
    Ok(match cfg {
        PolicyConfig::Fcfs => Box::new(Fcfs::new()),
        PolicyConfig::Rpm(c) => Box::new(Rpm::new(trace, c)?),
        PolicyConfig::Vtc(c) => Box::new(Vtc::new(c)?),
        PolicyConfig::FsW(c) => Box::new(FairServe::weighted(trace, c)?),
        PolicyConfig::FsWi(c) => Box::new(FairServe::weighted_throttled(trace, c)?),
    })
}
