//! Comparison policies: FCFS, request-rate limiting and a virtual token counter.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::queue::{adjust_counter_on_arrival, argmin_by_counter, WaitQueue};
use super::throttle::{AppLimit, ThrottleState, DEFAULT_WINDOW_MS};
use crate::engine::{Admission, EngineView, Policy, RequestMeta};
use crate::error::ConfigError;
use crate::workload::{AppId, RequestId, Trace, UserId};

/// Globally earliest queued request by `(arrival, id)`.
pub fn fcfs_select_next(queue: &WaitQueue) -> Option<&RequestMeta> {
    queue.earliest()
}

/// First come, first served. Never blocks.
#[derive(Debug, Clone, Default)]
pub struct Fcfs {
    queue: WaitQueue,
}

impl Fcfs {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Policy for Fcfs {
    fn name(&self) -> &str {
        "fcfs"
    }
    fn on_arrival(&mut self, req: &RequestMeta, _view: &EngineView) -> Admission {
        self.queue.push(*req);
        Admission::Enqueue
    }
    fn select_next(&self, _view: &EngineView) -> Option<RequestId> {
        fcfs_select_next(&self.queue).map(|r| r.id)
    }
    fn on_admit(&mut self, id: RequestId) {
        self.queue.remove(id);
    }
    fn on_finish(&mut self, _req: &RequestMeta, _actual_output: u32) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RpmScope {
    User,
    App,
    #[default]
    Combined,
}

/// Resolved limits for [`rpm_on_arrival`]. `None` disables a level.
#[derive(Debug, Clone, PartialEq)]
pub struct RpmLimits {
    pub user_limit: Option<u32>,
    pub app_limits: BTreeMap<AppId, u32>,
    pub window_ms: u64,
}

/// Records the arrival, then blocks if the user or the app is over its limit.
/// Load and stage are ignored.
pub fn rpm_on_arrival(tstate: &mut ThrottleState, r: &RequestMeta, cfg: &RpmLimits, now: f64) -> Admission {
    tstate.record(r.user, r.app, now);
    let user_over = cfg
        .user_limit
        .is_some_and(|l| tstate.user_count(r.user, now, cfg.window_ms) > l as usize);
    let app_over = cfg
        .app_limits
        .get(&r.app)
        .is_some_and(|l| tstate.app_count(r.app, now, cfg.window_ms) > *l as usize);
    if user_over || app_over {
        Admission::Block
    } else {
        Admission::Enqueue
    }
}

fn default_rpm_user_limit() -> u32 {
    60
}
fn default_window() -> u64 {
    DEFAULT_WINDOW_MS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpmConfig {
    #[serde(default)]
    pub scope: RpmScope,
    #[serde(default = "default_rpm_user_limit")]
    pub user_limit: u32,
    /// Per-app limits; apps not listed fall back to their profile's `rpm_limit`.
    #[serde(default)]
    pub app_limits: Vec<AppLimit>,
    #[serde(default = "default_window")]
    pub window_ms: u64,
}

impl Default for RpmConfig {
    fn default() -> Self {
        Self {
            scope: RpmScope::Combined,
            user_limit: default_rpm_user_limit(),
            app_limits: Vec::new(),
            window_ms: default_window(),
        }
    }
}

impl RpmConfig {
    pub fn limits(&self, trace: &Trace) -> Result<RpmLimits, ConfigError> {
        if self.user_limit == 0 {
            return Err(ConfigError::invalid("user_limit", "must be >= 1"));
        }
        if self.window_ms == 0 {
            return Err(ConfigError::invalid("window_ms", "must be positive"));
        }
        if self.app_limits.iter().any(|l| l.limit == 0) {
            return Err(ConfigError::invalid("app_limits", "limits must be >= 1"));
        }
        let user_limit = matches!(self.scope, RpmScope::User | RpmScope::Combined).then_some(self.user_limit);
        let mut app_limits = BTreeMap::new();
        if matches!(self.scope, RpmScope::App | RpmScope::Combined) {
            app_limits.extend(trace.apps.iter().map(|a| (a.app_id, a.rpm_limit)));
            app_limits.extend(self.app_limits.iter().map(|l| (l.app_id, l.limit)));
        }
        Ok(RpmLimits {
            user_limit,
            app_limits,
            window_ms: self.window_ms,
        })
    }
}

/// FCFS order behind a request-rate limiter.
#[derive(Debug, Clone)]
pub struct Rpm {
    limits: RpmLimits,
    throttle: ThrottleState,
    queue: WaitQueue,
}

impl Rpm {
    pub fn new(trace: &Trace, cfg: &RpmConfig) -> Result<Self, ConfigError> {
        Ok(Self {
            limits: cfg.limits(trace)?,
            throttle: ThrottleState::default(),
            queue: WaitQueue::default(),
        })
    }

    pub fn limits(&self) -> &RpmLimits {
        &self.limits
    }
}

impl Policy for Rpm {
    fn name(&self) -> &str {
        "rpm"
    }
    fn on_arrival(&mut self, req: &RequestMeta, _view: &EngineView) -> Admission {
        let d = rpm_on_arrival(&mut self.throttle, req, &self.limits, req.arrival_ms);
        if d == Admission::Enqueue {
            self.queue.push(*req);
        }
        d
    }
    fn select_next(&self, _view: &EngineView) -> Option<RequestId> {
        fcfs_select_next(&self.queue).map(|r| r.id)
    }
    fn on_admit(&mut self, id: RequestId) {
        self.queue.remove(id);
    }
    fn on_finish(&mut self, _req: &RequestMeta, _actual_output: u32) {}
}

fn default_vtc_weights() -> [f64; 2] {
    [1.0, 2.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VtcConfig {
    /// `[input, output]` token weights. Input includes system tokens.
    #[serde(default = "default_vtc_weights")]
    pub vtc_weights: [f64; 2],
}

impl Default for VtcConfig {
    fn default() -> Self {
        Self {
            vtc_weights: default_vtc_weights(),
        }
    }
}

/// Virtual token counter state.
#[derive(Debug, Clone, PartialEq)]
pub struct VtcState {
    pub counters: BTreeMap<UserId, f64>,
    pub queue: WaitQueue,
    pub last_exited_user: Option<UserId>,
    pub input_weight: f64,
    pub output_weight: f64,
}

impl VtcState {
    pub fn new(input_weight: f64, output_weight: f64) -> Result<Self, ConfigError> {
        let ok = |w: f64| w.is_finite() && w >= 0.0;
        if !(ok(input_weight) && ok(output_weight)) || input_weight + output_weight <= 0.0 {
            return Err(ConfigError::invalid(
                "vtc_weights",
                "weights must be nonnegative and not both zero",
            ));
        }
        Ok(Self {
            counters: BTreeMap::new(),
            queue: WaitQueue::default(),
            last_exited_user: None,
            input_weight,
            output_weight,
        })
    }
}

/// Least-served user's earliest request; no continuation priority.
pub fn vtc_select_next(state: &VtcState) -> Option<&RequestMeta> {
    argmin_by_counter(
        &state.counters,
        state.queue.users().filter_map(|(u, q)| q.earliest().map(|r| (u, r))),
    )
}

/// Charges `w_in * (input + system) + w_out * output` and returns it.
pub fn vtc_on_finish(state: &mut VtcState, finished: &RequestMeta, actual_output: u32) -> f64 {
    let inc = state.input_weight * finished.prompt_tokens() as f64
        + state.output_weight * actual_output as f64;
    *state.counters.entry(finished.user).or_insert(0.0) += inc;
    inc
}

#[derive(Debug, Clone)]
pub struct Vtc {
    pub state: VtcState,
}

impl Vtc {
    pub fn new(cfg: &VtcConfig) -> Result<Self, ConfigError> {
        Ok(Self {
            state: VtcState::new(cfg.vtc_weights[0], cfg.vtc_weights[1])?,
        })
    }
}

impl Policy for Vtc {
    fn name(&self) -> &str {
        "vtc"
    }
    fn on_arrival(&mut self, req: &RequestMeta, _view: &EngineView) -> Admission {
        let s = &mut self.state;
        adjust_counter_on_arrival(&mut s.counters, &s.queue, s.last_exited_user, req.user);
        s.queue.push(*req);
        Admission::Enqueue
    }
    fn select_next(&self, _view: &EngineView) -> Option<RequestId> {
        vtc_select_next(&self.state).map(|r| r.id)
    }
    fn on_admit(&mut self, id: RequestId) {
        let s = &mut self.state;
        if let Some(r) = s.queue.remove(id) {
            if !s.queue.has_user(r.user) {
                s.last_exited_user = Some(r.user);
            }
        }
    }
    fn on_finish(&mut self, req: &RequestMeta, actual_output: u32) {
        vtc_on_finish(&mut self.state, req, actual_output);
    }
    fn service_counters(&self) -> Option<&BTreeMap<UserId, f64>> {
        Some(&self.state.counters)
    }
}
