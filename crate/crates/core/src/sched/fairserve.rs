//! Application-aware weighted fair scheduling with interaction-aware throttling.
//!
//! Two cooperating pieces:
//!
//! * **Weighted service counters (WSC).** Every app stage `j` gets a weight
//!   `w = alpha*E[input] + beta*E[system] + gamma*E[output]`, the expected
//!   weighted token mass of that stage. A finished call charges its user
//!   `priority * (alpha*L_in + beta*L_sys + gamma*L_out) / w`, so a call that
//!   matches its app's expectations costs exactly one unit whatever the app.
//!   Selection serves continuations of already-running interactions first,
//!   then the least-served user.
//! * **Overload & interaction-driven throttling (OIT).** Arrivals are counted
//!   per user and per app over a sliding window. Only when the KV cache is
//!   overloaded, and only for the head call of an interaction, is a request
//!   blocked: first on the user's limit, then on the app's. Continuations are
//!   always queued, so a throttled interaction never has tokens to waste.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::queue::{adjust_counter_on_arrival, argmin_by_counter, counter, WaitQueue};
use super::throttle::{AppLimit, ThrottleState, DEFAULT_WINDOW_MS};
use crate::engine::{Admission, EngineView, Policy, RequestMeta};
use crate::error::ConfigError;
use crate::workload::{AppId, AppStageProfile, RequestId, TokenWeights, Trace, UserId};

/// Expected weighted token mass of one app stage.
pub fn app_stage_weight(profile: &AppStageProfile, tw: &TokenWeights) -> Result<f64, ConfigError> {
    let w = tw.mass(
        profile.expected_input_tokens,
        profile.expected_system_tokens,
        profile.expected_output_tokens,
    );
    if !(w.is_finite() && w > 0.0) {
        return Err(ConfigError::invalid(
            "stage_weight",
            format!("stage weight must be positive, got {w}"),
        ));
    }
    Ok(w)
}

/// Actual token counts of a processed call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenCounts {
    pub input: f64,
    pub system: f64,
    pub output: f64,
}

/// Service charged for one finished call.
pub fn service_increment(tokens: TokenCounts, weight: f64, tw: &TokenWeights, priority: f64) -> f64 {
    priority * tw.mass(tokens.input, tokens.system, tokens.output) / weight
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThrottleConfig {
    /// Per-user arrival limit within the window.
    pub global_user_limit: u32,
    /// Per-app arrival limits. Apps without an entry have no app limit.
    pub per_app_limit: BTreeMap<AppId, u32>,
    pub window_ms: u64,
}

impl ThrottleConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.global_user_limit == 0 {
            return Err(ConfigError::invalid("global_user_limit", "must be >= 1"));
        }
        if self.per_app_limit.values().any(|l| *l == 0) {
            return Err(ConfigError::invalid("per_app_limits", "limits must be >= 1"));
        }
        if self.window_ms == 0 {
            return Err(ConfigError::invalid("window_ms", "must be positive"));
        }
        Ok(())
    }
}

/// WSC bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceState {
    pub counters: BTreeMap<UserId, f64>,
    pub queue: WaitQueue,
    pub last_exited_user: Option<UserId>,
    /// Stage weights keyed by `(app, 1-based stage)`.
    pub weights: BTreeMap<(AppId, u32), f64>,
    pub token_weights: TokenWeights,
    pub priorities: BTreeMap<UserId, f64>,
    /// Largest single increment charged so far.
    pub max_increment: f64,
}

impl ServiceState {
    pub fn new(token_weights: TokenWeights) -> Self {
        Self {
            counters: BTreeMap::new(),
            queue: WaitQueue::default(),
            last_exited_user: None,
            weights: BTreeMap::new(),
            token_weights,
            priorities: BTreeMap::new(),
            max_increment: 0.0,
        }
    }

    /// Stage weights for every profiled app stage, priorities for every user.
    pub fn from_trace(trace: &Trace, token_weights: TokenWeights) -> Result<Self, ConfigError> {
        token_weights.validate()?;
        let mut s = Self::new(token_weights);
        for app in &trace.apps {
            for (j, stage) in app.stages.iter().enumerate() {
                s.weights
                    .insert((app.app_id, j as u32 + 1), app_stage_weight(stage, &token_weights)?);
            }
        }
        for u in &trace.users {
            s.priorities.insert(u.user_id, u.priority);
        }
        Ok(s)
    }

    /// Weight of `(app, stage)`; stages past the profile use the last profiled one.
    pub fn weight(&self, app: AppId, stage: u32) -> Option<f64> {
        self.weights
            .range((app, 0)..=(app, stage))
            .next_back()
            .map(|(_, w)| *w)
    }

    pub fn priority(&self, user: UserId) -> f64 {
        self.priorities.get(&user).copied().unwrap_or(1.0)
    }

    pub fn counter(&self, user: UserId) -> f64 {
        counter(&self.counters, user)
    }

    pub fn adjust_on_arrival(&mut self, user: UserId) {
        adjust_counter_on_arrival(&mut self.counters, &self.queue, self.last_exited_user, user);
    }

    /// Removes an admitted request from Q; records the user as the last to
    /// exit when that empties their queue.
    pub fn dequeue(&mut self, id: RequestId) -> Option<RequestMeta> {
        let req = self.queue.remove(id)?;
        if !self.queue.has_user(req.user) {
            self.last_exited_user = Some(req.user);
        }
        Some(req)
    }
}

/// Monitoring-stream decision for one arrival.
///
/// Adjusts the sender's counter, records the arrival in both windows (even if
/// it ends up blocked), then blocks only an overloaded head call whose user,
/// or failing that app, is over its limit.
pub fn oit_on_arrival(
    tstate: &mut ThrottleState,
    sstate: &mut ServiceState,
    r: &RequestMeta,
    overloaded: bool,
    cfg: &ThrottleConfig,
    now: f64,
) -> Admission {
    sstate.adjust_on_arrival(r.user);
    tstate.record(r.user, r.app, now);
    if overloaded && !r.is_continuation() {
        if tstate.user_count(r.user, now, cfg.window_ms) > cfg.global_user_limit as usize {
            return Admission::Block;
        }
        if let Some(limit) = cfg.per_app_limit.get(&r.app) {
            if tstate.app_count(r.app, now, cfg.window_ms) > *limit as usize {
                return Admission::Block;
            }
        }
    }
    Admission::Enqueue
}

/// Execution-stream selection.
///
/// Queued continuations win: among their senders the least-served user's
/// earliest continuation is returned. Otherwise the least-served queued
/// user's earliest request. Ties go to the earlier request, then lower user id.
pub fn wsc_select_next(sstate: &ServiceState) -> Option<&RequestMeta> {
    let counters = &sstate.counters;
    argmin_by_counter(
        counters,
        sstate
            .queue
            .users()
            .filter_map(|(u, q)| q.earliest_continuation().map(|r| (u, r))),
    )
    .or_else(|| {
        argmin_by_counter(
            counters,
            sstate.queue.users().filter_map(|(u, q)| q.earliest().map(|r| (u, r))),
        )
    })
}

/// Charges a finished call to its user and returns the increment.
pub fn wsc_on_finish(sstate: &mut ServiceState, finished: &RequestMeta, actual_output: u32) -> f64 {
    let weight = sstate.weight(finished.app, finished.stage).unwrap_or(1.0);
    let inc = service_increment(
        TokenCounts {
            input: finished.input_tokens as f64,
            system: finished.system_tokens as f64,
            output: actual_output as f64,
        },
        weight,
        &sstate.token_weights,
        sstate.priority(finished.user),
    );
    *sstate.counters.entry(finished.user).or_insert(0.0) += inc;
    sstate.max_increment = sstate.max_increment.max(inc);
    inc
}

fn default_alpha() -> f64 {
    1.0
}
fn default_beta() -> f64 {
    2.0
}
fn default_gamma() -> f64 {
    1.0
}
fn default_window() -> u64 {
    DEFAULT_WINDOW_MS
}
fn default_user_limit() -> u32 {
    60
}

/// Configuration block shared by `fs-w` and `fs-wi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairServeConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_window")]
    pub window_ms: u64,
    #[serde(default = "default_user_limit")]
    pub global_user_limit: u32,
    /// Overrides of the per-app limits carried by the trace's app profiles.
    #[serde(default)]
    pub per_app_limits: Vec<AppLimit>,
    /// Overrides the engine's overload threshold for throttling decisions.
    #[serde(default)]
    pub overload_threshold: Option<f64>,
}

impl Default for FairServeConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            beta: default_beta(),
            gamma: default_gamma(),
            window_ms: default_window(),
            global_user_limit: default_user_limit(),
            per_app_limits: Vec::new(),
            overload_threshold: None,
        }
    }
}

impl FairServeConfig {
    pub fn token_weights(&self) -> Result<TokenWeights, ConfigError> {
        TokenWeights::new(self.alpha, self.beta, self.gamma)
    }

    pub fn throttle_config(&self, trace: &Trace) -> Result<ThrottleConfig, ConfigError> {
        let mut per_app_limit: BTreeMap<AppId, u32> =
            trace.apps.iter().map(|a| (a.app_id, a.rpm_limit)).collect();
        for l in &self.per_app_limits {
            per_app_limit.insert(l.app_id, l.limit);
        }
        let cfg = ThrottleConfig {
            global_user_limit: self.global_user_limit,
            per_app_limit,
            window_ms: self.window_ms,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// FairServe as an engine policy. Without a throttle it is `fs-w`.
#[derive(Debug, Clone)]
pub struct FairServe {
    name: &'static str,
    pub service: ServiceState,
    throttle: Option<(ThrottleConfig, ThrottleState)>,
    overload_threshold: Option<f64>,
}

impl FairServe {
    /// WSC only; never blocks.
    pub fn weighted(trace: &Trace, cfg: &FairServeConfig) -> Result<Self, ConfigError> {
        Ok(Self {
            name: "fs-w",
            service: ServiceState::from_trace(trace, cfg.token_weights()?)?,
            throttle: None,
            overload_threshold: None,
        })
    }

    /// WSC plus OIT.
    pub fn weighted_throttled(trace: &Trace, cfg: &FairServeConfig) -> Result<Self, ConfigError> {
        if let Some(t) = cfg.overload_threshold {
            if !(t > 0.0 && t <= 1.0) {
                return Err(ConfigError::invalid("overload_threshold", "must be in (0, 1]"));
            }
        }
        Ok(Self {
            name: "fs-wi",
            service: ServiceState::from_trace(trace, cfg.token_weights()?)?,
            throttle: Some((cfg.throttle_config(trace)?, ThrottleState::default())),
            overload_threshold: cfg.overload_threshold,
        })
    }

    fn overloaded(&self, view: &EngineView) -> bool {
        match self.overload_threshold {
            Some(t) => view.occupied_tokens as f64 >= t * view.capacity_tokens as f64,
            None => view.is_overloaded(),
        }
    }
}

impl Policy for FairServe {
    fn name(&self) -> &str {
        self.name
    }

    fn on_arrival(&mut self, req: &RequestMeta, view: &EngineView) -> Admission {
        let overloaded = self.overloaded(view);
        let decision = match &mut self.throttle {
            Some((cfg, tstate)) => {
                oit_on_arrival(tstate, &mut self.service, req, overloaded, cfg, req.arrival_ms)
            }
            None => {
                self.service.adjust_on_arrival(req.user);
                Admission::Enqueue
            }
        };
        if decision == Admission::Enqueue {
            self.service.queue.push(*req);
        }
        decision
    }

    fn select_next(&self, _view: &EngineView) -> Option<RequestId> {
        wsc_select_next(&self.service).map(|r| r.id)
    }

    fn on_admit(&mut self, id: RequestId) {
        self.service.dequeue(id);
    }

    fn on_finish(&mut self, req: &RequestMeta, actual_output: u32) {
        wsc_on_finish(&mut self.service, req, actual_output);
    }

    fn service_counters(&self) -> Option<&BTreeMap<UserId, f64>> {
        Some(&self.service.counters)
    }
}
