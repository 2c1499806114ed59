//! Run reports computed from an engine event log.

mod export;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use export::{
    fig7_rows, fig8_rows, table2_rows, table3_rows, write_figure_csv, write_report_csv, write_report_json,
    write_table2_csv, write_table3_csv, FigureRow,
};

use crate::engine::{EventKind, RunLog};
use crate::error::MetricsError;
use crate::workload::{AppId, Behavior, InteractionId, InteractionStatus, RequestId, TokenWeights, Trace, UserId};

/// `(sum x)^2 / (n * sum x^2)`.
pub fn jain_index(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Jain("empty input"));
    }
    if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(MetricsError::Jain("values must be finite and nonnegative"));
    }
    let sum: f64 = values.iter().sum();
    let sq: f64 = values.iter().map(|v| v * v).sum();
    if sq == 0.0 {
        return Err(MetricsError::Jain("all values are zero"));
    }
    Ok(sum * sum / (values.len() as f64 * sq))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Latency {
    pub mean: f64,
    pub p50: f64,
    pub p99: f64,
}

impl Latency {
    /// Nearest-rank percentiles; zeros when empty.
    pub fn from_samples(samples: &mut [f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        samples.sort_by(f64::total_cmp);
        let rank = |p: f64| {
            let k = (p * samples.len() as f64).ceil() as usize;
            samples[k.clamp(1, samples.len()) - 1]
        };
        Self {
            mean: samples.iter().sum::<f64>() / samples.len() as f64,
            p50: rank(0.50),
            p99: rank(0.99),
        }
    }
}

/// Metrics for one scope (all apps, or a single app).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSet {
    pub users: u64,
    pub requests_total: u64,
    pub requests_served: u64,
    pub requests_blocked: u64,
    pub requests_oversize: u64,
    /// Cut off in flight by the horizon.
    pub requests_aborted: u64,
    pub requests_queued_at_end: u64,
    pub interactions_total: u64,
    pub interactions_completed: u64,
    pub interactions_aborted_midway: u64,
    pub interactions_blocked_at_head: u64,
    pub interactions_rejected: u64,
    pub interactions_unfinished: u64,
    pub wasted_tokens: u64,
    pub prompt_tokens: u64,
    pub decode_tokens: u64,
    /// Prompt tokens per simulated second.
    pub prompt_throughput: f64,
    /// Generated tokens per simulated second.
    pub decode_throughput: f64,
    pub ttft_ms: Latency,
    pub delayed_users_pct: f64,
    pub served_users_pct_requests: f64,
    pub served_users_pct_interactions: f64,
    pub service_provided_pct_requests: f64,
    pub service_provided_pct_interactions: f64,
    pub abuser_token_share: f64,
    pub max_backlogged_service_gap: Option<f64>,
    pub jain_fairness_index: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub policy: String,
    pub duration_ms: f64,
    pub iterations: u64,
    pub mean_iteration_ms: f64,
    pub delay_threshold_ms: f64,
    pub peak_occupancy: u64,
    pub global: MetricSet,
    pub per_app: BTreeMap<AppId, MetricSet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReportOptions {
    /// Queue wait above which a user counts as delayed. `None` means five
    /// mean iteration times.
    pub delay_threshold_ms: Option<f64>,
    /// Weights for the normalized service fed to the fairness index.
    pub token_weights: TokenWeights,
}

pub const DELAY_THRESHOLD_ITERATIONS: f64 = 5.0;

#[derive(Debug, Clone, Default)]
struct ReqRecord {
    interaction: usize,
    stage: u32,
    arrive: Option<f64>,
    enqueue: Option<f64>,
    admit: Option<f64>,
    first_token: Option<f64>,
    prompt: u64,
    generated: u64,
    finished: bool,
    blocked: bool,
    oversize: bool,
    aborted: bool,
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        100.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn per_sec(tokens: u64, duration_ms: f64) -> f64 {
    if duration_ms > 0.0 {
        tokens as f64 * 1000.0 / duration_ms
    } else {
        0.0
    }
}

/// Builds the report of one run.
///
/// Interaction outcomes are rebuilt from the events: a block at stage 1 is a
/// head block, a later block aborts the interaction midway, and a finish of
/// the last stage completes it. Wasted tokens are all prompt and generated
/// tokens processed for interactions aborted midway.
pub fn compute_report(log: &RunLog, trace: &Trace, opts: &ReportOptions) -> Result<RunReport, MetricsError> {
    let by_id: BTreeMap<InteractionId, usize> = trace
        .interactions
        .iter()
        .enumerate()
        .map(|(i, it)| (it.interaction_id, i))
        .collect();

    let mut reqs: BTreeMap<RequestId, ReqRecord> = BTreeMap::new();
    for e in &log.events {
        let idx = *by_id
            .get(&e.interaction_id)
            .ok_or(MetricsError::UnknownRequest(e.request_id))?;
        let it = &trace.interactions[idx];
        if e.stage == 0 || e.stage > it.num_calls() {
            return Err(MetricsError::UnknownRequest(e.request_id));
        }
        let r = reqs.entry(e.request_id).or_insert_with(|| ReqRecord {
            interaction: idx,
            stage: e.stage,
            prompt: it.calls[e.stage as usize - 1].prompt_tokens(),
            ..Default::default()
        });
        match e.kind {
            EventKind::Arrive => r.arrive = Some(e.t_ms),
            EventKind::Enqueue => r.enqueue = Some(e.t_ms),
            EventKind::Block => r.blocked = true,
            EventKind::Oversize => r.oversize = true,
            EventKind::Admit => r.admit = Some(e.t_ms),
            EventKind::FirstToken => r.first_token = Some(e.t_ms),
            EventKind::Finish => {
                r.finished = true;
                r.generated = e.tokens;
            }
            EventKind::Abort => {
                r.aborted = true;
                r.generated = e.tokens;
            }
        }
    }
    for (id, r) in &reqs {
        if r.admit.is_some() && !(r.finished || r.aborted) {
            return Err(MetricsError::IncompleteLog(*id));
        }
    }

    // interaction outcomes
    let mut status: BTreeMap<usize, InteractionStatus> = BTreeMap::new();
    for r in reqs.values() {
        let it = &trace.interactions[r.interaction];
        let s = status.entry(r.interaction).or_insert(InteractionStatus::Active);
        if r.blocked {
            *s = if r.stage == 1 {
                InteractionStatus::BlockedAtHead
            } else {
                InteractionStatus::AbortedMidway
            };
        } else if r.oversize {
            *s = InteractionStatus::Rejected;
        } else if r.finished && r.stage == it.num_calls() && *s == InteractionStatus::Active {
            *s = InteractionStatus::Completed;
        }
    }

    let iterations = log.iterations;
    let mean_iteration_ms = if iterations > 0 {
        log.busy_ms / iterations as f64
    } else {
        0.0
    };
    let delay_threshold_ms = opts
        .delay_threshold_ms
        .unwrap_or(DELAY_THRESHOLD_ITERATIONS * mean_iteration_ms);
    let duration_ms = log.end_ms;

    let weights: BTreeMap<(AppId, u32), f64> = trace
        .apps
        .iter()
        .flat_map(|a| {
            a.stages.iter().enumerate().map(move |(j, s)| {
                let w = opts.token_weights.mass(
                    s.expected_input_tokens,
                    s.expected_system_tokens,
                    s.expected_output_tokens,
                );
                ((a.app_id, j as u32 + 1), w)
            })
        })
        .collect();
    let stage_weight = |app: AppId, stage: u32| {
        weights
            .range((app, 0)..=(app, stage))
            .next_back()
            .map(|(_, w)| *w)
            .filter(|w| *w > 0.0)
            .unwrap_or(1.0)
    };
    let abusive: BTreeSet<UserId> = trace
        .users
        .iter()
        .filter(|u| u.behavior == Behavior::Abusive)
        .map(|u| u.user_id)
        .collect();

    let scope = |app: Option<AppId>| -> MetricSet {
        let in_scope = |r: &ReqRecord| app.is_none_or(|a| trace.interactions[r.interaction].app_id == a);
        let mut m = MetricSet::default();
        let mut users = BTreeSet::new();
        let mut users_served_req = BTreeSet::new();
        let mut users_feedback_req = BTreeSet::new();
        let mut users_delayed = BTreeSet::new();
        let mut service: BTreeMap<UserId, f64> = BTreeMap::new();
        let mut ttft = Vec::new();
        let mut abuser_tokens = 0u64;
        for r in reqs.values().filter(|r| in_scope(r)) {
            let it = &trace.interactions[r.interaction];
            let user = it.user_id;
            users.insert(user);
            service.entry(user).or_insert(0.0);
            m.requests_total += u64::from(r.arrive.is_some());
            if r.finished {
                m.requests_served += 1;
                users_served_req.insert(user);
                let call = &it.calls[r.stage as usize - 1];
                let mass = opts.token_weights.mass(
                    call.input_tokens as f64,
                    call.system_tokens as f64,
                    r.generated as f64,
                );
                *service.get_mut(&user).unwrap() += mass / stage_weight(it.app_id, r.stage);
            }
            if r.finished || r.blocked || r.oversize {
                users_feedback_req.insert(user);
            }
            m.requests_blocked += u64::from(r.blocked);
            m.requests_oversize += u64::from(r.oversize);
            m.requests_aborted += u64::from(r.aborted);
            m.requests_queued_at_end += u64::from(r.enqueue.is_some() && r.admit.is_none());
            if r.admit.is_some() {
                let consumed = r.prompt + r.generated;
                m.prompt_tokens += r.prompt;
                m.decode_tokens += r.generated;
                if abusive.contains(&user) {
                    abuser_tokens += consumed;
                }
                if status.get(&r.interaction) == Some(&InteractionStatus::AbortedMidway) {
                    m.wasted_tokens += consumed;
                }
            }
            if let (Some(a), Some(f)) = (r.arrive, r.first_token) {
                ttft.push(f - a);
            }
            if let (Some(a), Some(_)) = (r.arrive, r.enqueue) {
                let wait = r.admit.unwrap_or(duration_ms) - a;
                if wait > delay_threshold_ms {
                    users_delayed.insert(user);
                }
            }
        }

        let mut users_completed = BTreeSet::new();
        let mut users_feedback_int = BTreeSet::new();
        for (idx, s) in &status {
            let it = &trace.interactions[*idx];
            if app.is_some_and(|a| it.app_id != a) {
                continue;
            }
            m.interactions_total += 1;
            match s {
                InteractionStatus::Completed => {
                    m.interactions_completed += 1;
                    users_completed.insert(it.user_id);
                }
                InteractionStatus::AbortedMidway => m.interactions_aborted_midway += 1,
                InteractionStatus::BlockedAtHead => m.interactions_blocked_at_head += 1,
                InteractionStatus::Rejected => m.interactions_rejected += 1,
                InteractionStatus::Active | InteractionStatus::Pending => m.interactions_unfinished += 1,
            }
            if !matches!(s, InteractionStatus::Active | InteractionStatus::Pending) {
                users_feedback_int.insert(it.user_id);
            }
        }

        m.users = users.len() as u64;
        m.prompt_throughput = per_sec(m.prompt_tokens, duration_ms);
        m.decode_throughput = per_sec(m.decode_tokens, duration_ms);
        m.ttft_ms = Latency::from_samples(&mut ttft);
        m.delayed_users_pct = if users.is_empty() {
            0.0
        } else {
            100.0 * users_delayed.len() as f64 / users.len() as f64
        };
        m.served_users_pct_requests = pct(users_served_req.len(), users_feedback_req.len());
        m.served_users_pct_interactions = pct(users_completed.len(), users_feedback_int.len());
        m.service_provided_pct_requests = pct(
            m.requests_served as usize,
            (m.requests_served + m.requests_blocked + m.requests_oversize) as usize,
        );
        m.service_provided_pct_interactions = pct(
            m.interactions_completed as usize,
            (m.interactions_completed + m.interactions_aborted_midway) as usize,
        );
        let consumed = m.prompt_tokens + m.decode_tokens;
        m.abuser_token_share = if consumed == 0 {
            0.0
        } else {
            abuser_tokens as f64 / consumed as f64
        };
        let values: Vec<f64> = service.values().copied().collect();
        m.jain_fairness_index = jain_index(&values).ok();
        m
    };

    let mut global = scope(None);
    global.max_backlogged_service_gap = log.max_backlogged_service_gap;
    let per_app = trace.apps.iter().map(|a| (a.app_id, scope(Some(a.app_id)))).collect();

    Ok(RunReport {
        policy: log.policy.clone(),
        duration_ms,
        iterations,
        mean_iteration_ms,
        delay_threshold_ms,
        peak_occupancy: log.peak_occupancy,
        global,
        per_app,
    })
}
