//! Iteration-level continuous-batching engine simulator.
//!
//! Each [`Engine::step`] is one model iteration:
//!
//! 1. arrivals with `time <= clock` are handed to the policy (enqueue or block);
//! 2. the policy nominates queued requests until one does not fit or the
//!    queue runs dry; nominees are prefilled in this iteration;
//! 3. every request in the batch (including the new ones) emits one token;
//! 4. requests that reached their true output length retire, and the next
//!    call of their interaction is scheduled `think_time_ms` later;
//! 5. the clock advances by the iteration cost.
//!
//! When the batch is empty the clock jumps to the next pending arrival.

mod event;
mod kv;
mod policy;
mod timing;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use event::{read_events, write_events, EngineEvent, EventKind};
pub use kv::KvCacheModel;
pub use policy::{Admission, EngineView, Policy, RequestMeta};
pub use timing::TimingModel;

use crate::error::{ConfigError, EngineError};
use crate::workload::{InteractionStatus, RequestId, Trace, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub kv_capacity_tokens: u64,
    pub overload_threshold: f64,
    pub max_batch_size: usize,
    pub timing: TimingModel,
    /// Output reservation used when the app profile has no entry for a stage.
    pub default_output_reserve: u32,
    /// Simulated-time budget. In-flight requests are aborted when it is hit.
    pub horizon_ms: Option<f64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            kv_capacity_tokens: 200_000,
            overload_threshold: 0.9,
            max_batch_size: 256,
            timing: TimingModel::default(),
            default_output_reserve: 128,
            horizon_ms: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.kv_capacity_tokens == 0 {
            return Err(ConfigError::invalid("engine.kv_capacity_tokens", "must be positive"));
        }
        if !(self.overload_threshold > 0.0 && self.overload_threshold <= 1.0) {
            return Err(ConfigError::invalid(
                "engine.overload_threshold",
                "must be in (0, 1]",
            ));
        }
        if self.max_batch_size == 0 {
            return Err(ConfigError::invalid("engine.max_batch_size", "must be positive"));
        }
        if let Some(h) = self.horizon_ms {
            if !(h.is_finite() && h >= 0.0) {
                return Err(ConfigError::invalid("engine.horizon_ms", "must be nonnegative"));
            }
        }
        self.timing.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifecycle {
    Pending,
    Queued,
    Blocked,
    Prefilling,
    Decoding,
    Finished,
    Aborted,
    Rejected,
}

impl Lifecycle {
    pub fn can_transition(self, to: Lifecycle) -> bool {
        use Lifecycle::*;
        matches!(
            (self, to),
            (Pending, Queued | Blocked | Rejected)
                | (Queued, Prefilling)
                | (Prefilling, Decoding)
                | (Decoding, Finished)
        ) || (to == Aborted && !matches!(self, Finished | Aborted))
    }
}

/// A materialized call.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub meta: RequestMeta,
    pub output_tokens_true: u32,
    pub output_reserve: u64,
    pub lifecycle: Lifecycle,
    pub decoded: u32,
    interaction_idx: usize,
}

impl Request {
    fn set(&mut self, to: Lifecycle) {
        debug_assert!(
            self.lifecycle.can_transition(to),
            "illegal transition {:?} -> {to:?}",
            self.lifecycle
        );
        self.lifecycle = to;
    }

    pub fn occupancy(&self) -> u64 {
        self.meta.prompt_tokens() + self.decoded as u64
    }
}

/// Output reservation for a call: the app-stage expected output, rounded up.
pub fn output_reserve(trace: &Trace, meta: &RequestMeta, default_reserve: u32) -> u64 {
    trace
        .app(meta.app)
        .and_then(|p| p.stages.get(meta.stage as usize - 1))
        .map(|s| s.expected_output_tokens.ceil() as u64)
        .unwrap_or(default_reserve as u64)
}

/// Whether `req` can join the batch now.
pub fn can_admit(kv: &KvCacheModel, batch_len: usize, max_batch: usize, req: &Request) -> bool {
    batch_len < max_batch && kv.fits(req.meta.prompt_tokens(), req.output_reserve)
}

/// A request that could never be admitted, or would alone exceed capacity.
pub fn is_oversize(capacity: u64, req: &Request) -> bool {
    req.meta.prompt_tokens() + req.output_reserve.max(req.output_tokens_true as u64) > capacity
}

#[derive(Debug, Clone, Copy)]
struct PendingArrival {
    time: f64,
    seq: u64,
    id: RequestId,
}

impl PartialEq for PendingArrival {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for PendingArrival {}
impl PartialOrd for PendingArrival {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for PendingArrival {
    // min-heap on (time, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.seq.cmp(&self.seq))
    }
}

/// Everything a run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub policy: String,
    pub events: Vec<EngineEvent>,
    pub iterations: u64,
    /// Sum of iteration durations.
    pub busy_ms: f64,
    pub end_ms: f64,
    pub peak_occupancy: u64,
    /// Largest counter spread among users with queued requests, sampled after
    /// every iteration; `None` for policies without counters.
    pub max_backlogged_service_gap: Option<f64>,
    pub interaction_status: Vec<InteractionStatus>,
}

pub struct Engine<'t, P: Policy> {
    trace: &'t Trace,
    cfg: EngineConfig,
    policy: P,
    clock: f64,
    kv: KvCacheModel,
    requests: Vec<Request>,
    pending: BinaryHeap<PendingArrival>,
    seq: u64,
    batch: Vec<RequestId>,
    queued_per_user: BTreeMap<UserId, usize>,
    interaction_status: Vec<InteractionStatus>,
    log: Vec<EngineEvent>,
    iterations: u64,
    busy_ms: f64,
    peak_occupancy: u64,
    max_gap: Option<f64>,
    done: bool,
}

impl<'t, P: Policy> Engine<'t, P> {
    pub fn new(trace: &'t Trace, cfg: EngineConfig, policy: P) -> Result<Self, EngineError> {
        cfg.validate()?;
        let mut engine = Self {
            trace,
            cfg,
            policy,
            clock: 0.0,
            kv: KvCacheModel::new(cfg.kv_capacity_tokens, cfg.overload_threshold),
            requests: Vec::new(),
            pending: BinaryHeap::new(),
            seq: 0,
            batch: Vec::new(),
            queued_per_user: BTreeMap::new(),
            interaction_status: vec![InteractionStatus::Pending; trace.interactions.len()],
            log: Vec::new(),
            iterations: 0,
            busy_ms: 0.0,
            peak_occupancy: 0,
            max_gap: None,
            done: false,
        };
        for idx in 0..trace.interactions.len() {
            let t = trace.interactions[idx].head_arrival_ms;
            engine.schedule_call(idx, 1, t);
        }
        Ok(engine)
    }

    fn schedule_call(&mut self, interaction_idx: usize, stage: u32, arrival_ms: f64) {
        let it = &self.trace.interactions[interaction_idx];
        let call = &it.calls[stage as usize - 1];
        let id = RequestId(self.requests.len() as u64);
        let meta = RequestMeta {
            id,
            user: it.user_id,
            app: it.app_id,
            interaction: it.interaction_id,
            stage,
            num_calls: it.num_calls(),
            input_tokens: call.input_tokens,
            system_tokens: call.system_tokens,
            arrival_ms,
            head_arrival_ms: it.head_arrival_ms,
        };
        let output_reserve = output_reserve(self.trace, &meta, self.cfg.default_output_reserve);
        self.requests.push(Request {
            meta,
            output_tokens_true: call.output_tokens_true,
            output_reserve,
            lifecycle: Lifecycle::Pending,
            decoded: 0,
            interaction_idx,
        });
        self.pending.push(PendingArrival {
            time: arrival_ms,
            seq: self.seq,
            id,
        });
        self.seq += 1;
    }

    pub fn view(&self) -> EngineView {
        EngineView {
            now_ms: self.clock,
            occupied_tokens: self.kv.occupied_tokens,
            capacity_tokens: self.kv.capacity_tokens,
            overload_threshold: self.kv.overload_threshold,
            batch_len: self.batch.len(),
        }
    }

    pub fn clock_ms(&self) -> f64 {
        self.clock
    }

    pub fn kv(&self) -> &KvCacheModel {
        &self.kv
    }

    pub fn policy(&self) -> &P {
        &self.policy
    }

    pub fn batch(&self) -> impl Iterator<Item = &Request> {
        self.batch.iter().map(|id| &self.requests[id.0 as usize])
    }

    pub fn request(&self, id: RequestId) -> Option<&Request> {
        self.requests.get(id.0 as usize)
    }

    pub fn events(&self) -> &[EngineEvent] {
        &self.log
    }

    /// Users that currently have at least one queued request.
    pub fn backlogged_users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.queued_per_user
            .iter()
            .filter(|(_, n)| **n > 0)
            .map(|(u, _)| *u)
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Runs one iteration and returns the events it produced.
    pub fn step(&mut self) -> Result<Vec<EngineEvent>, EngineError> {
        let range = self.step_inner()?;
        Ok(self.log[range].to_vec())
    }

    /// Steps until the trace is exhausted and the batch has drained.
    pub fn run_to_end(mut self) -> Result<RunLog, EngineError> {
        while !self.done {
            self.step_inner()?;
        }
        Ok(self.into_log())
    }

    pub fn into_log(self) -> RunLog {
        RunLog {
            policy: self.policy.name().to_string(),
            events: self.log,
            iterations: self.iterations,
            busy_ms: self.busy_ms,
            end_ms: self.clock,
            peak_occupancy: self.peak_occupancy,
            max_backlogged_service_gap: self.max_gap,
            interaction_status: self.interaction_status,
        }
    }

    fn emit(&mut self, t_ms: f64, kind: EventKind, id: RequestId, tokens: u64) {
        let meta = &self.requests[id.0 as usize].meta;
        self.log.push(EngineEvent {
            t_ms,
            kind,
            request_id: id,
            interaction_id: meta.interaction,
            stage: meta.stage,
            tokens,
            occupancy: self.kv.occupied_tokens,
        });
    }

    fn horizon_hit(&self, t: f64) -> bool {
        self.cfg.horizon_ms.is_some_and(|h| t >= h)
    }

    fn step_inner(&mut self) -> Result<Range<usize>, EngineError> {
        let start = self.log.len();
        if self.done {
            return Ok(start..start);
        }
        if self.horizon_hit(self.clock) {
            self.abort_batch();
            self.done = true;
            return Ok(start..self.log.len());
        }

        self.deliver_arrivals();
        let new_prompt = self.admit()?;

        if self.batch.is_empty() {
            match self.pending.peek() {
                None => self.done = true,
                Some(next) => {
                    self.clock = match self.cfg.horizon_ms {
                        Some(h) if next.time >= h => h.max(self.clock),
                        _ => next.time,
                    };
                }
            }
            return Ok(start..self.log.len());
        }

        let duration = self.cfg.timing.iteration_ms(self.batch.len(), new_prompt);
        let end = self.clock + duration;

        // one token per batch member; prefill produces the first one
        self.kv.grow(self.batch.len() as u64);
        self.peak_occupancy = self.peak_occupancy.max(self.kv.occupied_tokens);
        for i in 0..self.batch.len() {
            let id = self.batch[i];
            let req = &mut self.requests[id.0 as usize];
            req.decoded += 1;
            if req.lifecycle == Lifecycle::Prefilling {
                req.set(Lifecycle::Decoding);
                self.emit(end, EventKind::FirstToken, id, 0);
            }
        }

        let mut still_running = Vec::with_capacity(self.batch.len());
        for id in std::mem::take(&mut self.batch) {
            let req = &self.requests[id.0 as usize];
            if req.decoded < req.output_tokens_true {
                still_running.push(id);
                continue;
            }
            self.retire(id, end);
        }
        self.batch = still_running;

        self.clock = end;
        self.iterations += 1;
        self.busy_ms += duration;
        self.sample_service_gap();
        Ok(start..self.log.len())
    }

    fn deliver_arrivals(&mut self) {
        while let Some(&next) = self.pending.peek() {
            if next.time > self.clock || self.horizon_hit(next.time) {
                break;
            }
            self.pending.pop();
            let id = next.id;
            let idx = id.0 as usize;
            let (meta, interaction_idx) = {
                let r = &self.requests[idx];
                (r.meta, r.interaction_idx)
            };
            if meta.stage == 1 {
                self.interaction_status[interaction_idx] = InteractionStatus::Active;
            }
            self.emit(meta.arrival_ms, EventKind::Arrive, id, 0);

            if is_oversize(self.kv.capacity_tokens, &self.requests[idx]) {
                self.requests[idx].set(Lifecycle::Rejected);
                self.interaction_status[interaction_idx] = InteractionStatus::Rejected;
                self.emit(self.clock, EventKind::Oversize, id, 0);
                continue;
            }

            let view = self.view();
            match self.policy.on_arrival(&meta, &view) {
                Admission::Enqueue => {
                    self.requests[idx].set(Lifecycle::Queued);
                    *self.queued_per_user.entry(meta.user).or_default() += 1;
                    self.emit(self.clock, EventKind::Enqueue, id, 0);
                }
                Admission::Block => {
                    self.requests[idx].set(Lifecycle::Blocked);
                    self.interaction_status[interaction_idx] = if meta.stage == 1 {
                        InteractionStatus::BlockedAtHead
                    } else {
                        InteractionStatus::AbortedMidway
                    };
                    self.emit(self.clock, EventKind::Block, id, 0);
                }
            }
        }
    }

    fn admit(&mut self) -> Result<u64, EngineError> {
        let mut new_prompt = 0;
        while self.batch.len() < self.cfg.max_batch_size {
            let view = self.view();
            let Some(id) = self.policy.select_next(&view) else {
                break;
            };
            let req = self
                .requests
                .get(id.0 as usize)
                .filter(|r| r.lifecycle == Lifecycle::Queued)
                .ok_or(EngineError::ContractViolation(id))?;
            if !can_admit(&self.kv, self.batch.len(), self.cfg.max_batch_size, req) {
                break;
            }
            let (user, prompt) = (req.meta.user, req.meta.prompt_tokens());
            self.policy.on_admit(id);
            self.requests[id.0 as usize].set(Lifecycle::Prefilling);
            if let Some(n) = self.queued_per_user.get_mut(&user) {
                *n -= 1;
            }
            self.kv.grow(prompt);
            self.batch.push(id);
            new_prompt += prompt;
            self.emit(self.clock, EventKind::Admit, id, prompt);
        }
        Ok(new_prompt)
    }

    fn retire(&mut self, id: RequestId, end: f64) {
        let idx = id.0 as usize;
        let occupancy = self.requests[idx].occupancy();
        let decoded = self.requests[idx].decoded;
        self.requests[idx].set(Lifecycle::Finished);
        self.kv.release(occupancy);
        self.emit(end, EventKind::Finish, id, decoded as u64);

        let meta = self.requests[idx].meta;
        let interaction_idx = self.requests[idx].interaction_idx;
        self.policy.on_finish(&meta, decoded);
        if meta.stage < meta.num_calls {
            let think = self.trace.interactions[interaction_idx].think_time_ms;
            self.schedule_call(interaction_idx, meta.stage + 1, end + think);
        } else {
            self.interaction_status[interaction_idx] = InteractionStatus::Completed;
        }
    }

    fn abort_batch(&mut self) {
        for id in std::mem::take(&mut self.batch) {
            let idx = id.0 as usize;
            let occupancy = self.requests[idx].occupancy();
            let decoded = self.requests[idx].decoded;
            self.requests[idx].set(Lifecycle::Aborted);
            self.kv.release(occupancy);
            self.emit(self.clock, EventKind::Abort, id, decoded as u64);
        }
    }

    fn sample_service_gap(&mut self) {
        let Some(counters) = self.policy.service_counters() else {
            return;
        };
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut n = 0;
        for (user, queued) in &self.queued_per_user {
            if *queued == 0 {
                continue;
            }
            let u = counters.get(user).copied().unwrap_or(0.0);
            lo = lo.min(u);
            hi = hi.max(u);
            n += 1;
        }
        let gap = if n >= 2 { hi - lo } else { 0.0 };
        self.max_gap = Some(self.max_gap.unwrap_or(0.0).max(gap));
    }
}

/// Simulates `trace` under `policy` to completion (or the horizon).
pub fn run<P: Policy>(trace: &Trace, policy: P, cfg: EngineConfig) -> Result<RunLog, EngineError> {
    Engine::new(trace, cfg, policy)?.run_to_end()
}
