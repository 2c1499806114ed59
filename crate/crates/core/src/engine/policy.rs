use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::workload::{AppId, InteractionId, RequestId, UserId};

/// Scheduler-visible view of a request. The true decode length is withheld.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestMeta {
    pub id: RequestId,
    pub user: UserId,
    pub app: AppId,
    pub interaction: InteractionId,
    /// 1-based position in the interaction chain.
    pub stage: u32,
    pub num_calls: u32,
    pub input_tokens: u32,
    pub system_tokens: u32,
    pub arrival_ms: f64,
    pub head_arrival_ms: f64,
}

impl RequestMeta {
    pub fn prompt_tokens(&self) -> u64 {
        self.input_tokens as u64 + self.system_tokens as u64
    }

    /// Continuation of an interaction whose earlier calls already ran.
    pub fn is_continuation(&self) -> bool {
        self.stage > 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Admission {
    Enqueue,
    Block,
}

/// Engine state exposed to policies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineView {
    pub now_ms: f64,
    pub occupied_tokens: u64,
    pub capacity_tokens: u64,
    pub overload_threshold: f64,
    pub batch_len: usize,
}

impl EngineView {
    pub fn is_overloaded(&self) -> bool {
        self.occupied_tokens as f64 >= self.overload_threshold * self.capacity_tokens as f64
    }
}

/// Admission and selection hooks driven by the engine.
///
/// `select_next` only nominates a request; it stays queued until the engine
/// confirms it with `on_admit`. A nominee that does not fit ends the
/// admission round for the iteration.
pub trait Policy: Send {
    fn name(&self) -> &str;

    fn on_arrival(&mut self, req: &RequestMeta, view: &EngineView) -> Admission;

    fn select_next(&self, view: &EngineView) -> Option<RequestId>;

    fn on_admit(&mut self, id: RequestId);

    fn on_finish(&mut self, req: &RequestMeta, actual_output: u32);

    /// Per-user service counters, for counter-based policies.
    fn service_counters(&self) -> Option<&BTreeMap<UserId, f64>> {
        None
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn on_arrival(&mut self, req: &RequestMeta, view: &EngineView) -> Admission {
        (**self).on_arrival(req, view)
    }
    fn select_next(&self, view: &EngineView) -> Option<RequestId> {
        (**self).select_next(view)
    }
    fn on_admit(&mut self, id: RequestId) {
        (**self).on_admit(id)
    }
    fn on_finish(&mut self, req: &RequestMeta, actual_output: u32) {
        (**self).on_finish(req, actual_output)
    }
    fn service_counters(&self) -> Option<&BTreeMap<UserId, f64>> {
        (**self).service_counters()
    }
}
