use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

macro_rules! id_newtype {
    ($(#[$meta:meta])* $name:ident($inner:ty)) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_newtype!(
    /// Tenant (end user) identifier.
    UserId(u32)
);
id_newtype!(
    /// Application identifier.
    AppId(u32)
);
id_newtype!(
    /// One user-facing interaction (a chain of LLM calls).
    InteractionId(u64)
);
id_newtype!(
    /// Engine-assigned sequence number of a materialized call.
    RequestId(u64)
);

/// Per-category token weights used by service accounting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenWeights {
    /// Input-token weight.
    pub alpha: f64,
    /// System-prompt-token weight.
    pub beta: f64,
    /// Output-token weight.
    pub gamma: f64,
}

impl Default for TokenWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 2.0,
            gamma: 1.0,
        }
    }
}

impl TokenWeights {
    /// Weights must be finite and nonnegative, and at least one must be positive.
    /// Zero weights are allowed so a single token category can be charged in isolation.
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, ConfigError> {
        let tw = Self { alpha, beta, gamma };
        tw.validate()?;
        Ok(tw)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let all = [self.alpha, self.beta, self.gamma];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) || all.iter().all(|w| *w == 0.0) {
            return Err(ConfigError::invalid(
                "token_weights",
                format!("weights must be nonnegative with one positive, got {all:?}"),
            ));
        }
        Ok(())
    }

    /// Weighted token mass `alpha*input + beta*system + gamma*output`.
    pub fn mass(&self, input: f64, system: f64, output: f64) -> f64 {
        self.alpha * input + self.beta * system + self.gamma * output
    }
}

/// Expected token counts for one stage of an app's interaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppStageProfile {
    pub expected_input_tokens: f64,
    pub expected_system_tokens: f64,
    pub expected_output_tokens: f64,
}

impl AppStageProfile {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let parts = [
            self.expected_input_tokens,
            self.expected_system_tokens,
            self.expected_output_tokens,
        ];
        if parts.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(ConfigError::invalid(
                "stages",
                format!("expected token counts must be nonnegative, got {parts:?}"),
            ));
        }
        if parts.iter().sum::<f64>() <= 0.0 {
            return Err(ConfigError::invalid(
                "stages",
                "stage expectations must not all be zero",
            ));
        }
        Ok(())
    }
}

/// Shape of the per-call length distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LengthModel {
    /// Log-normal truncated to `[1, 8 * mean]`, location calibrated so the
    /// truncated mean equals the configured mean.
    LogNormal { sigma: f64 },
    /// Every call gets exactly the (rounded) mean.
    Constant,
}

impl Default for LengthModel {
    fn default() -> Self {
        LengthModel::LogNormal { sigma: 0.8 }
    }
}

/// One graph-size bucket of an app's interaction mix.
///
/// Token means are totals per interaction; a sampled interaction with `n`
/// calls draws each call with mean `total / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphBucket {
    pub probability: f64,
    pub min_calls: u32,
    pub max_calls: u32,
    pub mean_input_tokens: f64,
    #[serde(default)]
    pub mean_system_tokens: f64,
    pub mean_output_tokens: f64,
}

impl GraphBucket {
    pub fn single(probability: f64, calls: u32, input: f64, output: f64) -> Self {
        Self {
            probability,
            min_calls: calls,
            max_calls: calls,
            mean_input_tokens: input,
            mean_system_tokens: 0.0,
            mean_output_tokens: output,
        }
    }

    pub fn range(probability: f64, min_calls: u32, max_calls: u32, input: f64, output: f64) -> Self {
        Self {
            probability,
            min_calls,
            max_calls,
            mean_input_tokens: input,
            mean_system_tokens: 0.0,
            mean_output_tokens: output,
        }
    }

    pub fn with_system(mut self, system: f64) -> Self {
        self.mean_system_tokens = system;
        self
    }
}

/// Per-application workload profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppProfile {
    pub app_id: AppId,
    /// Expected tokens for stage `j`, stored at index `j - 1`.
    pub stages: Vec<AppStageProfile>,
    /// Request limit per throttling window for the whole app.
    pub rpm_limit: u32,
    /// Interaction graph-size mix; drives call counts and lengths.
    pub graph_mix: Vec<GraphBucket>,
    pub length_model: LengthModel,
    /// Delay between a call finishing and the next call of the chain arriving.
    pub think_time_ms: f64,
}

impl AppProfile {
    /// Stage profile for 1-based `stage`, falling back to the last profiled stage.
    pub fn stage(&self, stage: u32) -> &AppStageProfile {
        let idx = (stage.max(1) as usize - 1).min(self.stages.len() - 1);
        &self.stages[idx]
    }

    pub fn max_calls(&self) -> u32 {
        self.graph_mix.iter().map(|b| b.max_calls).max().unwrap_or(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Benign,
    Abusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: UserId,
    pub app_id: AppId,
    /// Priority factor applied to every service increment.
    pub priority: f64,
    pub behavior: Behavior,
    /// Mean interaction initiations per second.
    pub request_rate: f64,
}

/// Token counts of one call in an interaction chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallSpec {
    pub stage_index: u32,
    pub input_tokens: u32,
    pub system_tokens: u32,
    /// Ground-truth decode length; schedulers never see it.
    pub output_tokens_true: u32,
}

impl CallSpec {
    pub fn prompt_tokens(&self) -> u64 {
        self.input_tokens as u64 + self.system_tokens as u64
    }
}

/// A linear chain of LLM calls issued for one user query.
///
/// Only the head call's arrival is fixed by the trace; each later call
/// arrives `think_time_ms` after its predecessor finishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub interaction_id: InteractionId,
    pub user_id: UserId,
    pub app_id: AppId,
    pub head_arrival_ms: f64,
    pub think_time_ms: f64,
    pub calls: Vec<CallSpec>,
}

impl Interaction {
    pub fn num_calls(&self) -> u32 {
        self.calls.len() as u32
    }
}

/// Runtime outcome of an interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionStatus {
    /// Head not yet arrived.
    Pending,
    Active,
    Completed,
    /// Some call ran and a later call was throttled.
    AbortedMidway,
    BlockedAtHead,
    /// A call could never fit in the KV cache.
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub seed: u64,
    pub duration_ms: f64,
    pub users: Vec<UserProfile>,
    pub apps: Vec<AppProfile>,
    pub interactions: Vec<Interaction>,
}

impl Trace {
    pub fn app(&self, id: AppId) -> Option<&AppProfile> {
        self.apps.iter().find(|a| a.app_id == id)
    }

    pub fn user(&self, id: UserId) -> Option<&UserProfile> {
        self.users.iter().find(|u| u.user_id == id)
    }

    pub fn total_calls(&self) -> usize {
        self.interactions.iter().map(|i| i.calls.len()).sum()
    }

    /// Checks ordering and referential integrity.
    pub fn validate(&self) -> Result<(), ConfigError> {
        use std::collections::BTreeSet;
        let users: BTreeSet<UserId> = self.users.iter().map(|u| u.user_id).collect();
        let apps: BTreeSet<AppId> = self.apps.iter().map(|a| a.app_id).collect();
        for u in &self.users {
            if !apps.contains(&u.app_id) {
                return Err(ConfigError::invalid(
                    "users",
                    format!("user {} references unknown app {}", u.user_id, u.app_id),
                ));
            }
        }
        for app in &self.apps {
            if app.stages.is_empty() {
                return Err(ConfigError::invalid(
                    "apps",
                    format!("app {} has no stages", app.app_id),
                ));
            }
        }
        let mut prev = f64::NEG_INFINITY;
        for it in &self.interactions {
            if !users.contains(&it.user_id) || !apps.contains(&it.app_id) {
                return Err(ConfigError::invalid(
                    "interactions",
                    format!("interaction {} references unknown user/app", it.interaction_id),
                ));
            }
            if it.head_arrival_ms < prev {
                return Err(ConfigError::invalid(
                    "interactions",
                    format!("interaction {} breaks arrival order", it.interaction_id),
                ));
            }
            prev = it.head_arrival_ms;
            if it.calls.is_empty() {
                return Err(ConfigError::invalid(
                    "interactions",
                    format!("interaction {} has no calls", it.interaction_id),
                ));
            }
            for (k, c) in it.calls.iter().enumerate() {
                if c.stage_index as usize != k + 1 || c.input_tokens < 1 || c.output_tokens_true < 1 {
                    return Err(ConfigError::invalid(
                        "interactions",
                        format!("interaction {} call {} is malformed", it.interaction_id, k + 1),
                    ));
                }
            }
        }
        Ok(())
    }
}
