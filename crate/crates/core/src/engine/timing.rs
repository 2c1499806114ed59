use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Iteration cost model: a fixed overhead, a per-request decode cost, and a
/// per-token prefill cost for prompts admitted in the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingModel {
    pub iter_base_ms: f64,
    pub decode_ms_per_request: f64,
    pub prefill_ms_per_token: f64,
}

impl Default for TimingModel {
    fn default() -> Self {
        Self {
            iter_base_ms: 2.0,
            decode_ms_per_request: 0.5,
            prefill_ms_per_token: 0.01,
        }
    }
}

impl TimingModel {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let parts = [
            self.iter_base_ms,
            self.decode_ms_per_request,
            self.prefill_ms_per_token,
        ];
        if parts.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(ConfigError::invalid("timing", "costs must be nonnegative"));
        }
        if self.iter_base_ms + self.decode_ms_per_request <= 0.0 {
            return Err(ConfigError::invalid(
                "timing",
                "iter_base_ms + decode_ms_per_request must be positive",
            ));
        }
        Ok(())
    }

    pub fn iteration_ms(&self, batch_len: usize, new_prompt_tokens: u64) -> f64 {
        self.iter_base_ms
            + self.decode_ms_per_request * batch_len as f64
            + self.prefill_ms_per_token * new_prompt_tokens as f64
    }
}
