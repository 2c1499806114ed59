use serde::{Deserialize, Serialize};

/// Token-granular KV cache occupancy.
///
/// Occupancy of an active request is its prompt plus the tokens decoded so
/// far. Admission reserves room for the expected output, but decode growth is
/// never refused (there is no preemption), so `occupied_tokens` can exceed
/// `capacity_tokens` when a request outgrows its reservation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KvCacheModel {
    pub capacity_tokens: u64,
    pub occupied_tokens: u64,
    pub overload_threshold: f64,
}

impl KvCacheModel {
    pub fn new(capacity_tokens: u64, overload_threshold: f64) -> Self {
        Self {
            capacity_tokens,
            occupied_tokens: 0,
            overload_threshold,
        }
    }

    pub fn free_tokens(&self) -> u64 {
        self.capacity_tokens.saturating_sub(self.occupied_tokens)
    }

    /// `occupied + prompt + reserve <= capacity`.
    pub fn fits(&self, prompt_tokens: u64, output_reserve: u64) -> bool {
        self.occupied_tokens + prompt_tokens + output_reserve <= self.capacity_tokens
    }

    /// Occupancy at or above `overload_threshold * capacity`.
    pub fn is_overloaded(&self) -> bool {
        self.occupied_tokens as f64 >= self.overload_threshold * self.capacity_tokens as f64
    }

    pub fn utilization(&self) -> f64 {
        self.occupied_tokens as f64 / self.capacity_tokens as f64
    }

    pub(crate) fn grow(&mut self, tokens: u64) {
        self.occupied_tokens += tokens;
    }

    pub(crate) fn release(&mut self, tokens: u64) {
        debug_assert!(tokens <= self.occupied_tokens);
        self.occupied_tokens -= tokens;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reservation_arithmetic() {
        let mut kv = KvCacheModel::new(1000, 0.9);
        kv.grow(900);
        // 900 + 50 + 60 = 1010 > 1000
        assert!(!kv.fits(50, 60));
        assert!(kv.fits(50, 50));
        assert_eq!(kv.free_tokens(), 100);
    }

    #[test]
    fn overload_flag_at_threshold() {
        let mut kv = KvCacheModel::new(1000, 0.9);
        kv.grow(899);
        assert!(!kv.is_overloaded());
        kv.grow(1);
        assert!(kv.is_overloaded());
    }
}
