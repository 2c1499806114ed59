use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::workload::{AppId, UserId};

pub const DEFAULT_WINDOW_MS: u64 = 60_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppLimit {
    pub app_id: AppId,
    pub limit: u32,
}

/// Sliding-window arrival counts per user and per app.
///
/// Entries older than `now - window` are pruned lazily when counted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ThrottleState {
    user_times: BTreeMap<UserId, VecDeque<f64>>,
    app_times: BTreeMap<AppId, VecDeque<f64>>,
}

fn windowed(times: &mut VecDeque<f64>, now: f64, window_ms: u64) -> usize {
    let start = now - window_ms as f64;
    while times.front().is_some_and(|t| *t < start) {
        times.pop_front();
    }
    times.len()
}

impl ThrottleState {
    /// Records one arrival for both the user and the app. Times must be
    /// nondecreasing per key.
    pub fn record(&mut self, user: UserId, app: AppId, at_ms: f64) {
        self.user_times.entry(user).or_default().push_back(at_ms);
        self.app_times.entry(app).or_default().push_back(at_ms);
    }

    /// Arrivals of `user` within `[now - window, now]`.
    pub fn user_count(&mut self, user: UserId, now: f64, window_ms: u64) -> usize {
        self.user_times
            .get_mut(&user)
            .map_or(0, |t| windowed(t, now, window_ms))
    }

    pub fn app_count(&mut self, app: AppId, now: f64, window_ms: u64) -> usize {
        self.app_times
            .get_mut(&app)
            .map_or(0, |t| windowed(t, now, window_ms))
    }
}
