//! Synthetic trace generation.
//!
//! Each user issues interactions as a Poisson process. An interaction picks a
//! graph-size bucket from its app's mix, a call count uniformly inside the
//! bucket, and per-call token counts whose means split the bucket totals evenly
//! across calls.

use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, LogNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::types::{
    AppId, AppProfile, Behavior, CallSpec, GraphBucket, Interaction, InteractionId, LengthModel,
    Trace, UserId, UserProfile,
};
use crate::error::ConfigError;

/// Upper truncation point of length distributions, as a multiple of the mean.
pub const TRUNCATION_FACTOR: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserGroup {
    pub app_id: AppId,
    pub users: u32,
    /// Benign interaction rate per user, per second.
    pub rate_per_s: f64,
    #[serde(default = "default_priority")]
    pub priority: f64,
}

fn default_priority() -> f64 {
    1.0
}

fn default_multiplier() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub groups: Vec<UserGroup>,
    /// Fraction of each group that behaves abusively, in `[0, 1)`.
    #[serde(default)]
    pub abusive_fraction: f64,
    /// Rate inflation applied to abusive users; at least 10.
    #[serde(default = "default_multiplier")]
    pub abusive_multiplier: f64,
}

impl PopulationConfig {
    pub fn validate(&self, profiles: &[AppProfile]) -> Result<(), ConfigError> {
        if self.groups.iter().map(|g| g.users as u64).sum::<u64>() == 0 {
            return Err(ConfigError::invalid("population.groups", "zero users"));
        }
        if !(self.abusive_fraction >= 0.0 && self.abusive_fraction < 1.0) {
            return Err(ConfigError::invalid(
                "population.abusive_fraction",
                format!("must be in [0, 1), got {}", self.abusive_fraction),
            ));
        }
        if !(self.abusive_multiplier.is_finite() && self.abusive_multiplier >= 10.0) {
            return Err(ConfigError::invalid(
                "population.abusive_multiplier",
                format!("must be >= 10, got {}", self.abusive_multiplier),
            ));
        }
        for g in &self.groups {
            if !profiles.iter().any(|p| p.app_id == g.app_id) {
                return Err(ConfigError::invalid(
                    "population.groups.app_id",
                    format!("unknown app {}", g.app_id),
                ));
            }
            if !(g.rate_per_s.is_finite() && g.rate_per_s > 0.0) {
                return Err(ConfigError::invalid(
                    "population.groups.rate_per_s",
                    format!("must be positive, got {}", g.rate_per_s),
                ));
            }
            if !(g.priority.is_finite() && g.priority > 0.0) {
                return Err(ConfigError::invalid(
                    "population.groups.priority",
                    format!("must be positive, got {}", g.priority),
                ));
            }
        }
        Ok(())
    }
}

/// Generates a trace. Pure function of its arguments.
pub fn generate_trace(
    profiles: &[AppProfile],
    population: &PopulationConfig,
    seed: u64,
    duration_ms: f64,
) -> Result<Trace, ConfigError> {
    if !(duration_ms.is_finite() && duration_ms > 0.0) {
        return Err(ConfigError::invalid("duration_ms", "must be positive"));
    }
    population.validate(profiles)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut users = Vec::new();
    for g in &population.groups {
        let n_abusive = (population.abusive_fraction * g.users as f64).round() as usize;
        let mut abusive = vec![false; g.users as usize];
        for i in sample(&mut rng, g.users as usize, n_abusive.min(g.users as usize)) {
            abusive[i] = true;
        }
        for is_abusive in abusive {
            let (behavior, rate) = if is_abusive {
                (Behavior::Abusive, g.rate_per_s * population.abusive_multiplier)
            } else {
                (Behavior::Benign, g.rate_per_s)
            };
            users.push(UserProfile {
                user_id: UserId(users.len() as u32),
                app_id: g.app_id,
                priority: g.priority,
                behavior,
                request_rate: rate,
            });
        }
    }

    let mut sampler = CallSampler::default();
    let mut mixes = HashMap::new();
    for p in profiles {
        let w = WeightedIndex::new(p.graph_mix.iter().map(|b| b.probability))
            .map_err(|e| ConfigError::invalid("graph_mix.probability", e.to_string()))?;
        mixes.insert(p.app_id, w);
    }

    // (arrival, user, per-user ordinal) keeps the sort total and deterministic
    let mut drafts: Vec<(f64, UserId, u32, Interaction)> = Vec::new();
    for user in &users {
        let profile = profiles
            .iter()
            .find(|p| p.app_id == user.app_id)
            .expect("validated above");
        let gap = Exp::new(user.request_rate / 1000.0).expect("rate validated positive");
        let mut t = 0.0;
        let mut ordinal = 0;
        loop {
            t += gap.sample(&mut rng);
            if t >= duration_ms {
                break;
            }
            let bucket = &profile.graph_mix[mixes[&profile.app_id].sample(&mut rng)];
            let calls = sampler.sample_calls(&mut rng, bucket, profile.length_model);
            drafts.push((
                t,
                user.user_id,
                ordinal,
                Interaction {
                    interaction_id: InteractionId(0),
                    user_id: user.user_id,
                    app_id: user.app_id,
                    head_arrival_ms: t,
                    think_time_ms: profile.think_time_ms,
                    calls,
                },
            ));
            ordinal += 1;
        }
    }
    drafts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let interactions = drafts
        .into_iter()
        .enumerate()
        .map(|(i, (_, _, _, mut it))| {
            it.interaction_id = InteractionId(i as u64);
            it
        })
        .collect();

    Ok(Trace {
        seed,
        duration_ms,
        users,
        apps: profiles.to_vec(),
        interactions,
    })
}

/// Samples per-call token counts, caching the log-normal calibration per mean.
#[derive(Default)]
pub struct CallSampler {
    locations: HashMap<(u64, u64), f64>,
}

impl CallSampler {
    pub fn sample_calls<R: Rng>(
        &mut self,
        rng: &mut R,
        bucket: &GraphBucket,
        model: LengthModel,
    ) -> Vec<CallSpec> {
        let n = rng.random_range(bucket.min_calls..=bucket.max_calls);
        let nf = f64::from(n);
        (1..=n)
            .map(|stage| CallSpec {
                stage_index: stage,
                input_tokens: self.sample_len(rng, bucket.mean_input_tokens / nf, model),
                system_tokens: if bucket.mean_system_tokens > 0.0 {
                    self.sample_len(rng, bucket.mean_system_tokens / nf, model)
                } else {
                    0
                },
                output_tokens_true: self.sample_len(rng, bucket.mean_output_tokens / nf, model),
            })
            .collect()
    }

    /// Draws a length with the given mean, at least 1 and at most `8 * mean`.
    pub fn sample_len<R: Rng>(&mut self, rng: &mut R, mean: f64, model: LengthModel) -> u32 {
        if mean <= 1.0 {
            return 1;
        }
        let hi = TRUNCATION_FACTOR * mean;
        match model {
            LengthModel::Constant => mean.round().max(1.0) as u32,
            LengthModel::LogNormal { sigma } => {
                let key = (mean.to_bits(), sigma.to_bits());
                let loc = *self
                    .locations
                    .entry(key)
                    .or_insert_with(|| calibrate_location(mean, sigma, 1.0, hi));
                let dist = LogNormal::new(loc, sigma).expect("sigma validated positive");
                loop {
                    let x = dist.sample(rng);
                    if (1.0..=hi).contains(&x) {
                        return x.round().clamp(1.0, hi.ceil()) as u32;
                    }
                }
            }
        }
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Mean of `LogNormal(loc, sigma)` conditioned on `[lo, hi]`.
pub fn truncated_lognormal_mean(loc: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    let (a, b) = (lo.ln(), hi.ln());
    let mass = std_normal_cdf((b - loc) / sigma) - std_normal_cdf((a - loc) / sigma);
    if mass < 1e-300 {
        return if loc < a { lo } else { hi };
    }
    let shifted = std_normal_cdf((b - loc - sigma * sigma) / sigma)
        - std_normal_cdf((a - loc - sigma * sigma) / sigma);
    ((loc + 0.5 * sigma * sigma).exp() * shifted / mass).clamp(lo, hi)
}

/// Finds the log-location whose truncated mean equals `mean`.
fn calibrate_location(mean: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    let mut a = lo.ln() - 12.0 * sigma - sigma * sigma;
    let mut b = hi.ln() + 12.0 * sigma;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if truncated_lognormal_mean(mid, sigma, lo, hi) < mean {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}
