use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::types::{AppId, AppProfile, AppStageProfile, GraphBucket, LengthModel};
use crate::error::ConfigError;

/// Generator-side description of one application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppConfig {
    pub app_id: AppId,
    pub rpm_limit: u32,
    pub graph_mix: Vec<GraphBucket>,
    #[serde(default)]
    pub length_model: LengthModel,
    #[serde(default)]
    pub think_time_ms: f64,
    /// Explicit per-stage expectations. When absent they are derived from
    /// `graph_mix` by splitting each bucket's totals evenly across its calls.
    #[serde(default)]
    pub stages: Option<Vec<AppStageProfile>>,
}

/// Validates app configs and derives their stage expectations.
pub fn build_app_profiles(apps: &[AppConfig]) -> Result<Vec<AppProfile>, ConfigError> {
    if apps.is_empty() {
        return Err(ConfigError::invalid("apps", "at least one app is required"));
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(apps.len());
    for cfg in apps {
        if !seen.insert(cfg.app_id) {
            return Err(ConfigError::invalid(
                "apps",
                format!("duplicate app id {}", cfg.app_id),
            ));
        }
        validate_app(cfg)?;
        let stages = match &cfg.stages {
            Some(stages) => {
                if stages.is_empty() {
                    return Err(ConfigError::invalid(
                        "stages",
                        format!("app {} has an empty stage list", cfg.app_id),
                    ));
                }
                for s in stages {
                    s.validate()?;
                }
                stages.clone()
            }
            None => derive_stages(&cfg.graph_mix),
        };
        out.push(AppProfile {
            app_id: cfg.app_id,
            stages,
            rpm_limit: cfg.rpm_limit,
            graph_mix: cfg.graph_mix.clone(),
            length_model: cfg.length_model,
            think_time_ms: cfg.think_time_ms,
        });
    }
    Ok(out)
}

fn validate_app(cfg: &AppConfig) -> Result<(), ConfigError> {
    let app = cfg.app_id;
    if cfg.rpm_limit == 0 {
        return Err(ConfigError::invalid("rpm_limit", format!("app {app}: must be >= 1")));
    }
    if !(cfg.think_time_ms.is_finite() && cfg.think_time_ms >= 0.0) {
        return Err(ConfigError::invalid(
            "think_time_ms",
            format!("app {app}: must be nonnegative"),
        ));
    }
    if let LengthModel::LogNormal { sigma } = cfg.length_model {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(ConfigError::invalid(
                "length_model.sigma",
                format!("app {app}: sigma must be positive"),
            ));
        }
    }
    if cfg.graph_mix.is_empty() {
        return Err(ConfigError::invalid(
            "graph_mix",
            format!("app {app}: at least one graph bucket is required"),
        ));
    }
    let mut total_p = 0.0;
    for b in &cfg.graph_mix {
        if !(b.probability.is_finite() && b.probability >= 0.0) {
            return Err(ConfigError::invalid(
                "graph_mix.probability",
                format!("app {app}: probability must be nonnegative"),
            ));
        }
        total_p += b.probability;
        if b.min_calls == 0 || b.max_calls < b.min_calls {
            return Err(ConfigError::invalid(
                "graph_mix.calls",
                format!("app {app}: need 1 <= min_calls <= max_calls"),
            ));
        }
        if !(b.mean_input_tokens.is_finite() && b.mean_input_tokens > 0.0) {
            return Err(ConfigError::invalid(
                "graph_mix.mean_input_tokens",
                format!("app {app}: mean must be positive"),
            ));
        }
        if !(b.mean_output_tokens.is_finite() && b.mean_output_tokens > 0.0) {
            return Err(ConfigError::invalid(
                "graph_mix.mean_output_tokens",
                format!("app {app}: mean must be positive"),
            ));
        }
        if !(b.mean_system_tokens.is_finite() && b.mean_system_tokens >= 0.0) {
            return Err(ConfigError::invalid(
                "graph_mix.mean_system_tokens",
                format!("app {app}: mean must be nonnegative"),
            ));
        }
    }
    if total_p <= 0.0 {
        return Err(ConfigError::invalid(
            "graph_mix.probability",
            format!("app {app}: probabilities sum to zero"),
        ));
    }
    Ok(())
}

/// Per-stage expectation of each token category, conditioned on the
/// interaction reaching that stage.
fn derive_stages(mix: &[GraphBucket]) -> Vec<AppStageProfile> {
    let total_p: f64 = mix.iter().map(|b| b.probability).sum();
    let max_calls = mix.iter().map(|b| b.max_calls).max().unwrap_or(1);
    (1..=max_calls)
        .map(|stage| {
            let mut reach = 0.0;
            let mut sums = [0.0f64; 3];
            for b in mix {
                let per_n = b.probability / total_p / f64::from(b.max_calls - b.min_calls + 1);
                for n in b.min_calls.max(stage)..=b.max_calls {
                    let n = f64::from(n);
                    reach += per_n;
                    sums[0] += per_n * b.mean_input_tokens / n;
                    sums[1] += per_n * b.mean_system_tokens / n;
                    sums[2] += per_n * b.mean_output_tokens / n;
                }
            }
            AppStageProfile {
                expected_input_tokens: sums[0] / reach,
                expected_system_tokens: sums[1] / reach,
                expected_output_tokens: sums[2] / reach,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mix: Vec<GraphBucket>) -> AppConfig {
        AppConfig {
            app_id: AppId(0),
            rpm_limit: 10,
            graph_mix: mix,
            length_model: LengthModel::default(),
            think_time_ms: 0.0,
            stages: None,
        }
    }

    #[test]
    fn single_call_bucket_keeps_table_means() {
        let p = build_app_profiles(&[cfg(vec![GraphBucket::single(1.0, 1, 4994.65, 136.86)])]).unwrap();
        assert_eq!(p[0].stages.len(), 1);
        assert_eq!(p[0].stages[0].expected_input_tokens, 4994.65);
        assert_eq!(p[0].stages[0].expected_output_tokens, 136.86);
        assert_eq!(p[0].stages[0].expected_system_tokens, 0.0);
    }

    #[test]
    fn zero_expectations_are_rejected() {
        let mut c = cfg(vec![GraphBucket::single(1.0, 1, 1.0, 1.0)]);
        c.stages = Some(vec![AppStageProfile {
            expected_input_tokens: 0.0,
            expected_system_tokens: 0.0,
            expected_output_tokens: 0.0,
        }]);
        assert!(build_app_profiles(&[c]).is_err());

        let zero_mean = cfg(vec![GraphBucket::single(1.0, 1, 0.0, 0.0)]);
        let err = build_app_profiles(&[zero_mean]).unwrap_err();
        assert_eq!(err.field, "graph_mix.mean_input_tokens");
    }

    #[test]
    fn empty_stage_list_and_mix_are_rejected() {
        let mut c = cfg(vec![GraphBucket::single(1.0, 1, 10.0, 10.0)]);
        c.stages = Some(vec![]);
        assert!(build_app_profiles(&[c]).is_err());
        assert!(build_app_profiles(&[cfg(vec![])]).is_err());
    }

    #[test]
    fn multi_call_bucket_derives_one_stage_per_call() {
        let p = build_app_profiles(&[cfg(vec![GraphBucket::range(1.0, 2, 10, 21352.13, 241.19)])]).unwrap();
        assert_eq!(p[0].stages.len(), 10);
        // stage 10 is reached only by n = 10 interactions
        assert!((p[0].stages[9].expected_input_tokens - 2135.213).abs() < 1e-9);
        // stages 1 and 2 are reached by every interaction: mean of 1/n over n = 2..=10
        let h: f64 = (2..=10).map(|n| 1.0 / n as f64).sum::<f64>() / 9.0;
        assert!((p[0].stages[0].expected_input_tokens - 21352.13 * h).abs() < 1e-6);
        assert_eq!(p[0].stages[0], p[0].stages[1]);
    }

    #[test]
    fn stage_lookup_falls_back_to_last() {
        let p = build_app_profiles(&[cfg(vec![GraphBucket::range(1.0, 1, 5, 100.0, 10.0)])]).unwrap();
        assert_eq!(p[0].stage(7), &p[0].stages[4]);
    }
}
