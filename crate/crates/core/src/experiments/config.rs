//! Experiment configuration: a flat TOML file with sections mirroring the
//! config struct, dotted-key overrides, and strict schema checking
//! (unknown keys are rejected).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{validate_params, DomainError, WalkParams};
use crate::harmonic::{SurrogateConfig, UCacheConfig, VCacheConfig};
use crate::increments::{build_law, IncrementLaw};
use crate::rng::fnv1a64;
use crate::tail::ForcedJumpPolicy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse: {0}")]
    Parse(String),
    #[error("override `{key}`: {msg}")]
    Override { key: String, msg: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("config io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub k: usize,
    pub alpha: f64,
    pub p: f64,
    pub q: f64,
    pub body_cut: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StartSection {
    pub coords: Vec<f64>,
    /// Second starting point for the intercept-consistency comparison.
    pub second: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridsSection {
    /// Horizon grid for the heavy-tail survival curve.
    pub horizons: Vec<u64>,
    /// Horizon grid for the bounded-increment control study.
    pub light_horizons: Vec<u64>,
    /// Launch-height grid for the clearance curve.
    pub r_grid: Vec<f64>,
    /// Decreasing gap-regularization grid.
    pub a_grid: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BudgetsSection {
    pub tail_samples_per_point: u64,
    pub light_tail_samples: u64,
    pub cross_check_samples: u64,
    pub u_series_truncation: u64,
    pub u_series_samples: u64,
    pub kernel_panel_samples: u64,
    pub kernel_panel_states: usize,
    pub chain_samples: u64,
    pub chain_step_cap: u64,
    pub resample_batch: usize,
    pub psi_paths: u64,
    pub theorem2_samples: u64,
    pub limit_paths: usize,
    pub dyson_paths: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ForcedJumpSection {
    pub jump_time_range: u64,
    pub jump_scale_b: f64,
    pub defensive_mix: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SurrogateSection {
    pub v_axes: Vec<f64>,
    pub v_samples_per_node: u64,
    pub far_min_gap: f64,
    pub u_axes: Vec<f64>,
    pub u_samples_per_node: u64,
    pub u_truncation: u64,
    pub anchor_samples: u64,
    pub anchor_truncation: u64,
    pub spot_checks: u64,
}

/// Full experiment configuration; round-trips losslessly through TOML.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// 0 means the hardware default.
    pub workers: usize,
    pub output_dir: Option<PathBuf>,
    pub params: ParamsSection,
    pub start: StartSection,
    pub grids: GridsSection,
    pub budgets: BudgetsSection,
    pub forced_jump: ForcedJumpSection,
    pub surrogate: SurrogateSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            workers: 0,
            output_dir: None,
            params: ParamsSection {
                k: 4,
                alpha: 2.5,
                p: 0.5,
                q: 0.5,
                body_cut: 1.0,
            },
            start: StartSection {
                coords: vec![0.0, 1.0, 2.0, 3.0],
                second: vec![0.0, 0.6, 2.7, 4.5],
            },
            grids: GridsSection {
                horizons: vec![32, 64, 128, 256, 512],
                light_horizons: vec![32, 64, 128, 256],
                r_grid: vec![
                    0.05, 0.1, 0.2, 0.4, 0.7, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0,
                ],
                a_grid: vec![0.02, 0.01, 0.005],
            },
            budgets: BudgetsSection {
                tail_samples_per_point: 10_000_000,
                light_tail_samples: 10_000_000,
                cross_check_samples: 2_000_000,
                u_series_truncation: 256,
                u_series_samples: 400_000,
                kernel_panel_samples: 1_000_000,
                kernel_panel_states: 10,
                chain_samples: 6_000,
                chain_step_cap: 100_000,
                resample_batch: 1024,
                psi_paths: 20_000,
                theorem2_samples: 6_000_000,
                limit_paths: 1_500,
                dyson_paths: 4_000,
            },
            forced_jump: ForcedJumpSection {
                jump_time_range: 8,
                jump_scale_b: 0.5,
                defensive_mix: 0.1,
            },
            surrogate: SurrogateSection {
                v_axes: VCacheConfig::default().axes,
                v_samples_per_node: 80_000,
                far_min_gap: 48.0,
                u_axes: UCacheConfig::default().axes,
                u_samples_per_node: 12_000,
                u_truncation: 768,
                anchor_samples: 250_000,
                anchor_truncation: 1024,
                spot_checks: 5,
            },
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Apply `key.path=value` overrides on the TOML representation, then
    /// re-deserialize (so unknown keys and type errors are caught).
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, ConfigError> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut value: toml::Value =
            toml::from_str(&self.to_toml_string()).expect("round-trip");
        for item in overrides {
            let (key, raw) = item.split_once('=').ok_or_else(|| ConfigError::Override {
                key: item.clone(),
                msg: "expected key.path=value".into(),
            })?;
            let parsed: toml::Value = toml::from_str(&format!("x = {raw}"))
                .map(|v: toml::Value| v["x"].clone())
                .or_else(|_| {
                    toml::from_str(&format!("x = \"{raw}\""))
                        .map(|v: toml::Value| v["x"].clone())
                })
                .map_err(|e| ConfigError::Override {
                    key: key.to_string(),
                    msg: e.to_string(),
                })?;
            let mut node = &mut value;
            let parts: Vec<&str> = key.split('.').collect();
            for part in &parts[..parts.len() - 1] {
                node = node
                    .get_mut(part)
                    .ok_or_else(|| ConfigError::Override {
                        key: key.to_string(),
                        msg: format!("unknown section `{part}`"),
                    })?;
            }
            let leaf = parts.last().unwrap();
            let table = node.as_table_mut().ok_or_else(|| ConfigError::Override {
                key: key.to_string(),
                msg: "not a section".into(),
            })?;
            if !table.contains_key(*leaf) {
                return Err(ConfigError::Override {
                    key: key.to_string(),
                    msg: format!("unknown key `{leaf}`"),
                });
            }
            table.insert(leaf.to_string(), parsed);
        }
        let text = toml::to_string(&value).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::from_toml_str(&text)
    }

    /// Stable hash of the fully resolved configuration.
    pub fn config_hash(&self) -> u64 {
        fnv1a64(self.to_toml_string().as_bytes())
    }

    pub fn walk_params(&self) -> WalkParams {
        WalkParams::new(
            self.params.k,
            self.params.alpha,
            self.params.p,
            self.params.q,
            self.params.body_cut,
        )
    }

    /// Validate the hypothesis window and build the increment law.
    pub fn validated_law(&self) -> Result<IncrementLaw, ConfigError> {
        validate_params(&self.walk_params())?;
        Ok(build_law(
            self.params.alpha,
            self.params.p,
            self.params.q,
            self.params.body_cut,
        )?)
    }

    pub fn forced_jump_policy(&self) -> ForcedJumpPolicy {
        ForcedJumpPolicy {
            jump_time_range: self.forced_jump.jump_time_range,
            jump_scale_b: self.forced_jump.jump_scale_b,
            side_weights: (self.params.p, self.params.q),
            defensive_mix: self.forced_jump.defensive_mix,
        }
    }

    pub fn surrogate_config(&self) -> SurrogateConfig {
        SurrogateConfig {
            v: VCacheConfig {
                axes: self.surrogate.v_axes.clone(),
                samples_per_node: self.surrogate.v_samples_per_node,
                far_min_gap: self.surrogate.far_min_gap,
                stabilize: Default::default(),
                spot_checks: self.surrogate.spot_checks,
            },
            u: UCacheConfig {
                axes: self.surrogate.u_axes.clone(),
                samples_per_node: self.surrogate.u_samples_per_node,
                truncation: self.surrogate.u_truncation,
            },
            anchor_samples: self.surrogate.anchor_samples,
            anchor_truncation: self.surrogate.anchor_truncation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_lossless() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.config_hash(), back.config_hash());
    }

    #[test]
    fn overrides_apply_and_unknown_keys_rejected() {
        let cfg = ExperimentConfig::default();
        let out = cfg
            .with_overrides(&["seed=99".into(), "params.alpha=2.6".into()])
            .unwrap();
        assert_eq!(out.seed, 99);
        assert_eq!(out.params.alpha, 2.6);
        assert!(cfg.with_overrides(&["params.alfa=2.6".into()]).is_err());
        assert!(cfg.with_overrides(&["nonsense=1".into()]).is_err());
        assert!(cfg.with_overrides(&["seed".into()]).is_err());
    }

    #[test]
    fn unknown_toml_keys_rejected() {
        let mut text = ExperimentConfig::default().to_toml_string();
        text.push_str("\n[extra]\nfoo = 1\n");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn validation_rejects_small_k() {
        let mut cfg = ExperimentConfig::default();
        cfg.params.k = 3;
        assert!(cfg.validated_law().is_err());
    }
}
