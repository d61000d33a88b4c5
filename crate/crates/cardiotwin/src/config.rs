use std::path::Path;

use anyhow::Context;
use cardiotwin_core::neural::TrainConfig;
use cardiotwin_core::params::{FixedParams, Interval, LvadParams, ParamBounds};
use cardiotwin_core::pipeline::default_omega_levels;
use cardiotwin_core::solver::SimSettings;
use cardiotwin_core::synthetic::{FinetuneSpec, SamplingMode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

/// Optional replacements for the learnable-parameter box.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsOverrides {
    pub r_m: Option<Interval>,
    pub r_a: Option<Interval>,
    pub e_max: Option<Interval>,
    pub e_min: Option<Interval>,
    pub v_d: Option<Interval>,
    pub t_c: Option<Interval>,
    pub start_v: Option<Interval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretextConfig {
    pub n: usize,
    pub seed: u64,
    pub mode: SamplingMode,
    /// Held-out uniform evaluation set.
    pub eval_n: usize,
    pub eval_seed: u64,
}

impl Default for PretextConfig {
    fn default() -> Self {
        PretextConfig { n: 3840, seed: 7, mode: SamplingMode::Uniform, eval_n: 1000, eval_seed: 1007 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrialConfig {
    pub cohort_size: usize,
    pub cohort_seed: u64,
    pub omega_levels: Vec<f64>,
    /// Fixed pump speed; calibrated over `omega_levels` when absent.
    pub omega: Option<f64>,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig { cohort_size: 100, cohort_seed: 11, omega_levels: default_omega_levels(), omega: None }
    }
}

/// Settings shared by all subcommands. Every field has a default; unknown
/// keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub sim: SimSettings,
    pub bounds: BoundsOverrides,
    pub fixed: FixedParams,
    pub pretext: PretextConfig,
    pub finetune_data: FinetuneSpec,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub trial: TrialConfig,
    pub lvad: LvadParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sim: SimSettings::default(),
            bounds: BoundsOverrides::default(),
            fixed: FixedParams::default(),
            pretext: PretextConfig::default(),
            finetune_data: FinetuneSpec::default(),
            pretrain: TrainConfig { epochs: 300, seed: 21, ..TrainConfig::default() },
            finetune: TrainConfig { epochs: 300, seed: 22, ..TrainConfig::default() },
            trial: TrialConfig::default(),
            lvad: LvadParams::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text)
    }

    /// Defaults when `path` is `None`.
    pub fn load_or_default(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let o = &self.bounds;
        let named = [
            ("r_m", o.r_m),
            ("r_a", o.r_a),
            ("e_max", o.e_max),
            ("e_min", o.e_min),
            ("v_d", o.v_d),
            ("t_c", o.t_c),
            ("start_v", o.start_v),
        ];
        for (name, iv) in named {
            if let Some(iv) = iv {
                if !(iv.lo.is_finite() && iv.hi.is_finite() && iv.lo < iv.hi) {
                    return Err(ConfigError(format!("bounds.{name}: need lo < hi, got [{}, {}]", iv.lo, iv.hi)).into());
                }
            }
        }
        self.sim.validate().map_err(|e| ConfigError(format!("sim: {e}")))?;
        self.pretrain.validate().map_err(|e| ConfigError(format!("pretrain: {e}")))?;
        self.finetune.validate().map_err(|e| ConfigError(format!("finetune: {e}")))?;
        self.lvad.validate().map_err(|e| ConfigError(format!("lvad: {e}")))?;
        Ok(())
    }

    /// Default box with overrides and fixed values applied.
    pub fn param_bounds(&self) -> ParamBounds {
        let d = ParamBounds::default();
        let o = &self.bounds;
        ParamBounds {
            r_m: o.r_m.unwrap_or(d.r_m),
            r_a: o.r_a.unwrap_or(d.r_a),
            e_max: o.e_max.unwrap_or(d.e_max),
            e_min: o.e_min.unwrap_or(d.e_min),
            v_d: o.v_d.unwrap_or(d.v_d),
            t_c: o.t_c.unwrap_or(d.t_c),
            start_v: o.start_v.unwrap_or(d.start_v),
            fixed: self.fixed,
        }
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}
