//! JSON run configuration with dotted-path overrides.

use std::path::{Path, PathBuf};

use egf_core::eval::NllMode;
use egf_core::losses::LossConfig;
use egf_core::training::{EvalConfig, LossKind, TrainConfig, TrainDistribution};
use egf_core::{FamilySpec, InitDensity, Manifold, ModelConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Defaults to the manifold of the family preset.
    #[serde(default)]
    pub manifold: Option<Manifold>,
    #[serde(default)]
    pub family_spec: FamilySpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub init: InitDensity,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub loss: LossKind,
    pub distribution: TrainDistribution,
    pub steps: usize,
    pub batch: usize,
    /// Trajectories per replay-buffer side.
    #[serde(rename = "B")]
    pub buffer: usize,
    pub refill_every: usize,
    pub t_max: usize,
    pub weight_floor: f64,
    pub lr0: f64,
    pub lr_min: f64,
    pub decay_steps: usize,
    pub weight_decay: f64,
    pub translation_lr: f64,
    pub grad_clip: f64,
    /// Weak-FM coefficient.
    pub b: f64,
    pub ce_coeff: f64,
    pub reg_coeff: f64,
    pub weakfm_exponent: u32,
    pub q: u32,
    pub eps_log: f64,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let l = LossConfig::default();
        TrainSection {
            loss: t.loss,
            distribution: t.distribution,
            steps: t.steps,
            batch: t.batch,
            buffer: t.buffer,
            refill_every: t.refill_every,
            t_max: t.t_max,
            weight_floor: t.weight_floor,
            lr0: t.lr0,
            lr_min: t.lr_min,
            decay_steps: t.decay_steps,
            weight_decay: t.weight_decay,
            translation_lr: t.translation_lr,
            grad_clip: t.grad_clip,
            b: l.weakfm_coeff,
            ce_coeff: l.ce_coeff,
            reg_coeff: l.reg_coeff,
            weakfm_exponent: l.weakfm_exponent,
            q: l.q,
            eps_log: l.eps_log,
            seed: t.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// `toy:<name>`, `volcano-like`, `checkerboard` (RL reward), or a CSV path.
    pub source: String,
    /// Sample count for generated sources.
    pub n: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub lat_col: String,
    pub lon_col: String,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: String::from("toy:checkerboard"),
            n: 100_000,
            seed: 0,
            val_fraction: 0.1,
            lat_col: String::from("lat"),
            lon_col: String::from("lon"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Quadrature resolution for NLL and `∫ f̂_term` (torus cells per side; sphere `grid²` cells).
    pub grid: usize,
    pub tv_grid: usize,
    /// Multipliers for `filter-scan`; JSON has no infinity, so `null` stands for the no-op filter.
    pub k_grid: Vec<Option<f64>>,
    pub nll_mode: NllMode,
    pub every: usize,
    pub n_mc: usize,
    pub n_chains: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        EvalSection {
            grid: e.grid,
            tv_grid: e.tv_grid,
            k_grid: vec![Some(0.0), Some(0.5), Some(1.0), Some(2.0), None],
            nll_mode: e.nll_mode,
            every: e.every,
            n_mc: e.n_mc,
            n_chains: e.n_chains,
        }
    }
}

impl EvalSection {
    pub fn k_values(&self) -> Vec<f64> {
        self.k_grid.iter().map(|k| k.unwrap_or(f64::INFINITY)).collect()
    }
}

impl RunConfig {
    /// Reads `path`, applies `key.path=value` overrides and validates the result.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, overrides)
    }

    pub fn from_json(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text).map_err(|e| Error::ConfigSchema(e.to_string()))?;
        for (key, raw) in overrides {
            apply_override(&mut value, key, raw)?;
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::ConfigSchema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let (Some(m), Some(p)) = (self.manifold, self.family_spec.preset) {
            if p.manifold() != m {
                return Err(Error::ConfigSchema(format!("preset {p} does not live on the configured manifold")));
            }
        }
        if self.eval.grid == 0 || self.eval.tv_grid == 0 || self.eval.k_grid.is_empty() {
            return Err(Error::ConfigSchema(String::from("eval.grid, eval.tv_grid and eval.k_grid must be nonempty")));
        }
        if !(0.0..1.0).contains(&self.data.val_fraction) {
            return Err(Error::ConfigSchema(String::from("data.val_fraction must lie in [0, 1)")));
        }
        self.train_config().validate().map_err(|e| Error::ConfigSchema(e.to_string()))
    }

    pub fn resolved_manifold(&self) -> Result<Manifold> {
        match (self.manifold, self.family_spec.preset) {
            (Some(m), _) => Ok(m),
            (None, Some(p)) => Ok(p.manifold()),
            (None, None) => Err(Error::ConfigSchema(String::from("manifold is required without a family preset"))),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            steps: t.steps,
            loss: t.loss,
            distribution: t.distribution,
            batch: t.batch,
            buffer: t.buffer,
            refill_every: t.refill_every,
            t_max: t.t_max,
            weight_floor: t.weight_floor,
            lr0: t.lr0,
            lr_min: t.lr_min,
            decay_steps: t.decay_steps,
            weight_decay: t.weight_decay,
            translation_lr: t.translation_lr,
            grad_clip: t.grad_clip,
            losses: LossConfig {
                q: t.q,
                weakfm_coeff: t.b,
                ce_coeff: t.ce_coeff,
                reg_coeff: t.reg_coeff,
                weakfm_exponent: t.weakfm_exponent,
                eps_log: t.eps_log,
            },
            eval: EvalConfig {
                every: self.eval.every,
                n_mc: self.eval.n_mc,
                n_chains: self.eval.n_chains,
                grid: self.eval.grid,
                tv_grid: self.eval.tv_grid,
                nll_mode: self.eval.nll_mode,
            },
            seed: t.seed,
        }
    }
}

/// Sets `key` (dotted path) to `raw`, parsed as JSON when possible and as a string otherwise.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::ConfigSchema(format!("malformed override key {key:?}")));
    }
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::ConfigSchema(format!("override {key:?} descends into a non-object")))?;
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::ConfigSchema(format!("override {key:?} descends into a non-object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}
