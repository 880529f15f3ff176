//! JSON checkpoints that reload to bit-identical evaluations.

use std::path::Path;

use egf_core::transforms::build_family;
use egf_core::{Egf, EgfModel, FamilySpec, InitDensity, Manifold, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "egf-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Terminal density used when sampling from the checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Terminal {
    /// A built-in reward times the factor used during training (RL runs).
    Reward { name: String, scale: f64 },
    /// The flow's own virtual terminal density (IL runs).
    Virtual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub step: usize,
    pub manifold: Manifold,
    pub family_spec: FamilySpec,
    /// Free translation parameters when the family trains them.
    pub translations: Vec<f64>,
    pub model: ModelConfig,
    pub model_seed: u64,
    pub p: usize,
    pub params: Vec<f64>,
    pub init: InitDensity,
    pub terminal: Terminal,
}

impl Checkpoint {
    pub fn capture(egf: &Egf, family_spec: &FamilySpec, step: usize, terminal: Terminal) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            step,
            manifold: egf.manifold(),
            family_spec: family_spec.clone(),
            translations: egf.family.translation_params(),
            model: egf.model.config().clone(),
            model_seed: egf.model.seed(),
            p: egf.p(),
            params: egf.model.params().to_vec(),
            init: egf.init.clone(),
            terminal,
        }
    }

    pub fn restore(&self) -> Result<Egf> {
        let mut family = build_family(self.manifold, &self.family_spec)?;
        family.set_translation_params(&self.translations)?;
        let mut model = EgfModel::zeroed(self.manifold, self.p, self.model.clone(), self.model_seed)?;
        if model.num_params() != self.params.len() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "model expects {} parameters, checkpoint holds {}",
                model.num_params(),
                self.params.len()
            )));
        }
        model.params_mut().copy_from_slice(&self.params);
        Ok(Egf::new(family, model, self.init.clone())?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("checkpoints serialize");
        crate::io::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;
        let format = value.get("format").and_then(|v| v.as_str());
        let version = value.get("version").and_then(|v| v.as_u64());
        if format != Some(CHECKPOINT_FORMAT) || version != Some(CHECKPOINT_VERSION as u64) {
            return Err(Error::IncompatibleCheckpoint(format!(
                "expected {CHECKPOINT_FORMAT} version {CHECKPOINT_VERSION}, found {format:?} version {version:?}"
            )));
        }
        serde_json::from_value(value).map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))
    }
}
