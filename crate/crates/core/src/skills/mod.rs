//! Skill embedding (sequence VAE) and the state-conditioned flow prior.

mod flow;
mod train;
mod vae;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Checkpoint, CheckpointError, Tensor};
use crate::dataset::{NormStats, SKILL_HORIZON};
use crate::env::{EnvAction, ObsVector, OBS_DIM};

pub use flow::{standard_normal_nll, Coupling, Flow};
pub use train::{
    evaluate, fit_flow, joint_train, joint_train_with, skill_gradients, split_held_out, HeldOutReport, SkillGradients, TrainConfig, TrainLog, TrainReport,
};
pub use vae::{kl_closed_form, kl_tape, reparam_sample, SegmentBatch, Vae, VaeTerms, LOG_STD_MAX, LOG_STD_MIN};

pub const SKILL_CHECKPOINT_KIND: &str = "skill-model";

#[derive(Debug, Error)]
pub enum SkillError {
    #[error("segment horizon {found} does not match the model horizon {expected}")]
    Horizon { found: usize, expected: usize },
    #[error("{what}: width {found}, expected {expected}")]
    Dim {
        what: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("flow produced non-finite values at coupling layer {layer}")]
    NonFinite { layer: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("the dataset has no segments")]
    EmptyDataset,
    #[error("non-finite loss at step {step}: embed {embed}, prior {prior}, kl {kl}; batch segments {segments:?}")]
    NonFiniteLoss {
        step: usize,
        embed: f64,
        prior: f64,
        kl: f64,
        segments: Vec<usize>,
    },
    #[error("invalid skill configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Architecture of the skill networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkillConfig {
    pub horizon: usize,
    pub z_dim: usize,
    pub lstm_hidden: usize,
    pub mlp_width: usize,
    pub mlp_layers: usize,
    /// KL weight of the embedding loss.
    pub beta: f64,
    pub flow_layers: usize,
    pub flow_hidden: usize,
    pub flow_hidden_layers: usize,
    pub log_scale_bound: f64,
    pub init_seed: u64,
}

impl Default for SkillConfig {
    fn default() -> Self {
        Self {
            horizon: SKILL_HORIZON,
            z_dim: 4,
            lstm_hidden: 128,
            mlp_width: 128,
            mlp_layers: 3,
            beta: 1e-3,
            flow_layers: 4,
            flow_hidden: 64,
            flow_hidden_layers: 2,
            log_scale_bound: 2.0,
            init_seed: 0,
        }
    }
}

impl SkillConfig {
    pub fn validate(&self) -> Result<(), SkillError> {
        let bad = |m: &str| Err(SkillError::Config(m.into()));
        if self.horizon == 0 {
            return bad("horizon must be >= 1");
        }
        if self.z_dim < 2 || self.z_dim % 2 != 0 {
            return bad("z_dim must be even and >= 2");
        }
        if self.lstm_hidden == 0 || self.mlp_width == 0 || self.flow_hidden == 0 {
            return bad("layer widths must be >= 1");
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad("beta must be finite and >= 0");
        }
        if !(self.log_scale_bound.is_finite() && self.log_scale_bound > 0.0) {
            return bad("log_scale_bound must be positive");
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        crate::codec::sha256_hex(serde_json::to_string(self).expect("config serialises").as_bytes())
    }
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    config: SkillConfig,
    stats: NormStats,
    dataset_hash: String,
}

/// Trained skill embedding plus prior. Read-only once handed to the agent.
#[derive(Clone, Debug, PartialEq)]
pub struct SkillModel {
    pub config: SkillConfig,
    pub vae: Vae,
    pub flow: Flow,
    pub stats: NormStats,
    pub dataset_hash: String,
}

impl SkillModel {
    /// Freshly initialised networks (identity flow).
    pub fn new(config: SkillConfig, stats: NormStats, dataset_hash: impl Into<String>) -> Result<Self, SkillError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let vae = Vae::new(&config, &mut rng);
        let flow = Flow::new(&config, OBS_DIM, &mut rng);
        Ok(Self {
            config,
            vae,
            flow,
            stats,
            dataset_hash: dataset_hash.into(),
        })
    }

    pub fn z_dim(&self) -> usize {
        self.config.z_dim
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    /// Normalised, clipped network input for a raw observation.
    pub fn model_state(&self, obs: &ObsVector) -> ObsVector {
        self.stats.model_input(obs)
    }

    /// `z = f⁻¹(g, s)` for a raw observation.
    pub fn skill_from_prior(&self, g: &[f64], obs: &ObsVector) -> Result<Vec<f64>, SkillError> {
        self.flow.inverse(g, &self.model_state(obs))
    }

    /// Decoded action for skill `z` in raw observation `obs`.
    pub fn decode(&self, z: &[f64], obs: &ObsVector) -> Result<EnvAction, SkillError> {
        self.vae.decode(z, &self.model_state(obs))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(SKILL_CHECKPOINT_KIND, self.config.hash());
        ck.meta = serde_json::to_string(&ModelMeta {
            config: self.config.clone(),
            stats: self.stats.clone(),
            dataset_hash: self.dataset_hash.clone(),
        })
        .expect("meta serialises");
        ck.put_params("vae", &self.vae.params);
        ck.put_params("flow", &self.flow.params);
        ck.put("stats/mean", Tensor::row(&self.stats.mean));
        ck.put("stats/std", Tensor::row(&self.stats.std));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, SkillError> {
        ck.expect_kind(SKILL_CHECKPOINT_KIND)?;
        let meta: ModelMeta =
            serde_json::from_str(&ck.meta).map_err(|e| CheckpointError::Meta(format!("skill model: {e}")))?;
        if meta.config.hash() != ck.config_hash {
            return Err(CheckpointError::Meta("config hash does not match the stored configuration".into()).into());
        }
        let mut model = Self::new(meta.config, meta.stats, meta.dataset_hash)?;
        ck.load_params("vae", &mut model.vae.params)?;
        ck.load_params("flow", &mut model.flow.params)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), SkillError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, SkillError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// SHA-256 of the serialised checkpoint.
    pub fn content_hash(&self) -> String {
        self.to_checkpoint().content_hash()
    }
}
