//! Hierarchical agent: a high-level policy choosing skills every `H` steps,
//! the frozen skill decoder, and a gated residual correcting each action.

mod policy;
mod ppo;
mod rollout;
mod trainer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, CheckpointError};
use crate::env::EnvError;
use crate::skills::SkillError;

pub use policy::{GaussianPolicy, PolicySpec, Sample, LOG_STD_MAX, LOG_STD_MIN};
pub use ppo::{gae, PpoConfig, PpoLearner, PpoStats, Transition};
pub use rollout::{compose_action, Agent, EpisodeBuffers, EpisodeOutcome, StepTrace};
pub use trainer::{
    evaluate_policy, wilson_interval, EpisodeRow, EvalReport, IterationReport, RlConfig, TrainState, Trainer,
    AGENT_CHECKPOINT_KIND,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("unknown agent mode `{0}` (expected reskill, no-prior, no-residual or ppo-scratch)")]
    UnknownMode(String),
    #[error("mode {0} needs a trained skill model")]
    MissingModel(AgentMode),
    #[error("skill model horizon {model} does not match the agent horizon {agent}")]
    Horizon { model: usize, agent: usize },
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error("non-finite values: {0}")]
    NonFinite(String),
    #[error("checkpoint does not match this run: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Skill(#[from] SkillError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentMode {
    /// Flow prior plus gated residual.
    Reskill,
    /// High-level policy emits `z` directly; the flow is bypassed.
    NoPrior,
    /// Residual disabled (`δa ≡ 0`).
    NoResidual,
    /// Flat PPO on atomic actions; no skill model.
    PpoScratch,
}

impl AgentMode {
    pub const ALL: [AgentMode; 4] = [
        AgentMode::Reskill,
        AgentMode::NoPrior,
        AgentMode::NoResidual,
        AgentMode::PpoScratch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentMode::Reskill => "reskill",
            AgentMode::NoPrior => "no-prior",
            AgentMode::NoResidual => "no-residual",
            AgentMode::PpoScratch => "ppo-scratch",
        }
    }

    pub fn uses_skills(self) -> bool {
        self != AgentMode::PpoScratch
    }

    pub fn uses_prior(self) -> bool {
        matches!(self, AgentMode::Reskill | AgentMode::NoResidual)
    }

    pub fn uses_residual(self) -> bool {
        matches!(self, AgentMode::Reskill | AgentMode::NoPrior)
    }
}

impl fmt::Display for AgentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentMode {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| AgentError::UnknownMode(s.to_string()))
    }
}

/// Residual weight over training: off for the first `warmup` steps, then
/// logistic in the step count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateSchedule {
    pub k: f64,
    pub centre: f64,
    pub warmup: u64,
    pub hard_off: bool,
}

impl Default for GateSchedule {
    fn default() -> Self {
        Self {
            k: 0.0012,
            centre: 7500.0,
            warmup: 5000,
            hard_off: true,
        }
    }
}

impl GateSchedule {
    pub fn logistic(&self, x: f64) -> f64 {
        1.0 / (1.0 + (-self.k * (x - self.centre)).exp())
    }

    pub fn weight(&self, step: u64) -> f64 {
        if self.hard_off && step < self.warmup {
            0.0
        } else {
            self.logistic(step as f64)
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if !(self.k.is_finite() && self.k > 0.0 && self.centre.is_finite()) {
            return Err(AgentError::Config("gate needs a positive finite k and finite centre".into()));
        }
        Ok(())
    }
}
