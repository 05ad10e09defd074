//! Experiment orchestration: the commands behind the CLI, the run manifest,
//! the exploration and latent-coverage diagnostics, and SVG learning curves.

mod commands;
mod config;
mod explore;
mod manifest;
mod plot;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::agent::{AgentError, AgentMode};
use crate::autodiff::CheckpointError;
use crate::dataset::DatasetError;
use crate::env::{EnvError, TaskId};
use crate::skills::SkillError;

pub use commands::{
    cmd_collect, cmd_eval, cmd_train_rl, cmd_train_skills, read_metrics, run_recorded, run_rl_job, CollectOutcome, EvalPolicy,
    RlJob, RlOutcome, SkillOutcome,
};
pub use config::{
    ExperimentConfig, ExploreConfig, LatentConfig, PlotConfig, RunConfig, CONFIG_VERSION,
};
pub use explore::{
    cmd_explore_metric, cmd_latent_dump, interaction_fraction, latent_sets, mean_nn_distance, ExploreReport,
    LatentReport, LatentRow, LatentSet, Sampler,
};
pub use manifest::{file_hash, replay, Artifact, Command, CommandRecord, ReplayReport, RunManifest};
pub use plot::{cmd_plot, resample, render_svg, Band, PlotData};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("config version {found} is not supported (expected {expected})")]
    Version { found: i64, expected: i64 },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing {what} at {}; run `{hint}` first", path.display())]
    MissingInput {
        what: &'static str,
        path: PathBuf,
        hint: &'static str,
    },
    #[error("observation dimension mismatch: checkpoint policy takes {found} inputs, task observations have {expected}")]
    ObsDim { found: usize, expected: usize },
    #[error("requested {requested} latent points but the dataset has only {available} segments")]
    TooManyPoints { requested: usize, available: usize },
    #[error("metrics file {} has no rows", .0.display())]
    EmptyMetrics(PathBuf),
    #[error("no metrics files given")]
    NoMetrics,
    #[error("sampler {0} needs a trained skill model")]
    MissingModel(Sampler),
    #[error("replay diverged: {0}")]
    Replay(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Skill(#[from] SkillError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl HarnessError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io {
            context: context.into(),
            source,
        }
    }
}

/// File layout of one output directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn create(&self) -> Result<(), HarnessError> {
        std::fs::create_dir_all(&self.root)
            .map_err(|e| HarnessError::io(format!("creating {}", self.root.display()), e))
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.rskd")
    }

    pub fn skill_model(&self) -> PathBuf {
        self.root.join("skills.rskc")
    }

    pub fn skill_log(&self) -> PathBuf {
        self.root.join("skills_train.csv")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn metrics(&self, task: TaskId, mode: AgentMode, seed: u64) -> PathBuf {
        self.root.join("metrics").join(task.name()).join(format!("{mode}-seed{seed}.csv"))
    }

    pub fn agent(&self, task: TaskId, mode: AgentMode, seed: u64) -> PathBuf {
        self.root.join("agents").join(task.name()).join(format!("{mode}-seed{seed}.rskc"))
    }

    pub fn eval(&self, task: TaskId, mode: AgentMode, seed: u64) -> PathBuf {
        self.root.join("eval").join(task.name()).join(format!("{mode}-seed{seed}.json"))
    }

    pub fn latent(&self) -> PathBuf {
        self.root.join("latent.csv")
    }

    pub fn explore(&self) -> PathBuf {
        self.root.join("explore.csv")
    }

    pub fn plot(&self, task: TaskId) -> PathBuf {
        self.root.join(format!("curves-{}.svg", task.name()))
    }

    /// Path relative to the root, for manifests.
    pub fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root).unwrap_or(path).to_string_lossy().replace('\\', "/")
    }
}

pub(crate) fn ensure_parent(path: &Path) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(format!("creating {}", dir.display()), e))?;
    }
    Ok(())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    ensure_parent(path)?;
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(format!("writing {}", path.display()), e))
}
