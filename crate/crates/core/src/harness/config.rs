use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agent::{AgentMode, RlConfig};
use crate::dataset::CollectPlan;
use crate::env::{EnvConfig, TaskId};
use crate::skills::{SkillConfig, TrainConfig};

pub const CONFIG_VERSION: i64 = 1;

/// Every tunable of a run. Missing sections take their defaults; unknown
/// keys anywhere in the tree are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: i64,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub env: EnvConfig,
    pub collect: CollectPlan,
    pub skills: SkillConfig,
    pub skill_training: TrainConfig,
    pub rl: RlConfig,
    pub experiment: ExperimentConfig,
    pub explore: ExploreConfig,
    pub latent: LatentConfig,
    pub plot: PlotConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seeds: vec![0, 1, 2, 3, 4],
            out_dir: PathBuf::from("runs"),
            env: EnvConfig::default(),
            collect: CollectPlan::default(),
            skills: SkillConfig::default(),
            skill_training: TrainConfig::default(),
            rl: RlConfig::default(),
            experiment: ExperimentConfig::default(),
            explore: ExploreConfig::default(),
            latent: LatentConfig::default(),
            plot: PlotConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub modes: Vec<AgentMode>,
    pub tasks: Vec<TaskId>,
    /// Deterministic evaluation episodes after training.
    pub eval_episodes: usize,
    /// Save the agent checkpoint every this many PPO iterations.
    pub checkpoint_every: u64,
    /// Parallel training workers; `0` uses every available core.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            modes: AgentMode::ALL.to_vec(),
            tasks: vec![TaskId::SlipperyPush, TaskId::TableCleanup],
            eval_episodes: 100,
            checkpoint_every: 5,
            workers: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExploreConfig {
    pub steps: usize,
    pub seeds: Vec<u64>,
    /// Standard deviation of the atomic Gaussian sampler.
    pub gaussian_sigma: f64,
    /// Block displacement (m) above which a step counts as an interaction.
    pub displacement_threshold: f64,
    pub task: TaskId,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            seeds: vec![0, 1, 2],
            gaussian_sigma: 1.0,
            displacement_threshold: 1e-3,
            task: TaskId::SlipperyPush,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatentConfig {
    pub points: usize,
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self { points: 500 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlotConfig {
    /// Points of the common step grid curves are resampled onto.
    pub grid_points: usize,
    pub width: u32,
    pub height: u32,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self {
            grid_points: 100,
            width: 720,
            height: 360,
        }
    }
}

impl RunConfig {
    /// Parses a config file. The top-level `version` key is mandatory.
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        match table.get("version") {
            None => return Err(HarnessError::Config("missing top-level `version` key".into())),
            Some(toml::Value::Integer(v)) if *v == CONFIG_VERSION => {}
            Some(toml::Value::Integer(v)) => {
                return Err(HarnessError::Version {
                    found: *v,
                    expected: CONFIG_VERSION,
                })
            }
            Some(other) => return Err(HarnessError::Config(format!("`version` must be an integer, got {other}"))),
        }
        let cfg: RunConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a TOML config, or the config snapshot of a `manifest.json`.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(format!("reading {}", path.display()), e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let manifest: super::RunManifest = serde_json::from_str(&text)?;
            manifest.config.validate()?;
            return Ok(manifest.config);
        }
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.version != CONFIG_VERSION {
            return Err(HarnessError::Version {
                found: self.version,
                expected: CONFIG_VERSION,
            });
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("`seeds` must not be empty".into()));
        }
        self.collect.validate()?;
        self.skills.validate()?;
        self.rl.validate()?;
        if self.skills.horizon != self.collect.horizon {
            return Err(HarnessError::Config(format!(
                "skills.horizon ({}) differs from collect.horizon ({})",
                self.skills.horizon, self.collect.horizon
            )));
        }
        if !(self.explore.gaussian_sigma >= 0.0 && self.explore.displacement_threshold >= 0.0) {
            return Err(HarnessError::Config("explore sigma and threshold must be >= 0".into()));
        }
        if self.plot.grid_points < 2 {
            return Err(HarnessError::Config("plot.grid_points must be >= 2".into()));
        }
        if self.experiment.checkpoint_every == 0 {
            return Err(HarnessError::Config("experiment.checkpoint_every must be >= 1".into()));
        }
        Ok(())
    }

    /// Content hash of the effective config.
    pub fn hash(&self) -> String {
        crate::codec::sha256_hex(serde_json::to_string(self).expect("config serialises").as_bytes())
    }
}
