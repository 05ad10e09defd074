use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::commands::{execute, EvalPolicy, RlJob};
use super::explore::Sampler;
use super::{write_file, HarnessError, RunConfig, Workspace};
use crate::env::TaskId;

/// A command as recorded in the manifest; replaying the list in order
/// rebuilds every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    Collect {
        seed: u64,
    },
    TrainSkills {
        seed: u64,
    },
    TrainRl {
        jobs: Vec<RlJob>,
    },
    Eval {
        policy: EvalPolicy,
        task: TaskId,
        episodes: usize,
        seed: u64,
    },
    ExploreMetric {
        samplers: Vec<Sampler>,
        seeds: Vec<u64>,
        steps: usize,
    },
    LatentDump {
        points: usize,
        seed: u64,
    },
    Plot {
        /// Metrics files relative to the output directory.
        metrics: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    #[serde(flatten)]
    pub command: Command,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    /// Effective config with every default filled in.
    pub config: RunConfig,
    pub dataset_hash: Option<String>,
    pub model_hash: Option<String>,
    /// Output files (relative paths) with their content hashes.
    pub artifacts: BTreeMap<String, Artifact>,
    pub history: Vec<CommandRecord>,
}

pub fn file_hash(path: &Path) -> Result<Artifact, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(format!("reading {}", path.display()), e))?;
    Ok(Artifact {
        sha256: crate::codec::sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    })
}

impl RunManifest {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash(),
            config: cfg.clone(),
            dataset_hash: None,
            model_hash: None,
            artifacts: BTreeMap::new(),
            history: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(format!("reading {}", path.display()), e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// The workspace manifest, or a fresh one. A directory that already holds
    /// a run with a different config is refused.
    pub fn open(cfg: &RunConfig, ws: &Workspace) -> Result<Self, HarnessError> {
        let path = ws.manifest();
        if !path.exists() {
            return Ok(Self::new(cfg));
        }
        let m = Self::load(&path)?;
        if m.config_hash != cfg.hash() {
            return Err(HarnessError::Config(format!(
                "{} belongs to a run with a different config (hash {}); use another --out directory",
                path.display(),
                m.config_hash
            )));
        }
        Ok(m)
    }

    pub fn record(&mut self, ws: &Workspace, command: Command, secs: f64, outputs: &[PathBuf]) -> Result<(), HarnessError> {
        for p in outputs {
            self.artifacts.insert(ws.relative(p), file_hash(p)?);
        }
        match &command {
            Command::Collect { .. } => {
                self.dataset_hash = Some(crate::dataset::SkillDataset::load(&ws.dataset())?.content_hash().to_string());
            }
            Command::TrainSkills { .. } => {
                self.model_hash = Some(crate::skills::SkillModel::load(&ws.skill_model())?.content_hash());
            }
            _ => {}
        }
        self.history.push(CommandRecord {
            command,
            wall_clock_secs: secs,
        });
        Ok(())
    }

    pub fn save(&self, ws: &Workspace) -> Result<(), HarnessError> {
        write_file(&ws.manifest(), serde_json::to_string_pretty(self)?.as_bytes())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub compared: usize,
    pub mismatches: Vec<String>,
    pub dataset_hash: Option<String>,
    pub model_hash: Option<String>,
}

impl ReplayReport {
    pub fn is_identical(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Re-runs every recorded command into `out` (which must not contain a run
/// yet) and compares each artifact hash with the manifest.
pub fn replay(manifest: &RunManifest, out: &Workspace) -> Result<ReplayReport, HarnessError> {
    if out.manifest().exists() {
        return Err(HarnessError::Replay(format!("{} already holds a run", out.root.display())));
    }
    let cfg = &manifest.config;
    cfg.validate()?;
    let mut fresh = RunManifest::new(cfg);
    for rec in &manifest.history {
        let outputs = execute(cfg, out, &rec.command)?;
        fresh.record(out, rec.command.clone(), 0.0, &outputs)?;
    }
    fresh.save(out)?;
    let mut mismatches = Vec::new();
    for (path, art) in &manifest.artifacts {
        match fresh.artifacts.get(path) {
            Some(a) if a == art => {}
            Some(a) => mismatches.push(format!("{path}: {} != {}", a.sha256, art.sha256)),
            None => mismatches.push(format!("{path}: not produced")),
        }
    }
    if fresh.dataset_hash != manifest.dataset_hash {
        mismatches.push("dataset content hash".into());
    }
    if fresh.model_hash != manifest.model_hash {
        mismatches.push("skill model content hash".into());
    }
    Ok(ReplayReport {
        compared: manifest.artifacts.len(),
        mismatches,
        dataset_hash: fresh.dataset_hash,
        model_hash: fresh.model_hash,
    })
}
