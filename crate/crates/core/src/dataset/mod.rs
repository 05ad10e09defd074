//! Demonstration collection, skill slicing and the on-disk dataset.

mod format;
mod trajectory;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controllers::{rollout, ControllerConfig, ControllerError, ControllerKind, PerlinConfig};
use crate::env::{EnvAction, EnvConfig, ObsVector, TaskId, OBS_DIM};

pub use format::{export_jsonl, DATASET_VERSION};
pub use trajectory::Trajectory;

pub const SKILL_HORIZON: usize = 10;
/// Standard deviation used for (near-)constant state dimensions.
pub const STD_FLOOR: f64 = 1e-6;
/// Normalised model inputs are clipped to this magnitude.
pub const NORM_CLIP: f64 = 10.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a dataset file (bad magic)")]
    BadMagic,
    #[error("dataset version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("dataset file is truncated")]
    Truncated,
    #[error("dataset content hash mismatch")]
    HashMismatch,
    #[error("trajectory of length {len} cannot be sliced with horizon {horizon}")]
    TooShort { len: usize, horizon: usize },
    #[error("invalid collection plan: {0}")]
    Plan(String),
    #[error("no trajectory longer than the skill horizon ({horizon}) was collected")]
    Empty { horizon: usize },
    #[error("dataset metadata: {0}")]
    Meta(String),
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

/// How many demonstrations of each controller to record and how to cut them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectPlan {
    pub push_trajectories: usize,
    pub pick_trajectories: usize,
    pub slices_per_trajectory: usize,
    pub horizon: usize,
    pub seed: u64,
    pub noise: PerlinConfig,
    pub controller: ControllerConfig,
}

impl Default for CollectPlan {
    fn default() -> Self {
        Self {
            push_trajectories: 1000,
            pick_trajectories: 1000,
            slices_per_trajectory: 4,
            horizon: SKILL_HORIZON,
            seed: 0,
            noise: PerlinConfig::default(),
            controller: ControllerConfig::default(),
        }
    }
}

impl CollectPlan {
    pub fn total(&self) -> usize {
        self.push_trajectories + self.pick_trajectories
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.total() == 0 {
            return Err(DatasetError::Plan("the plan contains zero trajectories".into()));
        }
        if self.slices_per_trajectory == 0 {
            return Err(DatasetError::Plan("slices_per_trajectory must be >= 1".into()));
        }
        if self.horizon == 0 {
            return Err(DatasetError::Plan("horizon must be >= 1".into()));
        }
        self.noise.validate().map_err(DatasetError::Plan)
    }

    pub fn kind_of(&self, id: usize) -> ControllerKind {
        if id < self.push_trajectories {
            ControllerKind::ReactivePush
        } else {
            ControllerKind::PickAndPlace
        }
    }

    pub fn rollout_seed(&self, id: usize) -> u64 {
        self.seed
            .wrapping_mul(0x2545_f491_4f6c_dd1d)
            .wrapping_add(id as u64)
    }

    /// Re-runs demonstration `id` exactly as the collector did.
    pub fn trajectory(&self, env: &EnvConfig, id: usize) -> Result<Trajectory, DatasetError> {
        let noise = PerlinConfig {
            seed: self.noise.seed ^ self.seed,
            ..self.noise.clone()
        };
        Ok(rollout(
            &env.task(TaskId::DataCollectEmpty),
            &env.physics,
            self.kind_of(id),
            &self.controller,
            &noise,
            self.rollout_seed(id),
        )?)
    }
}

/// Appendix-style length filter: keep only trajectories strictly longer than
/// the skill horizon.
pub fn filter(traj: &Trajectory, horizon: usize) -> bool {
    traj.len() > horizon
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillSegment {
    pub states: Vec<ObsVector>,
    pub actions: Vec<EnvAction>,
    pub trajectory: u64,
    pub start: usize,
}

impl SkillSegment {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }
}

/// Copies a uniformly placed window of `horizon` rows out of `traj`.
pub fn slice<R: Rng>(traj: &Trajectory, id: u64, horizon: usize, rng: &mut R) -> Result<SkillSegment, DatasetError> {
    if !filter(traj, horizon) {
        return Err(DatasetError::TooShort {
            len: traj.len(),
            horizon,
        });
    }
    let start = rng.random_range(0..=traj.len() - horizon);
    Ok(cut(traj, id, start, horizon))
}

pub fn cut(traj: &Trajectory, id: u64, start: usize, horizon: usize) -> SkillSegment {
    SkillSegment {
        states: traj.states[start..start + horizon].to_vec(),
        actions: traj.actions[start..start + horizon].to_vec(),
        trajectory: id,
        start,
    }
}

/// Per-dimension state normalisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; OBS_DIM],
    pub std: [f64; OBS_DIM],
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; OBS_DIM],
            std: [1.0; OBS_DIM],
        }
    }

    pub fn from_states<'a>(states: impl Iterator<Item = &'a ObsVector>) -> Self {
        let mut n = 0usize;
        let mut sum = [0.0; OBS_DIM];
        let rows: Vec<&ObsVector> = states.collect();
        for s in &rows {
            n += 1;
            for d in 0..OBS_DIM {
                sum[d] += s[d];
            }
        }
        let n = n.max(1) as f64;
        let mean = sum.map(|v| v / n);
        let mut var = [0.0; OBS_DIM];
        for s in &rows {
            for d in 0..OBS_DIM {
                var[d] += (s[d] - mean[d]).powi(2);
            }
        }
        let std = var.map(|v| (v / n).sqrt().max(STD_FLOOR));
        Self { mean, std }
    }

    pub fn normalize(&self, s: &ObsVector) -> ObsVector {
        let mut out = [0.0; OBS_DIM];
        for d in 0..OBS_DIM {
            out[d] = (s[d] - self.mean[d]) / self.std[d];
        }
        out
    }

    /// [`normalize`](Self::normalize) followed by clipping to ±[`NORM_CLIP`];
    /// this is what the networks see.
    pub fn model_input(&self, s: &ObsVector) -> ObsVector {
        self.normalize(s).map(|v| v.clamp(-NORM_CLIP, NORM_CLIP))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CollectSummary {
    pub trajectories: usize,
    pub rejected: usize,
    pub successes: usize,
}

impl CollectSummary {
    pub fn rejection_rate(&self) -> f64 {
        self.rejected as f64 / self.trajectories.max(1) as f64
    }

    pub fn success_fraction(&self) -> f64 {
        self.successes as f64 / self.trajectories.max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkillDataset {
    pub horizon: usize,
    pub segments: Vec<SkillSegment>,
    pub stats: NormStats,
    pub plan: CollectPlan,
    pub summary: CollectSummary,
    hash: String,
}

impl SkillDataset {
    pub fn new(horizon: usize, segments: Vec<SkillSegment>, plan: CollectPlan, summary: CollectSummary) -> Self {
        let stats = NormStats::from_states(segments.iter().flat_map(|s| s.states.iter()));
        let hash = format::content_hash(horizon, &segments);
        Self {
            horizon,
            segments,
            stats,
            plan,
            summary,
            hash,
        }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// SHA-256 over every segment byte.
    pub fn content_hash(&self) -> &str {
        &self.hash
    }
}

/// Collects, filters and slices demonstrations according to `plan`.
pub fn build_dataset(plan: &CollectPlan, env: &EnvConfig) -> Result<SkillDataset, DatasetError> {
    plan.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0x51_1ce5);
    let mut summary = CollectSummary::default();
    let mut segments = Vec::with_capacity(plan.total() * plan.slices_per_trajectory);
    for id in 0..plan.total() {
        let traj = plan.trajectory(env, id)?;
        summary.trajectories += 1;
        summary.successes += traj.success as usize;
        if !filter(&traj, plan.horizon) {
            summary.rejected += 1;
            continue;
        }
        for _ in 0..plan.slices_per_trajectory {
            segments.push(slice(&traj, id as u64, plan.horizon, &mut rng)?);
        }
    }
    if segments.is_empty() {
        return Err(DatasetError::Empty { horizon: plan.horizon });
    }
    Ok(SkillDataset::new(plan.horizon, segments, plan.clone(), summary))
}
