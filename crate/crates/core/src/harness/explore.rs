//! Exploration-quality and latent-coverage diagnostics. Both only read
//! environment info and the frozen skill model, never agent internals.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::commands::{load_dataset, load_model};
use super::{ensure_parent, HarnessError, RunConfig, Workspace};
use crate::dataset::SkillDataset;
use crate::env::{Env, EnvAction, EnvConfig, TaskId, ACT_DIM};
use crate::skills::{SegmentBatch, SkillModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampler {
    /// `g ~ N(0, I)`, `z = f⁻¹(g, s)`, decoded.
    SkillPrior,
    /// `z ~ N(0, I)`, decoded.
    SkillSpace,
    /// Atomic `a ~ N(0, σ²I)`.
    Gaussian,
}

impl Sampler {
    pub const ALL: [Sampler; 3] = [Sampler::SkillPrior, Sampler::SkillSpace, Sampler::Gaussian];

    pub fn name(self) -> &'static str {
        match self {
            Sampler::SkillPrior => "skill-prior",
            Sampler::SkillSpace => "skill-space",
            Sampler::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Sampler {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown sampler `{s}` (expected skill-prior, skill-space or gaussian)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreReport {
    pub sampler: Sampler,
    pub seed: u64,
    pub steps: usize,
    pub interactions: usize,
    pub fraction: f64,
}

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Runs an untrained sampler for `steps` environment steps (resetting after
/// every episode) and counts the steps that moved the block by more than
/// `threshold`.
#[allow(clippy::too_many_arguments)]
pub fn interaction_fraction(
    env: &EnvConfig,
    task: TaskId,
    model: Option<&SkillModel>,
    sampler: Sampler,
    sigma: f64,
    threshold: f64,
    steps: usize,
    seed: u64,
) -> Result<ExploreReport, HarnessError> {
    let model = match (sampler, model) {
        (Sampler::Gaussian, _) => None,
        (_, Some(m)) => Some(m),
        (_, None) => return Err(HarnessError::MissingModel(sampler)),
    };
    let spec = env.task(task);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut interactions = 0;
    let mut taken = 0;
    let mut episode = 0u64;
    while taken < steps {
        // Initial states depend only on the seed, so samplers see the same ones.
        let env_seed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(episode);
        episode += 1;
        let (mut sim, mut obs) = Env::reset(spec.clone(), env.physics.clone(), env_seed);
        let mut z = Vec::new();
        let mut t = 0usize;
        while taken < steps {
            let a: EnvAction = match model {
                Some(m) => {
                    if t % m.horizon() == 0 {
                        let draw = normal(&mut rng, m.z_dim());
                        z = if sampler == Sampler::SkillPrior { m.skill_from_prior(&draw, &obs)? } else { draw };
                    }
                    m.decode(&z, &obs)?
                }
                None => std::array::from_fn::<f64, ACT_DIM, _>(|_| sigma * rng.sample::<f64, _>(StandardNormal)),
            };
            let step = sim.step(&a)?;
            taken += 1;
            t += 1;
            if step.info.block_displacement > threshold {
                interactions += 1;
            }
            obs = step.obs;
            if step.done {
                break;
            }
        }
    }
    Ok(ExploreReport {
        sampler,
        seed,
        steps,
        interactions,
        fraction: interactions as f64 / steps.max(1) as f64,
    })
}

/// Every sampler × seed; writes `explore.csv`.
pub fn cmd_explore_metric(
    cfg: &RunConfig,
    ws: &Workspace,
    samplers: &[Sampler],
    seeds: &[u64],
    steps: usize,
) -> Result<Vec<ExploreReport>, HarnessError> {
    let model = if samplers.iter().any(|s| *s != Sampler::Gaussian) { Some(load_model(ws)?) } else { None };
    let mut out = Vec::new();
    for &sampler in samplers {
        for &seed in seeds {
            out.push(interaction_fraction(
                &cfg.env,
                cfg.explore.task,
                model.as_deref(),
                sampler,
                cfg.explore.gaussian_sigma,
                cfg.explore.displacement_threshold,
                steps,
                seed,
            )?);
        }
    }
    let path = ws.explore();
    ensure_parent(&path)?;
    let mut w = csv::Writer::from_path(&path)?;
    for r in &out {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| HarnessError::io("writing explore metrics", e))?;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentSet {
    /// `z ~ N(0, I)`.
    Normal,
    /// Posterior means of dataset segments.
    Encoded,
    /// `f⁻¹(g, s₀)` for the same segments' start states.
    Prior,
}

impl LatentSet {
    pub fn name(self) -> &'static str {
        match self {
            LatentSet::Normal => "normal",
            LatentSet::Encoded => "encoded",
            LatentSet::Prior => "prior",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentRow {
    pub set: LatentSet,
    pub index: usize,
    pub z: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentReport {
    pub rows: Vec<LatentRow>,
    /// Mean distance from each `N(0, I)` sample to its nearest encoded skill.
    pub nn_normal: f64,
    /// Same for the flow-prior samples.
    pub nn_prior: f64,
}

impl LatentReport {
    pub fn set(&self, set: LatentSet) -> Vec<Vec<f64>> {
        self.rows.iter().filter(|r| r.set == set).map(|r| r.z.clone()).collect()
    }
}

/// Mean over `from` of the Euclidean distance to the nearest point of `to`.
pub fn mean_nn_distance(from: &[Vec<f64>], to: &[Vec<f64>]) -> f64 {
    if from.is_empty() || to.is_empty() {
        return f64::NAN;
    }
    let total: f64 = from
        .iter()
        .map(|a| {
            to.iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    total / from.len() as f64
}

/// Draws the three point sets for `n` randomly chosen dataset segments.
pub fn latent_sets(model: &SkillModel, ds: &SkillDataset, n: usize, seed: u64) -> Result<LatentReport, HarnessError> {
    if n > ds.len() {
        return Err(HarnessError::TooManyPoints {
            requested: n,
            available: ds.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, ds.len(), n).into_vec();
    let segs: Vec<_> = picked.iter().map(|&i| &ds.segments[i]).collect();
    let d = model.z_dim();
    let mut rows = Vec::with_capacity(3 * n);
    for i in 0..n {
        rows.push(LatentRow {
            set: LatentSet::Normal,
            index: i,
            z: normal(&mut rng, d),
        });
    }
    if n > 0 {
        let batch = SegmentBatch::new(&segs, &model.stats, model.horizon())?;
        let (mu, _) = model.vae.encode_batch(&batch)?;
        for i in 0..n {
            rows.push(LatentRow {
                set: LatentSet::Encoded,
                index: i,
                z: mu.row_slice(i).to_vec(),
            });
        }
    }
    for (i, seg) in segs.iter().enumerate() {
        let g = normal(&mut rng, d);
        rows.push(LatentRow {
            set: LatentSet::Prior,
            index: i,
            z: model.skill_from_prior(&g, &seg.states[0])?,
        });
    }
    let mut report = LatentReport {
        rows,
        nn_normal: 0.0,
        nn_prior: 0.0,
    };
    let encoded = report.set(LatentSet::Encoded);
    report.nn_normal = mean_nn_distance(&report.set(LatentSet::Normal), &encoded);
    report.nn_prior = mean_nn_distance(&report.set(LatentSet::Prior), &encoded);
    Ok(report)
}

/// Writes `latent.csv` with columns `set,index,z0..`.
pub fn cmd_latent_dump(cfg: &RunConfig, ws: &Workspace, n: usize, seed: u64) -> Result<LatentReport, HarnessError> {
    let _ = cfg;
    let model = load_model(ws)?;
    let ds = load_dataset(ws)?;
    let report = latent_sets(&model, &ds, n, seed)?;
    let path = ws.latent();
    ensure_parent(&path)?;
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["set".to_string(), "index".to_string()];
    header.extend((0..model.z_dim()).map(|i| format!("z{i}")));
    w.write_record(&header)?;
    for r in &report.rows {
        let mut rec = vec![r.set.name().to_string(), r.index.to_string()];
        rec.extend(r.z.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| HarnessError::io("writing latent dump", e))?;
    Ok(report)
}
