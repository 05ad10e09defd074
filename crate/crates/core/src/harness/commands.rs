use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{Command, RunManifest};
use super::{ensure_parent, write_file, HarnessError, RunConfig, Workspace};
use crate::agent::{
    evaluate_policy, wilson_interval, AgentMode, EpisodeRow, EvalReport, Trainer, AGENT_CHECKPOINT_KIND,
};
use crate::autodiff::Checkpoint;
use crate::controllers::ControllerKind;
use crate::dataset::{build_dataset, CollectSummary, SkillDataset};
use crate::env::{Env, TaskId, ACT_DIM, OBS_DIM};
use crate::skills::{joint_train_with, HeldOutReport, SkillModel, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectOutcome {
    pub path: PathBuf,
    pub hash: String,
    pub segments: usize,
    pub summary: CollectSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillOutcome {
    pub path: PathBuf,
    pub hash: String,
    pub held_out: Option<HeldOutReport>,
    pub final_embed: f64,
    pub final_prior: f64,
}

/// One training run of the grid (mode × task × seed).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RlJob {
    pub mode: AgentMode,
    pub task: TaskId,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlOutcome {
    pub job: RlJob,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
    /// Step count of the checkpoint the run resumed from.
    pub resumed_from: Option<u64>,
    pub episodes: u64,
    /// Trailing-window training success rate at the end of the run.
    pub final_window: f64,
    /// First step at which the trailing success rate reached 50%.
    pub reached_half: Option<u64>,
    /// Highest trailing success rate seen during training.
    pub max_window: f64,
    pub eval: EvalReport,
}

/// What `eval` rolls out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum EvalPolicy {
    /// A trained agent checkpoint; relative paths are resolved against the
    /// output directory.
    Checkpoint { path: PathBuf },
    /// Uniform random atomic actions.
    Random,
    /// A noise-free scripted controller.
    Scripted { controller: ControllerKind },
}

fn missing(path: &Path, what: &'static str, hint: &'static str) -> Result<(), HarnessError> {
    if path.exists() {
        Ok(())
    } else {
        Err(HarnessError::MissingInput {
            what,
            path: path.to_path_buf(),
            hint,
        })
    }
}

pub(crate) fn load_model(ws: &Workspace) -> Result<Arc<SkillModel>, HarnessError> {
    let path = ws.skill_model();
    missing(&path, "skill model", "train-skills")?;
    Ok(Arc::new(SkillModel::load(&path)?))
}

pub(crate) fn load_dataset(ws: &Workspace) -> Result<SkillDataset, HarnessError> {
    let path = ws.dataset();
    missing(&path, "dataset", "collect")?;
    Ok(SkillDataset::load(&path)?)
}

pub fn cmd_collect(cfg: &RunConfig, ws: &Workspace, seed: u64) -> Result<CollectOutcome, HarnessError> {
    let mut plan = cfg.collect.clone();
    plan.seed = plan.seed.wrapping_add(seed);
    plan.validate()?;
    let ds = build_dataset(&plan, &cfg.env)?;
    let path = ws.dataset();
    ensure_parent(&path)?;
    ds.save(&path)?;
    Ok(CollectOutcome {
        path,
        hash: ds.content_hash().to_string(),
        segments: ds.len(),
        summary: ds.summary.clone(),
    })
}

pub fn cmd_train_skills(cfg: &RunConfig, ws: &Workspace, seed: u64) -> Result<SkillOutcome, HarnessError> {
    let ds = load_dataset(ws)?;
    let mut skills = cfg.skills.clone();
    skills.init_seed = skills.init_seed.wrapping_add(seed);
    let train = TrainConfig {
        seed: cfg.skill_training.seed.wrapping_add(seed),
        ..cfg.skill_training.clone()
    };
    let mut log = Vec::new();
    let (model, report) = joint_train_with(&ds, &skills, &train, |l| log.push(l.clone()))?;
    let path = ws.skill_model();
    ensure_parent(&path)?;
    model.save(&path)?;
    let mut w = csv::Writer::from_path(ws.skill_log())?;
    for row in &log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| HarnessError::io("writing skill training log", e))?;
    let last = report.history.last();
    Ok(SkillOutcome {
        path,
        hash: model.content_hash(),
        held_out: report.held_out,
        final_embed: last.map_or(f64::NAN, |l| l.embed),
        final_prior: last.map_or(f64::NAN, |l| l.prior),
    })
}

/// Reads a metrics CSV; an empty file is an error.
pub fn read_metrics(path: &Path) -> Result<Vec<EpisodeRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<Result<Vec<EpisodeRow>, _>>()?;
    if rows.is_empty() {
        return Err(HarnessError::EmptyMetrics(path.to_path_buf()));
    }
    Ok(rows)
}

fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), HarnessError> {
    ensure_parent(path)?;
    let tmp = path.with_extension("rskc.tmp");
    ck.save(&tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| HarnessError::io(format!("moving checkpoint to {}", path.display()), e))
}

/// Trains one agent, resuming from its checkpoint when one exists. Metrics
/// rows are appended after every PPO iteration; rows written after the last
/// checkpoint are dropped on resume so the file matches an uninterrupted run.
pub fn run_rl_job(
    cfg: &RunConfig,
    ws: &Workspace,
    model: Option<Arc<SkillModel>>,
    job: RlJob,
) -> Result<RlOutcome, HarnessError> {
    let ck_path = ws.agent(job.task, job.mode, job.seed);
    let metrics = ws.metrics(job.task, job.mode, job.seed);
    let model = if job.mode.uses_skills() { model } else { None };
    let stats = model.as_ref().map(|m| m.stats.clone()).unwrap_or_else(crate::dataset::NormStats::identity);

    let (mut trainer, resumed_from, mut history) = if ck_path.exists() {
        let ck = Checkpoint::load(&ck_path)?;
        let t = Trainer::from_checkpoint(&ck, &cfg.env, model)?;
        if t.config != cfg.rl || t.mode() != job.mode || t.task.id != job.task || t.seed != job.seed {
            return Err(crate::agent::AgentError::Mismatch(format!(
                "{} was written by a different configuration; remove it to start over",
                ck_path.display()
            ))
            .into());
        }
        let steps = t.state.steps;
        let kept: Vec<EpisodeRow> = if metrics.exists() {
            let mut r = csv::Reader::from_path(&metrics)?;
            r.deserialize::<EpisodeRow>()
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .filter(|row| row.step <= steps)
                .collect()
        } else {
            Vec::new()
        };
        (t, Some(steps), kept)
    } else {
        let t = Trainer::new(
            cfg.rl.clone(),
            job.mode,
            cfg.env.task(job.task),
            cfg.env.physics.clone(),
            model,
            stats,
            job.seed,
        )?;
        (t, None, Vec::new())
    };

    ensure_parent(&metrics)?;
    {
        let mut w = csv::Writer::from_path(&metrics)?;
        for row in &history {
            w.serialize(row)?;
        }
        if history.is_empty() {
            w.write_record(["mode", "task", "seed", "step", "episode", "success", "success_rate", "return", "w"])?;
        }
        w.flush().map_err(|e| HarnessError::io("writing metrics", e))?;
    }
    let file = OpenOptions::new()
        .append(true)
        .open(&metrics)
        .map_err(|e| HarnessError::io(format!("opening {}", metrics.display()), e))?;
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(file);

    while !trainer.is_done() {
        let mut rows = Vec::new();
        let report = trainer.iteration(&mut |r| rows.push(r.clone()))?;
        for row in &rows {
            out.serialize(row)?;
        }
        out.flush().map_err(|e| HarnessError::io("appending metrics", e))?;
        history.extend(rows);
        if report.iteration % cfg.experiment.checkpoint_every == 0 || trainer.is_done() {
            save_checkpoint(&trainer.to_checkpoint(), &ck_path)?;
        }
    }
    if resumed_from.is_none() && history.is_empty() {
        save_checkpoint(&trainer.to_checkpoint(), &ck_path)?;
    }

    let eval = evaluate_policy(
        &trainer.agent,
        &trainer.task,
        &trainer.physics,
        cfg.experiment.eval_episodes,
        job.seed,
        trainer.gate(),
    )?;
    write_file(&ws.eval(job.task, job.mode, job.seed), serde_json::to_string_pretty(&eval)?.as_bytes())?;
    Ok(RlOutcome {
        job,
        metrics,
        checkpoint: ck_path,
        resumed_from,
        episodes: trainer.state.episodes,
        final_window: trainer.state.success_rate(),
        reached_half: history.iter().find(|r| r.success_rate >= 0.5).map(|r| r.step),
        max_window: history.iter().map(|r| r.success_rate).fold(0.0, f64::max),
        eval,
    })
}

/// Trains every job, fanning out over `experiment.workers` threads. Each job
/// owns its files, so workers never share output.
pub fn cmd_train_rl(cfg: &RunConfig, ws: &Workspace, jobs: &[RlJob]) -> Result<Vec<RlOutcome>, HarnessError> {
    let needs_model = jobs.iter().any(|j| j.mode.uses_skills());
    let model = if needs_model { Some(load_model(ws)?) } else { None };
    let workers = match cfg.experiment.workers {
        0 => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        n => n,
    }
    .min(jobs.len().max(1));
    if workers <= 1 {
        return jobs.iter().map(|&j| run_rl_job(cfg, ws, model.clone(), j)).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<RlOutcome, HarnessError>>> = (0..jobs.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let r = run_rl_job(cfg, ws, model.clone(), jobs[i]);
                results.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every job ran")).collect()
}

fn policy_input_dim(ck: &Checkpoint) -> Option<usize> {
    ck.arrays
        .iter()
        .find(|(n, _)| n.starts_with("high.actor/"))
        .map(|(_, t)| t.rows())
}

/// Deterministic evaluation on seeded initial states, with a 95% Wilson
/// interval.
pub fn cmd_eval(
    cfg: &RunConfig,
    ws: &Workspace,
    policy: &EvalPolicy,
    task: TaskId,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport, HarnessError> {
    let spec = cfg.env.task(task);
    match policy {
        EvalPolicy::Checkpoint { path } => {
            let path = if path.is_absolute() { path.clone() } else { ws.root.join(path) };
            missing(&path, "agent checkpoint", "train-rl")?;
            let ck = Checkpoint::load(&path)?;
            ck.expect_kind(AGENT_CHECKPOINT_KIND)?;
            if let Some(found) = policy_input_dim(&ck) {
                if found != OBS_DIM {
                    return Err(HarnessError::ObsDim {
                        found,
                        expected: OBS_DIM,
                    });
                }
            }
            let meta: serde_json::Value = serde_json::from_str(&ck.meta)?;
            let mode: AgentMode = serde_json::from_value(meta["mode"].clone())?;
            let model = if mode.uses_skills() { Some(load_model(ws)?) } else { None };
            let trainer = Trainer::from_checkpoint(&ck, &cfg.env, model)?;
            Ok(evaluate_policy(&trainer.agent, &spec, &trainer.physics, episodes, seed, trainer.gate())?)
        }
        EvalPolicy::Random | EvalPolicy::Scripted { .. } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut successes = 0;
            for e in 0..episodes {
                let (mut env, mut obs) = Env::reset(spec.clone(), cfg.env.physics.clone(), seed.wrapping_mul(0x9e37_79b9).wrapping_add(e as u64));
                loop {
                    let a = match policy {
                        EvalPolicy::Scripted { controller } => controller.act(&obs, &cfg.collect.controller),
                        _ => std::array::from_fn::<f64, ACT_DIM, _>(|_| rng.random_range(-1.0..=1.0)),
                    };
                    let step = env.step(&a)?;
                    obs = step.obs;
                    if step.done {
                        successes += step.info.success as usize;
                        break;
                    }
                }
            }
            let (ci_low, ci_high) = wilson_interval(successes, episodes);
            Ok(EvalReport {
                episodes,
                successes,
                rate: successes as f64 / episodes.max(1) as f64,
                ci_low,
                ci_high,
            })
        }
    }
}

/// Runs one recorded command and returns the files it produced.
pub(crate) fn execute(cfg: &RunConfig, ws: &Workspace, cmd: &Command) -> Result<Vec<PathBuf>, HarnessError> {
    ws.create()?;
    Ok(match cmd {
        Command::Collect { seed } => vec![cmd_collect(cfg, ws, *seed)?.path],
        Command::TrainSkills { seed } => {
            let out = cmd_train_skills(cfg, ws, *seed)?;
            vec![out.path, ws.skill_log()]
        }
        Command::TrainRl { jobs } => cmd_train_rl(cfg, ws, jobs)?
            .into_iter()
            .flat_map(|o| [o.metrics, o.checkpoint, ws.eval(o.job.task, o.job.mode, o.job.seed)])
            .collect(),
        Command::Eval {
            policy,
            task,
            episodes,
            seed,
        } => {
            let report = cmd_eval(cfg, ws, policy, *task, *episodes, *seed)?;
            let label = match policy {
                EvalPolicy::Checkpoint { path } => path.file_stem().map_or("checkpoint".into(), |s| s.to_string_lossy().into_owned()),
                EvalPolicy::Random => "random".into(),
                EvalPolicy::Scripted { controller } => controller.name().into(),
            };
            let path = ws.root.join("eval").join(task.name()).join(format!("{label}-eval-seed{seed}.json"));
            write_file(&path, serde_json::to_string_pretty(&report)?.as_bytes())?;
            vec![path]
        }
        Command::ExploreMetric { samplers, seeds, steps } => {
            super::cmd_explore_metric(cfg, ws, samplers, seeds, *steps)?;
            vec![ws.explore()]
        }
        Command::LatentDump { points, seed } => {
            super::cmd_latent_dump(cfg, ws, *points, *seed)?;
            vec![ws.latent()]
        }
        Command::Plot { metrics } => {
            let paths: Vec<PathBuf> = metrics.iter().map(|m| ws.root.join(m)).collect();
            super::cmd_plot(&cfg.plot, &paths, ws)?.into_iter().map(|(p, _)| p).collect()
        }
    })
}

/// Executes `cmd` and records it, with the hashes of its outputs, in the
/// workspace manifest.
pub fn run_recorded(cfg: &RunConfig, ws: &Workspace, cmd: Command) -> Result<Vec<PathBuf>, HarnessError> {
    let mut manifest = RunManifest::open(cfg, ws)?;
    let start = Instant::now();
    let outputs = execute(cfg, ws, &cmd)?;
    manifest.record(ws, cmd, start.elapsed().as_secs_f64(), &outputs)?;
    manifest.save(ws)?;
    Ok(outputs)
}
