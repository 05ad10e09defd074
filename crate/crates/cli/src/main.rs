use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use reskill::agent::AgentMode;
use reskill::controllers::ControllerKind;
use reskill::env::TaskId;
use reskill::harness::{
    cmd_collect, cmd_eval, cmd_explore_metric, cmd_latent_dump, cmd_plot, cmd_train_rl, cmd_train_skills, replay,
    Command, EvalPolicy, HarnessError, RlJob, RunConfig, RunManifest, Sampler, Workspace,
};

#[derive(Parser)]
#[command(name = "reskill", version, about = "Skill priors and residual hierarchical RL on a tabletop simulator")]
struct Cli {
    /// Run config (TOML), or a manifest.json to reuse its config snapshot.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed; for multi-seed commands this replaces the config's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (defaults to the config's `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum BuiltinPolicy {
    Random,
    Push,
    Pick,
}

#[derive(Subcommand)]
enum Cmd {
    /// Record scripted demonstrations and slice them into skill segments.
    Collect,
    /// Train the skill embedding and the state-conditioned prior.
    TrainSkills,
    /// Train agents for every mode × task × seed (resumes from checkpoints).
    TrainRl {
        #[arg(long = "mode")]
        modes: Vec<String>,
        #[arg(long = "task")]
        tasks: Vec<String>,
    },
    /// Deterministic evaluation with a 95% Wilson interval.
    Eval {
        #[arg(long, conflicts_with = "policy")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        policy: Option<BuiltinPolicy>,
        #[arg(long)]
        task: String,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Fraction of exploration steps that move the block.
    ExploreMetric {
        #[arg(long = "sampler")]
        samplers: Vec<String>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Dump prior, posterior and N(0, I) latents with nearest-neighbour distances.
    LatentDump {
        #[arg(long)]
        points: Option<usize>,
    },
    /// Render learning curves from metrics CSVs (default: all under <out>/metrics).
    Plot { metrics: Vec<PathBuf> },
    /// Re-run every command of a manifest into --out and compare hashes.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn parse_all<T: std::str::FromStr>(items: &[String]) -> Result<Vec<T>>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    items.iter().map(|s| Ok(s.parse::<T>()?)).collect()
}

fn metrics_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).with_context(|| format!("listing {}", d.display()))? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    let ws = Workspace::new(cli.out.clone().unwrap_or_else(|| cfg.out_dir.clone()));
    let first_seed = cli.seed.unwrap_or(cfg.seeds[0]);
    let seeds = cli.seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);

    match cli.command {
        Cmd::Collect => {
            let out = recorded(&cfg, &ws, Command::Collect { seed: first_seed }, || {
                let o = cmd_collect(&cfg, &ws, first_seed)?;
                Ok((o.path.clone(), vec![o.path]))
            })?;
            println!("{}", collect_summary(&out)?);
        }
        Cmd::TrainSkills => {
            let out = recorded(&cfg, &ws, Command::TrainSkills { seed: first_seed }, || {
                let o = cmd_train_skills(&cfg, &ws, first_seed)?;
                let files = vec![o.path.clone(), ws.skill_log()];
                Ok((o, files))
            })?;
            println!("skill model {} (hash {})", out.path.display(), &out.hash[..16]);
            if let Some(h) = out.held_out {
                println!(
                    "held-out: {} segments, decode mse {:.5}, prior nll {:.3} vs N(0,I) nll {:.3}",
                    h.segments, h.recon_mse, h.prior_nll, h.normal_nll
                );
            }
        }
        Cmd::TrainRl { modes, tasks } => {
            let modes: Vec<AgentMode> = if modes.is_empty() { cfg.experiment.modes.clone() } else { parse_all(&modes)? };
            let tasks: Vec<TaskId> = if tasks.is_empty() { cfg.experiment.tasks.clone() } else { parse_all(&tasks)? };
            let mut jobs = Vec::new();
            for &task in &tasks {
                for &mode in &modes {
                    for &seed in &seeds {
                        jobs.push(RlJob { mode, task, seed });
                    }
                }
            }
            let outcomes = recorded(&cfg, &ws, Command::TrainRl { jobs: jobs.clone() }, || {
                let out = cmd_train_rl(&cfg, &ws, &jobs)?;
                let files = out
                    .iter()
                    .flat_map(|o| [o.metrics.clone(), o.checkpoint.clone(), ws.eval(o.job.task, o.job.mode, o.job.seed)])
                    .collect();
                Ok((out, files))
            })?;
            for o in &outcomes {
                println!(
                    "{:<14} {:<12} seed {:<3} eval {:>5.1}% [{:.1}, {:.1}]  final window {:>5.1}%{}",
                    o.job.task.name(),
                    o.job.mode.name(),
                    o.job.seed,
                    100.0 * o.eval.rate,
                    100.0 * o.eval.ci_low,
                    100.0 * o.eval.ci_high,
                    100.0 * o.final_window,
                    o.resumed_from.map_or(String::new(), |s| format!("  (resumed at step {s})"))
                );
            }
        }
        Cmd::Eval {
            checkpoint,
            policy,
            task,
            episodes,
        } => {
            let task: TaskId = task.parse()?;
            let policy = match (checkpoint, policy) {
                (Some(p), _) => EvalPolicy::Checkpoint {
                    path: match p.strip_prefix(&ws.root) {
                        Ok(rel) => rel.to_path_buf(),
                        Err(_) => std::path::absolute(&p)?,
                    },
                },
                (None, Some(BuiltinPolicy::Random)) => EvalPolicy::Random,
                (None, Some(BuiltinPolicy::Push)) => EvalPolicy::Scripted {
                    controller: ControllerKind::ReactivePush,
                },
                (None, Some(BuiltinPolicy::Pick)) => EvalPolicy::Scripted {
                    controller: ControllerKind::PickAndPlace,
                },
                (None, None) => bail!("eval needs --checkpoint or --policy"),
            };
            let episodes = episodes.unwrap_or(cfg.experiment.eval_episodes);
            // Evaluation only reads artifacts, so it runs without touching the manifest.
            let r = cmd_eval(&cfg, &ws, &policy, task, episodes, first_seed)?;
            println!(
                "{}: {}/{} successes, rate {:.3} (95% CI {:.3}..{:.3})",
                task, r.successes, r.episodes, r.rate, r.ci_low, r.ci_high
            );
            println!("{}", serde_json::to_string(&r)?);
        }
        Cmd::ExploreMetric { samplers, steps } => {
            let samplers: Vec<Sampler> = if samplers.is_empty() { Sampler::ALL.to_vec() } else { parse_all(&samplers)? };
            let seeds = cli.seed.map_or_else(|| cfg.explore.seeds.clone(), |s| vec![s]);
            let steps = steps.unwrap_or(cfg.explore.steps);
            let cmd = Command::ExploreMetric {
                samplers: samplers.clone(),
                seeds: seeds.clone(),
                steps,
            };
            let reports = recorded(&cfg, &ws, cmd, || Ok((cmd_explore_metric(&cfg, &ws, &samplers, &seeds, steps)?, vec![ws.explore()])))?;
            for s in &samplers {
                let mine: Vec<_> = reports.iter().filter(|r| r.sampler == *s).collect();
                let mean = mine.iter().map(|r| r.fraction).sum::<f64>() / mine.len().max(1) as f64;
                println!("{:<12} interaction fraction {:>7.3}% over {} seeds", s.name(), 100.0 * mean, mine.len());
            }
        }
        Cmd::LatentDump { points } => {
            let n = points.unwrap_or(cfg.latent.points);
            let cmd = Command::LatentDump { points: n, seed: first_seed };
            let r = recorded(&cfg, &ws, cmd, || Ok((cmd_latent_dump(&cfg, &ws, n, first_seed)?, vec![ws.latent()])))?;
            println!(
                "{} rows -> {}; mean NN distance to encoded skills: prior {:.4}, N(0,I) {:.4}",
                r.rows.len(),
                ws.latent().display(),
                r.nn_prior,
                r.nn_normal
            );
        }
        Cmd::Plot { metrics } => {
            let paths = if metrics.is_empty() { metrics_under(&ws.root.join("metrics"))? } else { metrics };
            let rel = paths.iter().map(|p| ws.relative(&std::path::absolute(p).unwrap_or(p.clone()))).collect();
            let plots = recorded(&cfg, &ws, Command::Plot { metrics: rel }, || {
                let out = cmd_plot(&cfg.plot, &paths, &ws)?;
                let files = out.iter().map(|(p, _)| p.clone()).collect();
                Ok((out, files))
            })?;
            for (path, data) in plots {
                println!("{} ({} modes)", path.display(), data.bands.len());
            }
        }
        Cmd::Replay { manifest } => {
            let m = RunManifest::load(&manifest)?;
            let r = replay(&m, &ws)?;
            println!("compared {} artifacts", r.compared);
            if !r.is_identical() {
                for mm in &r.mismatches {
                    eprintln!("mismatch: {mm}");
                }
                bail!("replay produced {} differing artifacts", r.mismatches.len());
            }
            println!("all artifacts identical");
        }
    }
    Ok(())
}

/// Runs `f` and records the command with the hashes of the files it wrote.
fn recorded<T>(
    cfg: &RunConfig,
    ws: &Workspace,
    cmd: Command,
    f: impl FnOnce() -> Result<(T, Vec<PathBuf>), HarnessError>,
) -> Result<T> {
    ws.create()?;
    let mut manifest = RunManifest::open(cfg, ws)?;
    let start = std::time::Instant::now();
    let (out, files) = f()?;
    manifest.record(ws, cmd, start.elapsed().as_secs_f64(), &files)?;
    manifest.save(ws)?;
    Ok(out)
}

fn collect_summary(path: &Path) -> Result<String> {
    let ds = reskill::dataset::SkillDataset::load(path)?;
    let s = &ds.summary;
    Ok(format!(
        "dataset {} (hash {}): {} trajectories, rejection rate {:.3}, success fraction {:.3}, {} segments",
        path.display(),
        &ds.content_hash()[..16],
        s.trajectories,
        s.rejection_rate(),
        s.success_fraction(),
        ds.len()
    ))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            for cause in e.chain().skip(1) {
                eprintln!("  caused by: {cause}");
            }
            ExitCode::FAILURE
        }
    }
}
