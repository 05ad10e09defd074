//! On-policy training loop, per-episode metrics and resumable checkpoints.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::{GaussianPolicy, PolicySpec};
use super::ppo::{PpoConfig, PpoLearner, PpoStats};
use super::rollout::{Agent, EpisodeBuffers};
use super::{AgentError, AgentMode, GateSchedule};
use crate::autodiff::{Adam, Checkpoint, CheckpointError, ParamSet, Tensor};
use crate::dataset::NormStats;
use crate::env::{EnvConfig, PhysicsConfig, TaskId, TaskSpec};
use crate::skills::SkillModel;

pub const AGENT_CHECKPOINT_KIND: &str = "rl-agent";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlConfig {
    pub total_steps: u64,
    /// Environment steps gathered per update (whole episodes).
    pub rollout_steps: usize,
    pub high_ppo: PpoConfig,
    pub low_ppo: PpoConfig,
    pub gate: GateSchedule,
    pub high_policy: PolicySpec,
    pub residual_policy: PolicySpec,
    pub success_window: usize,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            total_steps: 150_000,
            rollout_steps: 2000,
            high_ppo: PpoConfig {
                minibatch: 32,
                ..PpoConfig::default()
            },
            // The residual starts almost silent and moves slowly; larger steps
            // wreck the decoded skills before the gate has opened.
            low_ppo: PpoConfig {
                pi_lr: 1e-4,
                ..PpoConfig::default()
            },
            gate: GateSchedule::default(),
            high_policy: PolicySpec::default(),
            residual_policy: PolicySpec {
                init_log_std: -3.0,
                squash: true,
                ..PolicySpec::default()
            },
            success_window: 20,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        self.high_ppo.validate()?;
        self.low_ppo.validate()?;
        self.gate.validate()?;
        if self.rollout_steps == 0 || self.success_window == 0 {
            return Err(AgentError::Config("rollout_steps and success_window must be >= 1".into()));
        }
        Ok(())
    }
}

/// One metrics row per finished training episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub mode: AgentMode,
    pub task: TaskId,
    pub seed: u64,
    /// Environment steps taken so far, this episode included.
    pub step: u64,
    pub episode: u64,
    pub success: bool,
    /// Success rate over the trailing window of episodes.
    pub success_rate: f64,
    #[serde(rename = "return")]
    pub ret: f64,
    pub w: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub iteration: u64,
    pub steps: u64,
    pub episodes: u64,
    pub window: VecDeque<bool>,
}

impl TrainState {
    pub fn success_rate(&self) -> f64 {
        if self.window.is_empty() {
            0.0
        } else {
            self.window.iter().filter(|&&s| s).count() as f64 / self.window.len() as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: u64,
    pub steps: u64,
    pub episodes: usize,
    pub high: PpoStats,
    pub low: Option<PpoStats>,
    pub w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub successes: usize,
    pub rate: f64,
    /// 95% Wilson score interval.
    pub ci_low: f64,
    pub ci_high: f64,
}

/// 95% Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let n = n as f64;
    let p = k as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * ((p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt()) / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

fn episode_seed(seed: u64, episode: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(episode)
}

/// Deterministic (policy-mean) evaluation on seeded initial states disjoint
/// from the training episodes.
pub fn evaluate_policy(
    agent: &Agent,
    task: &TaskSpec,
    physics: &PhysicsConfig,
    episodes: usize,
    seed: u64,
    w: f64,
) -> Result<EvalReport, AgentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut successes = 0;
    for e in 0..episodes {
        let env_seed = episode_seed(seed ^ 0xe7a1_0000_0000, e as u64);
        let out = agent.run_episode(task, physics, env_seed, w, false, &mut rng, None, None)?;
        successes += out.success as usize;
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

pub struct Trainer {
    pub config: RlConfig,
    pub seed: u64,
    pub task: TaskSpec,
    pub physics: PhysicsConfig,
    pub agent: Agent,
    pub high_learner: PpoLearner,
    pub low_learner: Option<PpoLearner>,
    pub state: TrainState,
}

#[derive(Serialize, Deserialize)]
struct AgentMeta {
    mode: AgentMode,
    seed: u64,
    task: TaskId,
    config: RlConfig,
    state: TrainState,
    stats: NormStats,
    skill_model_hash: Option<String>,
    optimiser_steps: Vec<u64>,
}

impl Trainer {
    pub fn new(
        config: RlConfig,
        mode: AgentMode,
        task: TaskSpec,
        physics: PhysicsConfig,
        model: Option<Arc<SkillModel>>,
        stats: NormStats,
        seed: u64,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        let agent = Agent::new(mode, model, stats, &config.high_policy, &config.residual_policy, seed)?;
        let high_learner = PpoLearner::new(&agent.high, config.high_ppo.clone());
        let low_learner = agent
            .residual
            .as_ref()
            .map(|r| PpoLearner::new(r, config.low_ppo.clone()));
        Ok(Self {
            config,
            seed,
            task,
            physics,
            agent,
            high_learner,
            low_learner,
            state: TrainState::default(),
        })
    }

    pub fn mode(&self) -> AgentMode {
        self.agent.mode
    }

    pub fn is_done(&self) -> bool {
        self.state.steps >= self.config.total_steps
    }

    /// Residual gate at the current step count (0 without a residual).
    pub fn gate(&self) -> f64 {
        if self.agent.residual.is_some() {
            self.config.gate.weight(self.state.steps)
        } else {
            0.0
        }
    }

    /// Collects whole episodes worth at least `rollout_steps` steps, then
    /// updates both levels once.
    pub fn iteration<F: FnMut(&EpisodeRow)>(&mut self, sink: &mut F) -> Result<IterationReport, AgentError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x7472_6169_6e00);
        rng.set_stream(self.state.iteration);
        let mut buffers = EpisodeBuffers::default();
        let mut collected = 0usize;
        let mut episodes = 0usize;
        let mut w = 0.0;
        while collected < self.config.rollout_steps && !self.is_done() {
            w = self.gate();
            let env_seed = episode_seed(self.seed, self.state.episodes);
            let out = self.agent.run_episode(
                &self.task,
                &self.physics,
                env_seed,
                w,
                true,
                &mut rng,
                Some(&mut buffers),
                None,
            )?;
            collected += out.steps;
            episodes += 1;
            self.state.steps += out.steps as u64;
            self.state.episodes += 1;
            self.state.window.push_back(out.success);
            while self.state.window.len() > self.config.success_window {
                self.state.window.pop_front();
            }
            sink(&EpisodeRow {
                mode: self.agent.mode,
                task: self.task.id,
                seed: self.seed,
                step: self.state.steps,
                episode: self.state.episodes,
                success: out.success,
                success_rate: self.state.success_rate(),
                ret: out.ret,
                w,
            });
        }
        let high = self.high_learner.update(&mut self.agent.high, &buffers.high, &mut rng)?;
        let low = match (&mut self.low_learner, &mut self.agent.residual) {
            (Some(learner), Some(pi)) if !buffers.low.is_empty() => Some(learner.update(pi, &buffers.low, &mut rng)?),
            _ => None,
        };
        self.state.iteration += 1;
        Ok(IterationReport {
            iteration: self.state.iteration,
            steps: self.state.steps,
            episodes,
            high,
            low,
            w,
        })
    }

    /// Trains until the step budget is spent; `on_iteration` runs after every
    /// update (e.g. to write a checkpoint).
    pub fn train<F, G>(&mut self, mut sink: F, mut on_iteration: G) -> Result<(), AgentError>
    where
        F: FnMut(&EpisodeRow),
        G: FnMut(&Trainer, &IterationReport) -> Result<(), AgentError>,
    {
        while !self.is_done() {
            let report = self.iteration(&mut sink)?;
            on_iteration(self, &report)?;
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = AgentMeta {
            mode: self.agent.mode,
            seed: self.seed,
            task: self.task.id,
            config: self.config.clone(),
            state: self.state.clone(),
            stats: self.agent.stats.clone(),
            skill_model_hash: self.agent.model.as_ref().map(|m| m.content_hash()),
            optimiser_steps: self.optimisers().iter().map(|(_, o)| o.step_count()).collect(),
        };
        let config_hash = crate::codec::sha256_hex(
            serde_json::to_string(&self.config).expect("config serialises").as_bytes(),
        );
        let mut ck = Checkpoint::new(AGENT_CHECKPOINT_KIND, config_hash);
        ck.meta = serde_json::to_string(&meta).expect("meta serialises");
        put_policy(&mut ck, "high", &self.agent.high);
        if let Some(r) = &self.agent.residual {
            put_policy(&mut ck, "residual", r);
        }
        for (name, opt) in self.optimisers() {
            let (m, v) = opt.moments();
            for (i, (mi, vi)) in m.iter().zip(v).enumerate() {
                ck.put(format!("opt.{name}/m{i}"), mi.clone());
                ck.put(format!("opt.{name}/v{i}"), vi.clone());
            }
        }
        ck
    }

    fn optimisers(&self) -> Vec<(&'static str, &Adam)> {
        let mut v = vec![("high.pi", &self.high_learner.pi_opt), ("high.v", &self.high_learner.v_opt)];
        if let Some(l) = &self.low_learner {
            v.push(("residual.pi", &l.pi_opt));
            v.push(("residual.v", &l.v_opt));
        }
        v
    }

    /// Restores a run. The skill model must be the one the run started with.
    pub fn from_checkpoint(ck: &Checkpoint, env: &EnvConfig, model: Option<Arc<SkillModel>>) -> Result<Self, AgentError> {
        ck.expect_kind(AGENT_CHECKPOINT_KIND)?;
        let meta: AgentMeta =
            serde_json::from_str(&ck.meta).map_err(|e| CheckpointError::Meta(format!("agent: {e}")))?;
        let given = model.as_ref().map(|m| m.content_hash());
        if meta.mode.uses_skills() && given != meta.skill_model_hash {
            return Err(AgentError::Mismatch("skill model hash differs from the one used for training".into()));
        }
        let mut trainer = Self::new(
            meta.config,
            meta.mode,
            env.task(meta.task),
            env.physics.clone(),
            model,
            meta.stats,
            meta.seed,
        )?;
        load_policy(ck, "high", &mut trainer.agent.high)?;
        if let Some(r) = &mut trainer.agent.residual {
            load_policy(ck, "residual", r)?;
        }
        let names: Vec<&'static str> = trainer.optimisers().iter().map(|(n, _)| *n).collect();
        if names.len() != meta.optimiser_steps.len() {
            return Err(AgentError::Mismatch("optimiser count differs".into()));
        }
        for (name, step) in names.into_iter().zip(meta.optimiser_steps) {
            let params = match name {
                "high.pi" => &trainer.agent.high.actor_params,
                "high.v" => &trainer.agent.high.critic_params,
                "residual.pi" => &trainer.agent.residual.as_ref().expect("residual").actor_params,
                _ => &trainer.agent.residual.as_ref().expect("residual").critic_params,
            };
            let (m, v) = load_moments(ck, name, params)?;
            let opt = match name {
                "high.pi" => &mut trainer.high_learner.pi_opt,
                "high.v" => &mut trainer.high_learner.v_opt,
                "residual.pi" => &mut trainer.low_learner.as_mut().expect("residual").pi_opt,
                _ => &mut trainer.low_learner.as_mut().expect("residual").v_opt,
            };
            *opt = Adam::from_parts(opt.config, step, m, v);
        }
        trainer.state = meta.state;
        Ok(trainer)
    }
}

fn put_policy(ck: &mut Checkpoint, prefix: &str, p: &GaussianPolicy) {
    ck.put_params(&format!("{prefix}.actor"), &p.actor_params);
    ck.put_params(&format!("{prefix}.critic"), &p.critic_params);
}

fn load_policy(ck: &Checkpoint, prefix: &str, p: &mut GaussianPolicy) -> Result<(), AgentError> {
    ck.load_params(&format!("{prefix}.actor"), &mut p.actor_params)?;
    ck.load_params(&format!("{prefix}.critic"), &mut p.critic_params)?;
    Ok(())
}

fn load_moments(ck: &Checkpoint, name: &str, params: &ParamSet) -> Result<(Vec<Tensor>, Vec<Tensor>), AgentError> {
    let mut m = Vec::with_capacity(params.len());
    let mut v = Vec::with_capacity(params.len());
    for (i, t) in params.tensors().iter().enumerate() {
        let mi = ck.get(&format!("opt.{name}/m{i}"))?;
        let vi = ck.get(&format!("opt.{name}/v{i}"))?;
        if mi.shape() != t.shape() || vi.shape() != t.shape() {
            return Err(AgentError::Mismatch(format!("optimiser moments of {name} have the wrong shape")));
        }
        m.push(mi.clone());
        v.push(vi.clone());
    }
    Ok((m, v))
}
