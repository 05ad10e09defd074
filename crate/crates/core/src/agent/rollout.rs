use std::sync::Arc;

use rand::Rng;

use super::policy::{GaussianPolicy, PolicySpec};
use super::ppo::Transition;
use super::{AgentError, AgentMode};
use crate::dataset::NormStats;
use crate::env::{EnvAction, ObsVector, PhysicsConfig, TaskSpec, ACT_DIM, OBS_DIM};
use crate::env::Env;
use crate::skills::SkillModel;

/// `clip(a′ + w·δa, −1, 1)`.
pub fn compose_action(decoded: &[f64], residual: &[f64], w: f64) -> EnvAction {
    let mut a = [0.0; ACT_DIM];
    for d in 0..ACT_DIM {
        a[d] = (decoded[d] + w * residual[d]).clamp(-1.0, 1.0);
    }
    a
}

/// Transitions of one or more episodes, per level, in time order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeBuffers {
    pub high: Vec<Transition>,
    pub low: Vec<Transition>,
}

impl EpisodeBuffers {
    pub fn clear(&mut self) {
        self.high.clear();
        self.low.clear();
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub steps: usize,
    pub success: bool,
    pub ret: f64,
    pub macro_steps: usize,
}

/// Per-step record for inspection and tests.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub t: usize,
    pub macro_index: usize,
    pub z: Vec<f64>,
    pub decoded: Vec<f64>,
    pub residual: Vec<f64>,
    pub action: EnvAction,
    pub w: f64,
    pub reward: f64,
    pub block_displacement: f64,
}

/// Policies of one run. The skill model is shared read-only.
#[derive(Clone, Debug)]
pub struct Agent {
    pub mode: AgentMode,
    pub horizon: usize,
    pub high: GaussianPolicy,
    pub residual: Option<GaussianPolicy>,
    pub model: Option<Arc<SkillModel>>,
    pub stats: NormStats,
}

struct Macro {
    input: Vec<f64>,
    raw: Vec<f64>,
    log_prob: f64,
    value: f64,
    reward: f64,
    z: Vec<f64>,
}

impl Agent {
    pub fn new(
        mode: AgentMode,
        model: Option<Arc<SkillModel>>,
        stats: NormStats,
        high_spec: &PolicySpec,
        residual_spec: &PolicySpec,
        seed: u64,
    ) -> Result<Self, AgentError> {
        let (horizon, stats, out) = match (&model, mode.uses_skills()) {
            (Some(m), true) => (m.horizon(), m.stats.clone(), m.z_dim()),
            (None, true) => return Err(AgentError::MissingModel(mode)),
            (_, false) => (1, stats, ACT_DIM),
        };
        let high = GaussianPolicy::new(OBS_DIM, out, high_spec, seed ^ 0x4849_4748);
        let residual = if mode.uses_residual() {
            let z = model.as_ref().map(|m| m.z_dim()).unwrap_or(0);
            Some(GaussianPolicy::new(
                OBS_DIM + z + ACT_DIM,
                ACT_DIM,
                residual_spec,
                seed ^ 0x5245_5349,
            ))
        } else {
            None
        };
        Ok(Self {
            mode,
            horizon,
            high,
            residual,
            model: if mode.uses_skills() { model } else { None },
            stats,
        })
    }

    pub fn state_input(&self, obs: &ObsVector) -> Vec<f64> {
        self.stats.model_input(obs).to_vec()
    }

    fn skill_model(&self) -> Result<&SkillModel, AgentError> {
        self.model.as_deref().ok_or(AgentError::MissingModel(self.mode))
    }

    /// Maps a high-level output to the skill latent for this mode.
    pub fn skill(&self, high_action: &[f64], obs: &ObsVector) -> Result<Vec<f64>, AgentError> {
        match self.mode {
            AgentMode::Reskill | AgentMode::NoResidual => Ok(self.skill_model()?.skill_from_prior(high_action, obs)?),
            AgentMode::NoPrior => Ok(high_action.to_vec()),
            AgentMode::PpoScratch => Ok(Vec::new()),
        }
    }

    /// Decoded (or, without skills, clipped atomic) action.
    fn base_action(&self, z: &[f64], high_action: &[f64], obs: &ObsVector) -> Result<Vec<f64>, AgentError> {
        if self.mode.uses_skills() {
            Ok(self.skill_model()?.decode(z, obs)?.to_vec())
        } else {
            Ok(high_action.iter().map(|v| v.clamp(-1.0, 1.0)).collect())
        }
    }

    fn residual_input(&self, obs: &ObsVector, z: &[f64], decoded: &[f64]) -> Vec<f64> {
        let mut x = self.state_input(obs);
        x.extend_from_slice(z);
        x.extend_from_slice(decoded);
        x
    }

    /// Plays one episode. With `explore` the policies sample and, when
    /// `buffers` is given, transitions are recorded; otherwise the policy
    /// means are used. `w` is the residual gate for the whole episode.
    #[allow(clippy::too_many_arguments)]
    pub fn run_episode<R: Rng>(
        &self,
        task: &TaskSpec,
        physics: &PhysicsConfig,
        env_seed: u64,
        w: f64,
        explore: bool,
        rng: &mut R,
        mut buffers: Option<&mut EpisodeBuffers>,
        mut trace: Option<&mut Vec<StepTrace>>,
    ) -> Result<EpisodeOutcome, AgentError> {
        let (mut env, mut obs) = Env::reset(task.clone(), physics.clone(), env_seed);
        let residual = self.residual.as_ref().filter(|_| w > 0.0);
        let mut current: Option<Macro> = None;
        let mut outcome = EpisodeOutcome {
            steps: 0,
            success: false,
            ret: 0.0,
            macro_steps: 0,
        };
        let mut t = 0usize;
        loop {
            if t % self.horizon == 0 {
                let input = self.state_input(&obs);
                let (raw, action, log_prob, value) = if explore {
                    let s = self.high.sample(&input, rng)?;
                    (s.raw, s.action, s.log_prob, s.value)
                } else {
                    let a = self.high.deterministic(&input)?;
                    (a.clone(), a, 0.0, 0.0)
                };
                let z = self.skill(&action, &obs)?;
                current = Some(Macro {
                    input,
                    raw,
                    log_prob,
                    value,
                    reward: 0.0,
                    z,
                });
                outcome.macro_steps += 1;
            }
            let m = current.as_mut().expect("macro step started");
            let decoded = self.base_action(&m.z, &m.raw, &obs)?;
            let (res_action, low) = match residual {
                Some(pi) => {
                    let x = self.residual_input(&obs, &m.z, &decoded);
                    if explore {
                        let s = pi.sample(&x, rng)?;
                        (s.action.clone(), Some((x, s)))
                    } else {
                        (pi.deterministic(&x)?, None)
                    }
                }
                None => (vec![0.0; ACT_DIM], None),
            };
            let action = compose_action(&decoded, &res_action, if residual.is_some() { w } else { 0.0 });
            let step = env.step(&action)?;
            outcome.ret += step.reward;
            outcome.steps += 1;
            m.reward += step.reward;
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(StepTrace {
                    t,
                    macro_index: outcome.macro_steps - 1,
                    z: m.z.clone(),
                    decoded: decoded.clone(),
                    residual: res_action.clone(),
                    action,
                    w: if residual.is_some() { w } else { 0.0 },
                    reward: step.reward,
                    block_displacement: step.info.block_displacement,
                });
            }
            let terminal = step.info.success;
            let end = step.done;
            if let (Some(buf), Some((x, s)), Some(pi)) = (buffers.as_deref_mut(), low, residual) {
                let bootstrap = if end && !terminal {
                    let next = self.base_action(&m.z, &m.raw, &step.obs)?;
                    pi.value(&self.residual_input(&step.obs, &m.z, &next))?
                } else {
                    0.0
                };
                buf.low.push(Transition {
                    input: x,
                    raw: s.raw,
                    log_prob: s.log_prob,
                    value: s.value,
                    reward: step.reward,
                    terminal,
                    end,
                    bootstrap,
                });
            }
            t += 1;
            obs = step.obs;
            if t % self.horizon == 0 || end {
                let m = current.take().expect("macro step open");
                if explore {
                    if let Some(buf) = buffers.as_deref_mut() {
                        let bootstrap = if end && !terminal {
                            self.high.value(&self.state_input(&obs))?
                        } else {
                            0.0
                        };
                        buf.high.push(Transition {
                            input: m.input,
                            raw: m.raw,
                            log_prob: m.log_prob,
                            value: m.value,
                            reward: m.reward,
                            terminal,
                            end,
                            bootstrap,
                        });
                    }
                }
            }
            if end {
                outcome.success = terminal;
                return Ok(outcome);
            }
        }
    }
}
