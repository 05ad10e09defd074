//! Clipped-surrogate PPO over a flat list of transitions.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::GaussianPolicy;
use super::AgentError;
use crate::autodiff::{clip_grad_norm, Adam, AdamConfig, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip: f64,
    pub pi_lr: f64,
    pub v_lr: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    /// Stop the epoch loop once the approximate KL exceeds this; `0` disables.
    pub target_kl: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            pi_lr: 3e-4,
            v_lr: 1e-3,
            gamma: 0.99,
            lambda: 0.95,
            epochs: 10,
            minibatch: 64,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            target_kl: 0.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.into()));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("ppo clip must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad("gamma and lambda must lie in [0, 1]");
        }
        if self.epochs == 0 || self.minibatch == 0 {
            return bad("epochs and minibatch must be >= 1");
        }
        if !(self.pi_lr > 0.0 && self.v_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub input: Vec<f64>,
    /// Pre-squash action sample.
    pub raw: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    /// The episode ended in an absorbing (success) state.
    pub terminal: bool,
    /// Last transition of an episode (terminal or time limit).
    pub end: bool,
    /// `V(s')` used when the episode was cut by the time limit.
    pub bootstrap: f64,
}

/// Generalised advantage estimates and value targets; transitions must be
/// in time order, episodes contiguous.
pub fn gae(items: &[Transition], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = items.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for i in (0..n).rev() {
        let tr = &items[i];
        let next_value = if tr.end {
            if tr.terminal {
                0.0
            } else {
                tr.bootstrap
            }
        } else if i + 1 < n {
            items[i + 1].value
        } else {
            tr.bootstrap
        };
        let carry = if tr.end { 0.0 } else { next_adv };
        let delta = tr.reward + gamma * next_value - tr.value;
        adv[i] = delta + gamma * lambda * carry;
        next_adv = adv[i];
    }
    let ret = adv.iter().zip(items).map(|(a, t)| a + t.value).collect();
    (adv, ret)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub minibatches: usize,
    pub transitions: usize,
}

/// Optimiser state for one policy/value pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PpoLearner {
    pub config: PpoConfig,
    pub pi_opt: Adam,
    pub v_opt: Adam,
}

fn rows(data: impl Iterator<Item = f64>, n: usize, cols: usize) -> Result<Tensor, AgentError> {
    Ok(Tensor::new(n, cols, data.collect())?)
}

impl PpoLearner {
    pub fn new(policy: &GaussianPolicy, config: PpoConfig) -> Self {
        Self {
            pi_opt: Adam::new(&policy.actor_params, AdamConfig::with_lr(config.pi_lr)),
            v_opt: Adam::new(&policy.critic_params, AdamConfig::with_lr(config.v_lr)),
            config,
        }
    }

    /// Runs the configured epochs over `items` and updates `policy` in place.
    pub fn update<R: Rng>(
        &mut self,
        policy: &mut GaussianPolicy,
        items: &[Transition],
        rng: &mut R,
    ) -> Result<PpoStats, AgentError> {
        let cfg = self.config.clone();
        let n = items.len();
        if n == 0 {
            return Ok(PpoStats::default());
        }
        let (mut adv, ret) = gae(items, cfg.gamma, cfg.lambda);
        let mean = adv.iter().sum::<f64>() / n as f64;
        let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        for a in &mut adv {
            *a -= mean;
            if std > 1e-8 {
                *a /= std;
            }
        }
        let din = policy.input_dim();
        let da = policy.action_dim();
        let mut order: Vec<usize> = (0..n).collect();
        let mut stats = PpoStats {
            transitions: n,
            ..PpoStats::default()
        };
        'epochs: for _ in 0..cfg.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(cfg.minibatch) {
                let b = chunk.len();
                let x = rows(chunk.iter().flat_map(|&i| items[i].input.iter().copied()), b, din)?;
                let u = rows(chunk.iter().flat_map(|&i| items[i].raw.iter().copied()), b, da)?;
                let old = rows(chunk.iter().map(|&i| items[i].log_prob), b, 1)?;
                let a = rows(chunk.iter().map(|&i| adv[i]), b, 1)?;
                let r = rows(chunk.iter().map(|&i| ret[i]), b, 1)?;

                let mut tape = Tape::new();
                let pa = policy.actor_params.bind(&mut tape);
                let pc = policy.critic_params.bind(&mut tape);
                let (xv, uv, ov, av, rv) = (
                    tape.constant(x),
                    tape.constant(u),
                    tape.constant(old),
                    tape.constant(a),
                    tape.constant(r),
                );
                let (lp, ls) = policy.log_prob_tape(&mut tape, &pa, xv, uv)?;
                let diff = tape.sub(lp, ov)?;
                let ratio = tape.exp(diff);
                let s1 = tape.mul(ratio, av)?;
                let clipped = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
                let s2 = tape.mul(clipped, av)?;
                let surr = tape.minimum(s1, s2)?;
                let surr = tape.mean(surr);
                let mut pi_loss = tape.neg(surr);
                // Gaussian entropy per row: sum(log σ) + const.
                let ent = tape.mean(ls);
                let ent_value = tape.value(ent).item() * da as f64
                    + 0.5 * da as f64 * (1.0 + (2.0 * std::f64::consts::PI).ln());
                if cfg.entropy_coef != 0.0 {
                    let bonus = tape.scale(ent, cfg.entropy_coef * da as f64);
                    pi_loss = tape.sub(pi_loss, bonus)?;
                }
                let v = policy.value_tape(&mut tape, &pc, xv)?;
                let verr = tape.sub(v, rv)?;
                let vsq = tape.square(verr);
                let v_mean = tape.mean(vsq);
                let v_loss = tape.scale(v_mean, 0.5);
                let total = tape.add(pi_loss, v_loss)?;

                let pl = tape.value(pi_loss).item();
                let vl = tape.value(v_loss).item();
                if !(pl.is_finite() && vl.is_finite()) {
                    return Err(AgentError::NonFinite(format!(
                        "ppo loss: policy {pl}, value {vl} on a minibatch of {b}"
                    )));
                }
                let ratios = tape.value(ratio).data();
                let kl = tape
                    .value(diff)
                    .data()
                    .iter()
                    .zip(ratios)
                    .map(|(d, r)| (r - 1.0) - d)
                    .sum::<f64>()
                    / b as f64;
                let clip_frac =
                    ratios.iter().filter(|r| (*r - 1.0).abs() > cfg.clip).count() as f64 / b as f64;

                let grads = tape.backward(total)?;
                let mut ga = pa.grads(&grads);
                let mut gc = pc.grads(&grads);
                drop(tape);
                if cfg.max_grad_norm > 0.0 {
                    clip_grad_norm(&mut ga, cfg.max_grad_norm);
                    clip_grad_norm(&mut gc, cfg.max_grad_norm);
                }
                self.pi_opt.step(&mut policy.actor_params, &ga)?;
                self.v_opt.step(&mut policy.critic_params, &gc)?;

                stats.policy_loss += pl;
                stats.value_loss += vl;
                stats.entropy += ent_value;
                stats.approx_kl += kl;
                stats.clip_fraction += clip_frac;
                stats.minibatches += 1;
                if cfg.target_kl > 0.0 && kl > 1.5 * cfg.target_kl {
                    break 'epochs;
                }
            }
        }
        let m = stats.minibatches.max(1) as f64;
        stats.policy_loss /= m;
        stats.value_loss /= m;
        stats.entropy /= m;
        stats.approx_kl /= m;
        stats.clip_fraction /= m;
        Ok(stats)
    }
}
