//! Diagonal-Gaussian actor with a separate value network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::{Activation, Mlp, MlpSpec};
use crate::autodiff::{AutodiffError, Bound, ParamId, ParamSet, Tape, Tensor, Var};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySpec {
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    /// Pass samples through `tanh`; log-probabilities stay in the
    /// pre-squash space, where the Jacobian cancels in PPO ratios.
    pub squash: bool,
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            init_log_std: 0.0,
            squash: false,
        }
    }
}

/// One sampled action with its bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Pre-squash Gaussian sample.
    pub raw: Vec<f64>,
    /// What the environment sees (`tanh(raw)` when squashed).
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub actor_params: ParamSet,
    pub critic_params: ParamSet,
    pub actor: Mlp,
    pub critic: Mlp,
    pub log_std: ParamId,
    pub squash: bool,
}

impl GaussianPolicy {
    pub fn new(input: usize, output: usize, spec: &PolicySpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut actor_params = ParamSet::new();
        let actor = Mlp::new(
            &mut actor_params,
            "pi",
            &MlpSpec {
                input,
                hidden: spec.hidden.clone(),
                output,
                activation: Activation::Tanh,
                layer_norm: false,
                zero_output: false,
            },
            &mut rng,
        );
        // Small output weights and a zero bias keep the initial mean near zero.
        let w = actor.out.weight;
        actor_params.get_mut(w).data_mut().iter_mut().for_each(|v| *v *= 0.01);
        actor_params.get_mut(actor.out.bias).data_mut().fill(0.0);
        let log_std = actor_params.add("pi.log_std", Tensor::full(1, output, spec.init_log_std));
        let mut critic_params = ParamSet::new();
        let critic = Mlp::new(
            &mut critic_params,
            "v",
            &MlpSpec {
                input,
                hidden: spec.hidden.clone(),
                output: 1,
                activation: Activation::Tanh,
                layer_norm: false,
                zero_output: false,
            },
            &mut rng,
        );
        Self {
            actor_params,
            critic_params,
            actor,
            critic,
            log_std,
            squash: spec.squash,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.actor.output_dim()
    }

    /// Mean `[B, a]` and broadcast clamped log-std `[B, a]`.
    pub fn dist_tape(&self, tape: &mut Tape<'_>, p: &Bound, x: Var) -> Result<(Var, Var), AutodiffError> {
        let mean = self.actor.forward(tape, p, x)?;
        let ls = tape.clamp(p.get(self.log_std), LOG_STD_MIN, LOG_STD_MAX);
        let rows = tape.shape(x)[0];
        let ls = tape.broadcast_rows(ls, rows)?;
        Ok((mean, ls))
    }

    /// Per-row log-density `[B, 1]` of pre-squash samples `raw`.
    pub fn log_prob_tape(&self, tape: &mut Tape<'_>, p: &Bound, x: Var, raw: Var) -> Result<(Var, Var), AutodiffError> {
        let (mean, ls) = self.dist_tape(tape, p, x)?;
        let lp = tape.gaussian_logpdf(raw, mean, ls)?;
        Ok((tape.sum_cols(lp), ls))
    }

    pub fn value_tape(&self, tape: &mut Tape<'_>, p: &Bound, x: Var) -> Result<Var, AutodiffError> {
        self.critic.forward(tape, p, x)
    }

    pub fn log_std_values(&self) -> Vec<f64> {
        self.actor_params
            .get(self.log_std)
            .data()
            .iter()
            .map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect()
    }

    fn mean_and_value(&self, x: &[f64]) -> Result<(Vec<f64>, f64), AutodiffError> {
        let mut tape = Tape::new();
        let a = self.actor_params.bind_frozen(&mut tape);
        let c = self.critic_params.bind_frozen(&mut tape);
        let xv = tape.constant(Tensor::row(x));
        let mean = self.actor.forward(&mut tape, &a, xv)?;
        let v = self.critic.forward(&mut tape, &c, xv)?;
        Ok((tape.value(mean).data().to_vec(), tape.value(v).item()))
    }

    pub fn value(&self, x: &[f64]) -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let c = self.critic_params.bind_frozen(&mut tape);
        let xv = tape.constant(Tensor::row(x));
        let v = self.critic.forward(&mut tape, &c, xv)?;
        Ok(tape.value(v).item())
    }

    pub fn sample<R: Rng>(&self, x: &[f64], rng: &mut R) -> Result<Sample, AutodiffError> {
        let (mean, value) = self.mean_and_value(x)?;
        let ls = self.log_std_values();
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let mut raw = Vec::with_capacity(mean.len());
        let mut log_prob = 0.0;
        for (m, l) in mean.iter().zip(&ls) {
            let e: f64 = rng.sample(StandardNormal);
            raw.push(m + l.exp() * e);
            log_prob += -0.5 * e * e - l - half_log_2pi;
        }
        let action = self.squashed(&raw);
        Ok(Sample {
            raw,
            action,
            log_prob,
            value,
        })
    }

    /// Mean action without exploration noise.
    pub fn deterministic(&self, x: &[f64]) -> Result<Vec<f64>, AutodiffError> {
        let (mean, _) = self.mean_and_value(x)?;
        Ok(self.squashed(&mean))
    }

    fn squashed(&self, raw: &[f64]) -> Vec<f64> {
        if self.squash {
            raw.iter().map(|v| v.tanh()).collect()
        } else {
            raw.to_vec()
        }
    }
}
