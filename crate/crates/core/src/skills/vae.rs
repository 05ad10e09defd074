//! Sequence VAE: recurrent encoder over `(s_t, a_t)`, closed-loop decoder on
//! `(z, s_t)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{SkillConfig, SkillError};
use crate::autodiff::nn::{Activation, Lstm, Mlp, MlpSpec};
use crate::autodiff::{AutodiffError, Bound, ParamSet, Tape, Tensor, Var};
use crate::dataset::{NormStats, SkillSegment};
use crate::env::{ACT_DIM, OBS_DIM};

/// Bounds applied to the encoder's log-σ head.
pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vae {
    pub params: ParamSet,
    pub lstm: Lstm,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub z_dim: usize,
    pub horizon: usize,
}

/// Normalised inputs of a batch of segments, laid out per time step.
#[derive(Clone, Debug)]
pub struct SegmentBatch {
    /// `[B, 16 + 4]` encoder inputs per step.
    pub inputs: Vec<Tensor>,
    /// `[B, 16]` normalised states per step.
    pub states: Vec<Tensor>,
    /// `[B, 4]` target actions per step.
    pub actions: Vec<Tensor>,
}

impl SegmentBatch {
    pub fn new(segments: &[&SkillSegment], stats: &NormStats, horizon: usize) -> Result<Self, SkillError> {
        if segments.is_empty() {
            return Err(SkillError::EmptyBatch);
        }
        for s in segments {
            if s.horizon() != horizon || s.actions.len() != horizon {
                return Err(SkillError::Horizon {
                    found: s.horizon(),
                    expected: horizon,
                });
            }
        }
        let b = segments.len();
        let mut inputs = Vec::with_capacity(horizon);
        let mut states = Vec::with_capacity(horizon);
        let mut actions = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let mut x = Vec::with_capacity(b * (OBS_DIM + ACT_DIM));
            let mut s = Vec::with_capacity(b * OBS_DIM);
            let mut a = Vec::with_capacity(b * ACT_DIM);
            for seg in segments {
                let n = stats.model_input(&seg.states[t]);
                x.extend_from_slice(&n);
                x.extend_from_slice(&seg.actions[t]);
                s.extend_from_slice(&n);
                a.extend_from_slice(&seg.actions[t]);
            }
            inputs.push(Tensor::new(b, OBS_DIM + ACT_DIM, x)?);
            states.push(Tensor::new(b, OBS_DIM, s)?);
            actions.push(Tensor::new(b, ACT_DIM, a)?);
        }
        Ok(Self { inputs, states, actions })
    }

    pub fn len(&self) -> usize {
        self.states.first().map(Tensor::rows).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    /// Normalised first states, the flow's conditioning input.
    pub fn s0(&self) -> &Tensor {
        &self.states[0]
    }
}

/// Tape handles of one ELBO evaluation.
pub struct VaeTerms {
    pub loss: Var,
    pub recon: Var,
    pub kl: Var,
    pub mu: Var,
    pub log_std: Var,
    pub z: Var,
}

impl Vae {
    pub fn new<R: Rng>(cfg: &SkillConfig, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let lstm = Lstm::new(&mut params, "enc.lstm", OBS_DIM + ACT_DIM, cfg.lstm_hidden, rng);
        let encoder = Mlp::new(
            &mut params,
            "enc.mlp",
            &MlpSpec {
                input: cfg.lstm_hidden,
                hidden: vec![cfg.mlp_width; cfg.mlp_layers],
                output: 2 * cfg.z_dim,
                activation: Activation::Relu,
                layer_norm: true,
                zero_output: false,
            },
            rng,
        );
        let decoder = Mlp::new(
            &mut params,
            "dec.mlp",
            &MlpSpec {
                input: cfg.z_dim + OBS_DIM,
                hidden: vec![cfg.mlp_width; cfg.mlp_layers],
                output: ACT_DIM,
                activation: Activation::Relu,
                layer_norm: true,
                zero_output: false,
            },
            rng,
        );
        Self {
            params,
            lstm,
            encoder,
            decoder,
            z_dim: cfg.z_dim,
            horizon: cfg.horizon,
        }
    }

    /// Posterior `(μ, log σ)` for `[B, 20]` step inputs.
    pub fn encode_tape(&self, tape: &mut Tape<'_>, p: &Bound, inputs: &[Var]) -> Result<(Var, Var), SkillError> {
        if inputs.len() != self.horizon {
            return Err(SkillError::Horizon {
                found: inputs.len(),
                expected: self.horizon,
            });
        }
        let b = tape.shape(inputs[0])[0];
        let h0 = tape.constant(Tensor::zeros(b, self.lstm.hidden));
        let c0 = tape.constant(Tensor::zeros(b, self.lstm.hidden));
        let h = self.lstm.forward(tape, p, inputs, h0, c0)?;
        let out = self.encoder.forward(tape, p, h)?;
        let mu = tape.slice_cols(out, 0, self.z_dim)?;
        let ls = tape.slice_cols(out, self.z_dim, self.z_dim)?;
        Ok((mu, tape.clamp(ls, LOG_STD_MIN, LOG_STD_MAX)))
    }

    /// `tanh` action head on `concat(z, s)`.
    pub fn decode_tape(&self, tape: &mut Tape<'_>, p: &Bound, z: Var, s: Var) -> Result<Var, AutodiffError> {
        let x = tape.concat_cols(&[z, s])?;
        let y = self.decoder.forward(tape, p, x)?;
        Ok(tape.tanh(y))
    }

    /// `z = μ + σ ⊙ ε` on the tape.
    pub fn reparam_tape(tape: &mut Tape<'_>, mu: Var, log_std: Var, eps: Var) -> Result<Var, AutodiffError> {
        let sigma = tape.exp(log_std);
        let noise = tape.mul(sigma, eps)?;
        tape.add(mu, noise)
    }

    /// Batch-mean of `Σ_t ‖a_t − a′_t‖² + β·KL(q ‖ N(0, I))` with one
    /// posterior sample per segment; `eps` is the `[B, z]` standard-normal draw.
    pub fn loss_tape(
        &self,
        tape: &mut Tape<'_>,
        p: &Bound,
        batch: &SegmentBatch,
        eps: &Tensor,
        beta: f64,
    ) -> Result<VaeTerms, SkillError> {
        let inputs: Vec<Var> = batch.inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let (mu, log_std) = self.encode_tape(tape, p, &inputs)?;
        let eps = tape.constant(eps.clone());
        let z = Self::reparam_tape(tape, mu, log_std, eps)?;
        let b = batch.len() as f64;
        let mut recon: Option<Var> = None;
        for (s, a) in batch.states.iter().zip(&batch.actions) {
            let s = tape.constant(s.clone());
            let a = tape.constant(a.clone());
            let pred = self.decode_tape(tape, p, z, s)?;
            let d = tape.sub(pred, a)?;
            let sq = tape.square(d);
            let e = tape.sum(sq);
            recon = Some(match recon {
                Some(r) => tape.add(r, e)?,
                None => e,
            });
        }
        let recon = recon.ok_or(SkillError::EmptyBatch)?;
        let recon = tape.scale(recon, 1.0 / b);
        let kl = kl_tape(tape, mu, log_std)?;
        let kl = tape.scale(kl, 1.0 / b);
        let weighted = tape.scale(kl, beta);
        let loss = tape.add(recon, weighted)?;
        Ok(VaeTerms {
            loss,
            recon,
            kl,
            mu,
            log_std,
            z,
        })
    }

    /// `(μ, σ)` of one raw (un-normalised) segment.
    pub fn encode(&self, segment: &SkillSegment, stats: &NormStats) -> Result<(Vec<f64>, Vec<f64>), SkillError> {
        let batch = SegmentBatch::new(&[segment], stats, self.horizon)?;
        let (mu, ls) = self.encode_batch(&batch)?;
        Ok((mu.into_data(), ls.into_data().into_iter().map(f64::exp).collect()))
    }

    /// `(μ, log σ)` as `[B, z]` tensors.
    pub fn encode_batch(&self, batch: &SegmentBatch) -> Result<(Tensor, Tensor), SkillError> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let inputs: Vec<Var> = batch.inputs.iter().map(|t| tape.constant_ref(t)).collect();
        let (mu, ls) = self.encode_tape(&mut tape, &p, &inputs)?;
        Ok((tape.value(mu).clone(), tape.value(ls).clone()))
    }

    /// Decoded action for latent `z` in (already normalised) state `s`.
    pub fn decode(&self, z: &[f64], s: &[f64]) -> Result<[f64; ACT_DIM], SkillError> {
        let out = self.decode_batch(&Tensor::row(z), &Tensor::row(s))?;
        let mut a = [0.0; ACT_DIM];
        a.copy_from_slice(out.data());
        Ok(a)
    }

    pub fn decode_batch(&self, z: &Tensor, s: &Tensor) -> Result<Tensor, SkillError> {
        if z.cols() != self.z_dim || s.cols() != OBS_DIM || z.rows() != s.rows() {
            return Err(SkillError::Dim {
                what: "decode input",
                found: z.cols() + s.cols(),
                expected: self.z_dim + OBS_DIM,
            });
        }
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let zv = tape.constant_ref(z);
        let sv = tape.constant_ref(s);
        let a = self.decode_tape(&mut tape, &p, zv, sv)?;
        Ok(tape.value(a).clone())
    }
}

/// Sum over rows and dims of `KL(N(μ, σ²) ‖ N(0, 1))`.
pub fn kl_tape(tape: &mut Tape<'_>, mu: Var, log_std: Var) -> Result<Var, AutodiffError> {
    let mu2 = tape.square(mu);
    let two_ls = tape.scale(log_std, 2.0);
    let var = tape.exp(two_ls);
    let a = tape.add(mu2, var)?;
    let b = tape.sub(a, two_ls)?;
    let c = tape.add_scalar(b, -1.0);
    let s = tape.sum(c);
    Ok(tape.scale(s, 0.5))
}

/// Closed-form `KL(N(μ, diag σ²) ‖ N(0, I))`.
pub fn kl_closed_form(mu: &[f64], sigma: &[f64]) -> f64 {
    mu.iter()
        .zip(sigma)
        .map(|(&m, &s)| 0.5 * (m * m + s * s - 1.0) - s.ln())
        .sum()
}

/// `μ + σ ⊙ ε` with `ε ~ N(0, I)`.
pub fn reparam_sample<R: Rng>(mu: &[f64], sigma: &[f64], rng: &mut R) -> Vec<f64> {
    mu.iter()
        .zip(sigma)
        .map(|(&m, &s)| m + s * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect()
}
