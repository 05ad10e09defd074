//! State-conditioned affine coupling flow `g = f(z, s₀)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{SkillConfig, SkillError};
use crate::autodiff::nn::{Activation, Mlp, MlpSpec};
use crate::autodiff::{AutodiffError, Bound, ParamSet, Tape, Tensor, Var};

/// One affine coupling layer. `passive_first` keeps the first half of the
/// latent fixed and rescales/shifts the second half.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub net: Mlp,
    pub passive_first: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub params: ParamSet,
    pub layers: Vec<Coupling>,
    pub z_dim: usize,
    pub cond_dim: usize,
    /// Log-scales are `bound · tanh(raw)`.
    pub log_scale_bound: f64,
}

struct Halves {
    passive: Var,
    active: Var,
}

impl Flow {
    /// Output layers start at zero, so a fresh flow is the identity.
    pub fn new<R: Rng>(cfg: &SkillConfig, cond_dim: usize, rng: &mut R) -> Self {
        assert!(cfg.z_dim >= 2 && cfg.z_dim % 2 == 0, "latent dimension must be even");
        let half = cfg.z_dim / 2;
        let mut params = ParamSet::new();
        let layers = (0..cfg.flow_layers)
            .map(|i| Coupling {
                net: Mlp::new(
                    &mut params,
                    &format!("flow.c{i}"),
                    &MlpSpec {
                        input: half + cond_dim,
                        hidden: vec![cfg.flow_hidden; cfg.flow_hidden_layers],
                        output: 2 * half,
                        activation: Activation::Relu,
                        layer_norm: false,
                        zero_output: true,
                    },
                    rng,
                ),
                passive_first: i % 2 == 0,
            })
            .collect();
        Self {
            params,
            layers,
            z_dim: cfg.z_dim,
            cond_dim,
            log_scale_bound: cfg.log_scale_bound,
        }
    }

    fn split(&self, tape: &mut Tape<'_>, x: Var, passive_first: bool) -> Result<Halves, AutodiffError> {
        let h = self.z_dim / 2;
        let a = tape.slice_cols(x, 0, h)?;
        let b = tape.slice_cols(x, h, h)?;
        Ok(if passive_first {
            Halves { passive: a, active: b }
        } else {
            Halves { passive: b, active: a }
        })
    }

    fn join(tape: &mut Tape<'_>, passive: Var, active: Var, passive_first: bool) -> Result<Var, AutodiffError> {
        if passive_first {
            tape.concat_cols(&[passive, active])
        } else {
            tape.concat_cols(&[active, passive])
        }
    }

    /// `(log_scale, shift)` of a layer given its passive half.
    fn scale_shift(
        &self,
        tape: &mut Tape<'_>,
        p: &Bound,
        layer: &Coupling,
        passive: Var,
        s: Var,
    ) -> Result<(Var, Var), AutodiffError> {
        let h = self.z_dim / 2;
        let x = tape.concat_cols(&[passive, s])?;
        let out = layer.net.forward(tape, p, x)?;
        let raw = tape.slice_cols(out, 0, h)?;
        let t = tape.slice_cols(out, h, h)?;
        let th = tape.tanh(raw);
        Ok((tape.scale(th, self.log_scale_bound), t))
    }

    /// `g = f(z, s)` and per-row `log|det ∂f/∂z|` (`[B, 1]`).
    pub fn forward_tape(&self, tape: &mut Tape<'_>, p: &Bound, z: Var, s: Var) -> Result<(Var, Var), SkillError> {
        let mut x = z;
        let mut log_det: Option<Var> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let Halves { passive, active } = self.split(tape, x, layer.passive_first)?;
            let (ls, t) = self.scale_shift(tape, p, layer, passive, s)?;
            let e = tape.exp(ls);
            let scaled = tape.mul(active, e)?;
            let y = tape.add(scaled, t)?;
            x = Self::join(tape, passive, y, layer.passive_first)?;
            if !tape.value(x).is_finite() {
                return Err(SkillError::NonFinite { layer: i });
            }
            let ld = tape.sum_cols(ls);
            log_det = Some(match log_det {
                Some(acc) => tape.add(acc, ld)?,
                None => ld,
            });
        }
        let log_det = match log_det {
            Some(v) => v,
            None => {
                let rows = tape.shape(z)[0];
                tape.constant(Tensor::zeros(rows, 1))
            }
        };
        Ok((x, log_det))
    }

    /// Batch-mean negative log-likelihood `−[log N(f(z, s); 0, I) + log|det|]`.
    pub fn nll_tape(&self, tape: &mut Tape<'_>, p: &Bound, z: Var, s: Var) -> Result<Var, SkillError> {
        let (g, log_det) = self.forward_tape(tape, p, z, s)?;
        let [rows, cols] = tape.shape(g);
        let zero = tape.constant(Tensor::zeros(rows, cols));
        let lp = tape.gaussian_logpdf(g, zero, zero)?;
        let lp = tape.sum_cols(lp);
        let total = tape.add(lp, log_det)?;
        let m = tape.mean(total);
        Ok(tape.neg(m))
    }

    fn check(&self, x: &Tensor, s: &Tensor) -> Result<(), SkillError> {
        if x.cols() != self.z_dim {
            return Err(SkillError::Dim {
                what: "flow latent",
                found: x.cols(),
                expected: self.z_dim,
            });
        }
        if s.cols() != self.cond_dim || s.rows() != x.rows() {
            return Err(SkillError::Dim {
                what: "flow condition",
                found: s.cols(),
                expected: self.cond_dim,
            });
        }
        Ok(())
    }

    /// Batched `f(z, s)`: `[B, z]` latents and `[B, cond]` states.
    pub fn forward_batch(&self, z: &Tensor, s: &Tensor) -> Result<(Tensor, Tensor), SkillError> {
        self.check(z, s)?;
        if !z.is_finite() || !s.is_finite() {
            return Err(SkillError::NonFinite { layer: 0 });
        }
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let zv = tape.constant_ref(z);
        let sv = tape.constant_ref(s);
        let (g, ld) = self.forward_tape(&mut tape, &p, zv, sv)?;
        Ok((tape.value(g).clone(), tape.value(ld).clone()))
    }

    /// Exact layer-by-layer inverse `z = f⁻¹(g, s)`.
    pub fn inverse_batch(&self, g: &Tensor, s: &Tensor) -> Result<Tensor, SkillError> {
        self.check(g, s)?;
        if !g.is_finite() || !s.is_finite() {
            return Err(SkillError::NonFinite { layer: self.layers.len() });
        }
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let sv = tape.constant_ref(s);
        let mut x = tape.constant_ref(g);
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let Halves { passive, active } = self.split(&mut tape, x, layer.passive_first)?;
            let (ls, t) = self.scale_shift(&mut tape, &p, layer, passive, sv)?;
            let shifted = tape.sub(active, t)?;
            let neg = tape.neg(ls);
            let e = tape.exp(neg);
            let y = tape.mul(shifted, e)?;
            x = Self::join(&mut tape, passive, y, layer.passive_first)?;
            if !tape.value(x).is_finite() {
                return Err(SkillError::NonFinite { layer: i });
            }
        }
        Ok(tape.value(x).clone())
    }

    pub fn forward(&self, z: &[f64], s: &[f64]) -> Result<(Vec<f64>, f64), SkillError> {
        let (g, ld) = self.forward_batch(&Tensor::row(z), &Tensor::row(s))?;
        Ok((g.into_data(), ld.item()))
    }

    pub fn inverse(&self, g: &[f64], s: &[f64]) -> Result<Vec<f64>, SkillError> {
        Ok(self.inverse_batch(&Tensor::row(g), &Tensor::row(s))?.into_data())
    }

    /// Per-row NLL of `z` under the prior, without a tape gradient.
    pub fn nll_rows(&self, z: &Tensor, s: &Tensor) -> Result<Vec<f64>, SkillError> {
        let (g, ld) = self.forward_batch(z, s)?;
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        Ok((0..g.rows())
            .map(|r| {
                let lp: f64 = g.row_slice(r).iter().map(|v| -0.5 * v * v - half_log_2pi).sum();
                -(lp + ld.get(r, 0))
            })
            .collect())
    }
}

/// Per-row NLL under the uninformed `N(0, I)` baseline.
pub fn standard_normal_nll(z: &Tensor) -> Vec<f64> {
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    (0..z.rows())
        .map(|r| z.row_slice(r).iter().map(|v| 0.5 * v * v + half_log_2pi).sum())
        .collect()
}
