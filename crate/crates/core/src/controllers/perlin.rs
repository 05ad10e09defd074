//! One-dimensional gradient noise, one independent track per action dimension.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvAction, ACT_DIM};

/// Largest |dn/dx| of the unit-gradient noise below; a step of one sample
/// therefore moves the output by at most `2α · SLOPE_BOUND / λ`.
pub const SLOPE_BOUND: f64 = 2.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerlinConfig {
    /// Knot spacing in steps.
    pub lambda: usize,
    /// Amplitude per action dimension.
    pub alpha: [f64; ACT_DIM],
    pub seed: u64,
}

impl Default for PerlinConfig {
    fn default() -> Self {
        Self {
            lambda: 10,
            alpha: [0.3; ACT_DIM],
            seed: 0,
        }
    }
}

impl PerlinConfig {
    pub fn silent() -> Self {
        Self {
            alpha: [0.0; ACT_DIM],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.lambda < 2 {
            return Err(format!("perlin knot spacing must be >= 2, got {}", self.lambda));
        }
        if self.alpha.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(format!("perlin amplitudes must be finite and >= 0, got {:?}", self.alpha));
        }
        Ok(())
    }
}

/// Knot gradients for a fixed number of steps. Samples past the generated
/// range extend the track deterministically on demand.
#[derive(Clone, Debug)]
pub struct PerlinTrack {
    lambda: usize,
    alpha: [f64; ACT_DIM],
    gradients: Vec<[f64; ACT_DIM]>,
    rng: ChaCha8Rng,
}

impl PerlinTrack {
    pub fn new(config: &PerlinConfig, stream: u64) -> Self {
        let seed = config.seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        Self {
            lambda: config.lambda.max(2),
            alpha: config.alpha,
            gradients: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn gradient(&mut self, knot: usize) -> [f64; ACT_DIM] {
        while self.gradients.len() <= knot {
            let mut g = [0.0; ACT_DIM];
            for v in &mut g {
                *v = self.rng.random_range(-1.0..=1.0);
            }
            self.gradients.push(g);
        }
        self.gradients[knot]
    }

    /// Noise at step `t`; `|value| ≤ α` per dimension.
    pub fn sample(&mut self, t: usize) -> EnvAction {
        let knot = t / self.lambda;
        let f = (t % self.lambda) as f64 / self.lambda as f64;
        let g0 = self.gradient(knot);
        let g1 = self.gradient(knot + 1);
        let mut out = [0.0; ACT_DIM];
        for d in 0..ACT_DIM {
            out[d] = 2.0 * self.alpha[d] * gradient_noise(g0[d], g1[d], f);
        }
        out
    }
}

pub fn smoothstep(f: f64) -> f64 {
    f * f * (3.0 - 2.0 * f)
}

/// Classic 1-D gradient noise between two knots, `f ∈ [0, 1)`. Bounded by
/// 1/2 for gradients in [-1, 1].
pub fn gradient_noise(g0: f64, g1: f64, f: f64) -> f64 {
    let s = smoothstep(f);
    (1.0 - s) * g0 * f + s * g1 * (f - 1.0)
}

/// Convenience wrapper around [`PerlinTrack::sample`].
pub fn perlin_sample(track: &mut PerlinTrack, t: usize) -> EnvAction {
    track.sample(t)
}
