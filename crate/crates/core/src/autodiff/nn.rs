//! Small layer library on top of the tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AutodiffError, Bound, ParamId, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape<'_>, x: Var) -> Var {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
        }
    }
}

/// `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    /// Uniform(-1/sqrt(in), 1/sqrt(in)) initialisation, or all zeros.
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        output: usize,
        zero: bool,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let mut sample = |n: usize| -> Vec<f64> {
            if zero {
                vec![0.0; n]
            } else {
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
        };
        let w = Tensor::new(input, output, sample(input * output)).expect("shape");
        let b = Tensor::new(1, output, sample(output)).expect("shape");
        Self {
            weight: params.add(format!("{name}.weight"), w),
            bias: params.add(format!("{name}.bias"), b),
            input,
            output,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, p: &Bound, x: Var) -> Result<Var, AutodiffError> {
        let xw = tape.matmul(x, p.get(self.weight))?;
        tape.add_row(xw, p.get(self.bias))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(params: &mut ParamSet, name: &str, width: usize) -> Self {
        Self {
            gain: params.add(format!("{name}.gain"), Tensor::full(1, width, 1.0)),
            bias: params.add(format!("{name}.bias"), Tensor::zeros(1, width)),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, p: &Bound, x: Var) -> Result<Var, AutodiffError> {
        tape.layer_norm(x, p.get(self.gain), p.get(self.bias))
    }
}

/// Layout of a feed-forward network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
    pub layer_norm: bool,
    /// Zero-initialise the output layer.
    pub zero_output: bool,
}

/// Hidden layers are `linear -> [layer norm] -> activation`; the output
/// layer is linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Vec<(Linear, Option<LayerNorm>)>,
    pub out: Linear,
    pub activation: Activation,
}

impl Mlp {
    pub fn new<R: Rng>(params: &mut ParamSet, name: &str, spec: &MlpSpec, rng: &mut R) -> Self {
        let mut width = spec.input;
        let mut hidden = Vec::with_capacity(spec.hidden.len());
        for (i, &h) in spec.hidden.iter().enumerate() {
            let lin = Linear::new(params, &format!("{name}.l{i}"), width, h, false, rng);
            let ln = spec
                .layer_norm
                .then(|| LayerNorm::new(params, &format!("{name}.ln{i}"), h));
            hidden.push((lin, ln));
            width = h;
        }
        let out = Linear::new(params, &format!("{name}.out"), width, spec.output, spec.zero_output, rng);
        Self {
            hidden,
            out,
            activation: spec.activation,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, p: &Bound, x: Var) -> Result<Var, AutodiffError> {
        let mut h = x;
        for (lin, ln) in &self.hidden {
            h = lin.forward(tape, p, h)?;
            if let Some(ln) = ln {
                h = ln.forward(tape, p, h)?;
            }
            h = self.activation.apply(tape, h);
        }
        self.out.forward(tape, p, h)
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.first().map(|(l, _)| l.input).unwrap_or(self.out.input)
    }

    pub fn output_dim(&self) -> usize {
        self.out.output
    }
}

/// Single-layer LSTM unrolled over a sequence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng>(params: &mut ParamSet, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut sample = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let w_ih = Tensor::new(input, 4 * hidden, sample(input * 4 * hidden)).expect("shape");
        let w_hh = Tensor::new(hidden, 4 * hidden, sample(hidden * 4 * hidden)).expect("shape");
        let mut b = sample(4 * hidden);
        // forget-gate bias of 1 keeps early gradients alive
        b[hidden..2 * hidden].iter_mut().for_each(|v| *v += 1.0);
        Self {
            w_ih: params.add(format!("{name}.w_ih"), w_ih),
            w_hh: params.add(format!("{name}.w_hh"), w_hh),
            bias: params.add(format!("{name}.bias"), Tensor::new(1, 4 * hidden, b).expect("shape")),
            input,
            hidden,
        }
    }

    /// Runs the cell over `steps` (each `[batch, input]`) from `(h0, c0)` and
    /// returns the final hidden state.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        p: &Bound,
        steps: &[Var],
        h0: Var,
        c0: Var,
    ) -> Result<Var, AutodiffError> {
        let (mut h, mut c) = (h0, c0);
        for &x in steps {
            let hc = tape.lstm_cell(x, h, c, p.get(self.w_ih), p.get(self.w_hh), p.get(self.bias))?;
            h = tape.slice_cols(hc, 0, self.hidden)?;
            c = tape.slice_cols(hc, self.hidden, self.hidden)?;
        }
        Ok(h)
    }
}
