//! Tape-based reverse-mode differentiation.
//!
//! Operations execute eagerly and push a node onto the [`Tape`]. Nodes are
//! only ever appended, so the node order is a topological order and
//! [`Tape::backward`] is a single reverse sweep.

use std::borrow::Cow;
use std::f64::consts::PI;

use super::tensor::gemm;
use super::{AutodiffError, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    BroadcastRows(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    SliceCols { src: Var, start: usize },
    ConcatCols(Vec<Var>),
    GaussianLogpdf { x: Var, mean: Var, log_std: Var },
    Minimum(Var, Var),
    Clamp { src: Var, lo: f64, hi: f64 },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    LstmCell {
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
        gates: Vec<f64>,
        tanh_c: Vec<f64>,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations for one forward pass.
///
/// Leaves may borrow their values (`'a`) so frozen weights are never copied.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    shapes: Vec<[usize; 2]>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if no path reaches it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor; zeros when `v` did not influence the output.
    pub fn tensor(&self, v: Var) -> Tensor {
        let [r, c] = self.shapes[v.0];
        match self.get(v) {
            Some(g) => Tensor::new(r, c, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(r, c),
        }
    }
}

fn check_same(op: &'static str, a: [usize; 2], b: [usize; 2]) -> Result<(), AutodiffError> {
    if a != b {
        return Err(AutodiffError::ShapeMismatch { op, lhs: a, rhs: b });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Differentiable leaf owning its value.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Differentiable leaf borrowing its value.
    pub fn param_ref(&mut self, value: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, value: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Copies `v` into a new leaf that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let [m, k] = self.shape(a);
        let [k2, n] = self.shape(b);
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: [m, k],
                rhs: [k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(m, n, out)?, Op::MatMul(a, b), rg))
    }

    fn zip(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, AutodiffError> {
        let sa = self.shape(a);
        check_same(op_name, sa, self.shape(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(sa[0], sa[1], data)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip("minimum", a, b, f64::min, Op::Minimum(a, b))
    }

    /// Adds the `[1, n]` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let [m, n] = self.shape(a);
        let sr = self.shape(row);
        if sr != [1, n] {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_row",
                lhs: [m, n],
                rhs: sr,
            });
        }
        let r = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_mut(n.max(1)) {
            for (v, b) in chunk.iter_mut().zip(r) {
                *v += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(Tensor::new(m, n, data)?, Op::AddRow(a, row), rg))
    }

    /// Repeats a `[1, n]` row `m` times.
    pub fn broadcast_rows(&mut self, row: Var, m: usize) -> Result<Var, AutodiffError> {
        let s = self.shape(row);
        if s[0] != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "broadcast_rows",
                lhs: s,
                rhs: [1, s[1]],
            });
        }
        let r = self.value(row).data();
        let mut data = Vec::with_capacity(m * s[1]);
        for _ in 0..m {
            data.extend_from_slice(r);
        }
        let rg = self.rg(row);
        Ok(self.push(Tensor::new(m, s[1], data)?, Op::BroadcastRows(row), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp { src: a, lo, hi })
    }

    /// Sum of all elements as a `[1, 1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Per-row sums, `[m, n] -> [m, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let [m, n] = t.shape();
        let data: Vec<f64> = (0..m).map(|r| t.data()[r * n..(r + 1) * n].iter().sum()).collect();
        let rg = self.rg(a);
        self.push(Tensor::new(m, 1, data).expect("shape"), Op::SumCols(a), rg)
    }

    /// Columns `start..start + len` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let [m, n] = self.shape(a);
        if start + len > n {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice",
                lhs: [m, n],
                rhs: [m, start + len],
            });
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(m, len, data)?, Op::SliceCols { src: a, start }, rg))
    }

    /// Concatenates along columns; all parts must share the row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let m = parts.first().map(|&p| self.shape(p)[0]).unwrap_or(0);
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[0] != m {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: [m, total],
                    rhs: s,
                });
            }
            total += s[1];
        }
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(m, total, data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Elementwise log-density of `N(mean, exp(log_std)^2)` at `x`.
    pub fn gaussian_logpdf(&mut self, x: Var, mean: Var, log_std: Var) -> Result<Var, AutodiffError> {
        let s = self.shape(x);
        check_same("gaussian_logpdf", s, self.shape(mean))?;
        check_same("gaussian_logpdf", s, self.shape(log_std))?;
        let half_log_2pi = 0.5 * (2.0 * PI).ln();
        let (xv, mv, lv) = (self.value(x), self.value(mean), self.value(log_std));
        let data = xv
            .data()
            .iter()
            .zip(mv.data())
            .zip(lv.data())
            .map(|((&x, &m), &l)| {
                let z = (x - m) * (-l).exp();
                -0.5 * z * z - l - half_log_2pi
            })
            .collect();
        let rg = self.rg(x) || self.rg(mean) || self.rg(log_std);
        Ok(self.push(
            Tensor::new(s[0], s[1], data)?,
            Op::GaussianLogpdf { x, mean, log_std },
            rg,
        ))
    }

    /// Row-wise layer normalisation with learned `[1, n]` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, AutodiffError> {
        const EPS: f64 = 1e-5;
        let [m, n] = self.shape(x);
        check_same("layer_norm", [1, n], self.shape(gain))?;
        check_same("layer_norm", [1, n], self.shape(bias))?;
        let xv = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &xv[r * n..(r + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + EPS).sqrt();
            inv_std[r] = inv;
            for j in 0..n {
                let h = (row[j] - mu) * inv;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            Tensor::new(m, n, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// One LSTM step. Gate order in the weight columns is (input, forget,
    /// cell, output). Returns `[m, 2n]` holding `h'` then `c'`.
    pub fn lstm_cell(
        &mut self,
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
    ) -> Result<Var, AutodiffError> {
        let [m, d] = self.shape(x);
        let [mh, n] = self.shape(h);
        check_same("lstm_cell", [m, n], [mh, n])?;
        check_same("lstm_cell", [m, n], self.shape(c))?;
        check_same("lstm_cell", [d, 4 * n], self.shape(w_ih))?;
        check_same("lstm_cell", [n, 4 * n], self.shape(w_hh))?;
        check_same("lstm_cell", [1, 4 * n], self.shape(bias))?;
        let mut gates = vec![0.0; m * 4 * n];
        gemm(m, d, 4 * n, self.value(x).data(), false, self.value(w_ih).data(), false, &mut gates, false);
        gemm(m, n, 4 * n, self.value(h).data(), false, self.value(w_hh).data(), false, &mut gates, true);
        let bv = self.value(bias).data();
        let cv = self.value(c).data();
        let mut out = vec![0.0; m * 2 * n];
        let mut tanh_c = vec![0.0; m * n];
        for r in 0..m {
            let g = &mut gates[r * 4 * n..(r + 1) * 4 * n];
            for (v, b) in g.iter_mut().zip(bv) {
                *v += b;
            }
            for j in 0..n {
                g[j] = sigmoid(g[j]);
                g[n + j] = sigmoid(g[n + j]);
                g[2 * n + j] = g[2 * n + j].tanh();
                g[3 * n + j] = sigmoid(g[3 * n + j]);
                let c_new = g[n + j] * cv[r * n + j] + g[j] * g[2 * n + j];
                let tc = c_new.tanh();
                tanh_c[r * n + j] = tc;
                out[r * 2 * n + j] = g[3 * n + j] * tc;
                out[r * 2 * n + n + j] = c_new;
            }
        }
        let rg = [x, h, c, w_ih, w_hh, bias].iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::new(m, 2 * n, out)?,
            Op::LstmCell {
                x,
                h,
                c,
                w_ih,
                w_hh,
                bias,
                gates,
                tanh_c,
            },
            rg,
        ))
    }

    /// Back-propagates from a scalar output with seed gradient 1.
    pub fn backward(&self, output: Var) -> Result<Gradients, AutodiffError> {
        let shape = self.checked_shape(output)?;
        if shape != [1, 1] {
            return Err(AutodiffError::ShapeMismatch {
                op: "backward",
                lhs: shape,
                rhs: [1, 1],
            });
        }
        self.backward_with(output, &Tensor::scalar(1.0))
    }

    fn checked_shape(&self, v: Var) -> Result<[usize; 2], AutodiffError> {
        self.nodes
            .get(v.0)
            .map(|n| n.value.shape())
            .ok_or(AutodiffError::NotRecorded {
                index: v.0,
                len: self.nodes.len(),
            })
    }

    /// Back-propagates `seed` (shaped like `output`) through the tape.
    pub fn backward_with(&self, output: Var, seed: &Tensor) -> Result<Gradients, AutodiffError> {
        let shape = self.checked_shape(output)?;
        check_same("backward", shape, seed.shape())?;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed.data().to_vec());

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let y = node.value.data();
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let [m, k] = self.shape(*a);
                    let n = self.shape(*b)[1];
                    if self.rg(*a) {
                        let ga = accumulate(&mut grads[a.0], m * k);
                        gemm(m, n, k, &g, false, self.value(*b).data(), true, ga, true);
                    }
                    if self.rg(*b) {
                        let gb = accumulate(&mut grads[b.0], k * n);
                        gemm(k, m, n, self.value(*a).data(), true, &g, false, gb, true);
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    if self.rg(*a) {
                        let ga = accumulate(&mut grads[a.0], g.len());
                        ga.iter_mut().zip(&g).for_each(|(s, d)| *s += d);
                    }
                    if self.rg(*b) {
                        let gb = accumulate(&mut grads[b.0], g.len());
                        gb.iter_mut().zip(&g).for_each(|(s, d)| *s += sign * d);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    if self.rg(*a) {
                        let ga = accumulate(&mut grads[a.0], g.len());
                        for j in 0..g.len() {
                            ga[j] += g[j] * bv[j];
                        }
                    }
                    if self.rg(*b) {
                        let gb = accumulate(&mut grads[b.0], g.len());
                        for j in 0..g.len() {
                            gb[j] += g[j] * av[j];
                        }
                    }
                }
                Op::Minimum(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    if self.rg(*a) {
                        let ga = accumulate(&mut grads[a.0], g.len());
                        for j in 0..g.len() {
                            if av[j] <= bv[j] {
                                ga[j] += g[j];
                            }
                        }
                    }
                    if self.rg(*b) {
                        let gb = accumulate(&mut grads[b.0], g.len());
                        for j in 0..g.len() {
                            if av[j] > bv[j] {
                                gb[j] += g[j];
                            }
                        }
                    }
                }
                Op::AddRow(a, row) => {
                    let n = self.shape(*a)[1];
                    if self.rg(*a) {
                        let ga = accumulate(&mut grads[a.0], g.len());
                        ga.iter_mut().zip(&g).for_each(|(s, d)| *s += d);
                    }
                    if self.rg(*row) {
                        let gr = accumulate(&mut grads[row.0], n);
                        for chunk in g.chunks(n.max(1)) {
                            gr.iter_mut().zip(chunk).for_each(|(s, d)| *s += d);
                        }
                    }
                }
                Op::BroadcastRows(row) => {
                    let n = self.shape(*row)[1];
                    let gr = accumulate(&mut grads[row.0], n);
                    for chunk in g.chunks(n.max(1)) {
                        gr.iter_mut().zip(chunk).for_each(|(s, d)| *s += d);
                    }
                }
                Op::Scale(a, c) => {
                    let ga = accumulate(&mut grads[a.0], g.len());
                    ga.iter_mut().zip(&g).for_each(|(s, d)| *s += c * d);
                }
                Op::AddScalar(a) => {
                    let ga = accumulate(&mut grads[a.0], g.len());
                    ga.iter_mut().zip(&g).for_each(|(s, d)| *s += d);
                }
                Op::Tanh(a) => {
                    let ga = accumulate(&mut grads[a.0], g.len());
                    for j in 0..g.len() {
                        ga[j] += g[j] * (1.0 - y[j] * y[j]);
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = accumulate(&mut grads[a.0], g.len());
                    for j in 0..g.len() {
                        ga[j] += g[j] * y[j] * (1.0 - y[j]);
                    }
                }
                Op::Exp(a) => {
                    let ga = accumulate(&mut grads[a.0], g.len());
                    for j in 0..g.len() {
                        ga[j] += g[j] * y[j];
                    }
                }
                Op::Relu(a) | Op::Softplus(a) | Op::Log(a) | Op::Square(a) => {
                    let xv = self.value(*a).data();
                    let deriv: fn(f64) -> f64 = match node.op {
                        Op::Relu(_) => |x| if x > 0.0 { 1.0 } else { 0.0 },
                        Op::Softplus(_) => sigmoid,
                        Op::Log(_) => |x| 1.0 / x,
                        _ => |x| 2.0 * x,
                    };
                    let ga = accumulate(&mut grads[a.0], g.len());
                    for j in 0..g.len() {
                        ga[j] += g[j] * deriv(xv[j]);
                    }
                }
                Op::Clamp { src, lo, hi } => {
                    let xv = self.value(*src).data();
                    let ga = accumulate(&mut grads[src.0], g.len());
                    for j in 0..g.len() {
                        if xv[j] >= *lo && xv[j] <= *hi {
                            ga[j] += g[j];
                        }
                    }
                }
                Op::Sum(a) => {
                    let len = self.value(*a).len();
                    let ga = accumulate(&mut grads[a.0], len);
                    ga.iter_mut().for_each(|s| *s += g[0]);
                }
                Op::Mean(a) => {
                    let len = self.value(*a).len();
                    let d = g[0] / len.max(1) as f64;
                    let ga = accumulate(&mut grads[a.0], len);
                    ga.iter_mut().for_each(|s| *s += d);
                }
                Op::SumCols(a) => {
                    let [m, n] = self.shape(*a);
                    let ga = accumulate(&mut grads[a.0], m * n);
                    for r in 0..m {
                        ga[r * n..(r + 1) * n].iter_mut().for_each(|s| *s += g[r]);
                    }
                }
                Op::SliceCols { src, start } => {
                    let [m, n] = self.shape(*src);
                    let len = node.value.cols();
                    let ga = accumulate(&mut grads[src.0], m * n);
                    for r in 0..m {
                        for j in 0..len {
                            ga[r * n + start + j] += g[r * len + j];
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.cols();
                    let m = node.value.rows();
                    let mut offset = 0;
                    for p in parts {
                        let w = self.shape(*p)[1];
                        if self.rg(*p) {
                            let gp = accumulate(&mut grads[p.0], m * w);
                            for r in 0..m {
                                for j in 0..w {
                                    gp[r * w + j] += g[r * total + offset + j];
                                }
                            }
                        }
                        offset += w;
                    }
                }
                Op::GaussianLogpdf { x, mean, log_std } => {
                    let xv = self.value(*x).data();
                    let mv = self.value(*mean).data();
                    let lv = self.value(*log_std).data();
                    let len = g.len();
                    // d/dx = -(x-m)/s^2, d/dm = (x-m)/s^2, d/dlogs = ((x-m)/s)^2 - 1
                    let dm: Vec<f64> = (0..len).map(|j| (xv[j] - mv[j]) * (-2.0 * lv[j]).exp()).collect();
                    if self.rg(*x) {
                        let gx = accumulate(&mut grads[x.0], len);
                        for j in 0..len {
                            gx[j] -= g[j] * dm[j];
                        }
                    }
                    if self.rg(*mean) {
                        let gm = accumulate(&mut grads[mean.0], len);
                        for j in 0..len {
                            gm[j] += g[j] * dm[j];
                        }
                    }
                    if self.rg(*log_std) {
                        let gl = accumulate(&mut grads[log_std.0], len);
                        for j in 0..len {
                            gl[j] += g[j] * (dm[j] * (xv[j] - mv[j]) - 1.0);
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let [m, n] = self.shape(*x);
                    let gv = self.value(*gain).data();
                    if self.rg(*gain) {
                        let gg = accumulate(&mut grads[gain.0], n);
                        for r in 0..m {
                            for j in 0..n {
                                gg[j] += g[r * n + j] * xhat[r * n + j];
                            }
                        }
                    }
                    if self.rg(*bias) {
                        let gb = accumulate(&mut grads[bias.0], n);
                        for r in 0..m {
                            for j in 0..n {
                                gb[j] += g[r * n + j];
                            }
                        }
                    }
                    if self.rg(*x) {
                        let gx = accumulate(&mut grads[x.0], m * n);
                        let nf = n as f64;
                        for r in 0..m {
                            let mut s1 = 0.0;
                            let mut s2 = 0.0;
                            for j in 0..n {
                                let dh = g[r * n + j] * gv[j];
                                s1 += dh;
                                s2 += dh * xhat[r * n + j];
                            }
                            for j in 0..n {
                                let dh = g[r * n + j] * gv[j];
                                gx[r * n + j] += inv_std[r] / nf * (nf * dh - s1 - xhat[r * n + j] * s2);
                            }
                        }
                    }
                }
                Op::LstmCell {
                    x,
                    h,
                    c,
                    w_ih,
                    w_hh,
                    bias,
                    gates,
                    tanh_c,
                } => {
                    let [m, d] = self.shape(*x);
                    let n = self.shape(*h)[1];
                    let cv = self.value(*c).data();
                    let mut dgates = vec![0.0; m * 4 * n];
                    let mut dc_prev = vec![0.0; m * n];
                    for r in 0..m {
                        let gt = &gates[r * 4 * n..(r + 1) * 4 * n];
                        for j in 0..n {
                            let (ig, fg, cg, og) = (gt[j], gt[n + j], gt[2 * n + j], gt[3 * n + j]);
                            let tc = tanh_c[r * n + j];
                            let dh = g[r * 2 * n + j];
                            let dc = g[r * 2 * n + n + j] + dh * og * (1.0 - tc * tc);
                            let dg = &mut dgates[r * 4 * n..(r + 1) * 4 * n];
                            dg[j] = dc * cg * ig * (1.0 - ig);
                            dg[n + j] = dc * cv[r * n + j] * fg * (1.0 - fg);
                            dg[2 * n + j] = dc * ig * (1.0 - cg * cg);
                            dg[3 * n + j] = dh * tc * og * (1.0 - og);
                            dc_prev[r * n + j] = dc * fg;
                        }
                    }
                    if self.rg(*x) {
                        let gx = accumulate(&mut grads[x.0], m * d);
                        gemm(m, 4 * n, d, &dgates, false, self.value(*w_ih).data(), true, gx, true);
                    }
                    if self.rg(*h) {
                        let gh = accumulate(&mut grads[h.0], m * n);
                        gemm(m, 4 * n, n, &dgates, false, self.value(*w_hh).data(), true, gh, true);
                    }
                    if self.rg(*c) {
                        let gc = accumulate(&mut grads[c.0], m * n);
                        gc.iter_mut().zip(&dc_prev).for_each(|(s, v)| *s += v);
                    }
                    if self.rg(*w_ih) {
                        let gw = accumulate(&mut grads[w_ih.0], d * 4 * n);
                        gemm(d, m, 4 * n, self.value(*x).data(), true, &dgates, false, gw, true);
                    }
                    if self.rg(*w_hh) {
                        let gw = accumulate(&mut grads[w_hh.0], n * 4 * n);
                        gemm(n, m, 4 * n, self.value(*h).data(), true, &dgates, false, gw, true);
                    }
                    if self.rg(*bias) {
                        let gb = accumulate(&mut grads[bias.0], 4 * n);
                        for chunk in dgates.chunks(4 * n) {
                            gb.iter_mut().zip(chunk).for_each(|(s, v)| *s += v);
                        }
                    }
                }
            }
            // Interior nodes do not keep their gradient.
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        // Only leaves retain gradients; interior slots were taken above.
        Ok(Gradients { shapes, grads })
    }
}
