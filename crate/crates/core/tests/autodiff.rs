mod common;

use common::{fd_check, rng};
use proptest::prelude::*;
use rand::Rng;
use reskill::autodiff::nn::{Activation, Lstm, Mlp, MlpSpec};
use reskill::autodiff::{AutodiffError, ParamSet, Tape, Tensor};

fn random_tensor(r: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| r.random_range(-scale..scale)).collect()).unwrap()
}

#[test]
fn forward_examples() {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::scalar(0.0));
    let t = tape.tanh(z);
    assert_eq!(tape.value(t).item(), 0.0);

    let x = Tensor::new(3, 1, vec![0.3, -1.2, 7.5]).unwrap();
    let i3 = tape.constant(Tensor::identity(3));
    let xv = tape.constant(x.clone());
    let y = tape.matmul(i3, xv).unwrap();
    assert_eq!(tape.value(y), &x);

    let zero = tape.constant(Tensor::scalar(0.0));
    let lp = tape.gaussian_logpdf(zero, zero, zero).unwrap();
    let expected = -0.5 * (2.0 * std::f64::consts::PI).ln();
    assert!((tape.value(lp).item() - expected).abs() < 1e-15);
    assert!((expected + 0.918939).abs() < 1e-6);
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0));
    let y = tape.square(x);
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap(), &[6.0]);

    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(0.0));
    let y = tape.tanh(x);
    assert_eq!(tape.backward(y).unwrap().get(x).unwrap(), &[1.0]);

    // x*x through two paths accumulates
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(2.0));
    let y = tape.mul(x, x).unwrap();
    assert_eq!(tape.backward(y).unwrap().get(x).unwrap(), &[4.0]);
}

#[test]
fn backward_requires_a_recorded_node() {
    let mut other = Tape::new();
    let a = other.param(Tensor::scalar(1.0));
    let b = other.exp(a);
    let empty = Tape::new();
    assert!(matches!(empty.backward(b), Err(AutodiffError::NotRecorded { .. })));
}

#[test]
fn shape_errors_name_the_op() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(2, 3));
    let b = tape.constant(Tensor::zeros(2, 3));
    let err = tape.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        AutodiffError::ShapeMismatch {
            op: "matmul",
            lhs: [2, 3],
            rhs: [2, 3]
        }
    );
    assert!(err.to_string().contains("matmul"));
    let c = tape.constant(Tensor::zeros(3, 2));
    assert!(matches!(tape.add(a, c), Err(AutodiffError::ShapeMismatch { op: "add", .. })));
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut r = rng(7);
    let mut p = ParamSet::new();
    let a = p.add("a", random_tensor(&mut r, 3, 4, 1.0));
    let b = p.add("b", random_tensor(&mut r, 4, 2, 1.0));
    let row = p.add("row", random_tensor(&mut r, 1, 2, 1.0));
    let pos = p.add("pos", Tensor::new(3, 2, (0..6).map(|_| r.random_range(0.5..2.0)).collect()).unwrap());
    let ls = p.add("ls", random_tensor(&mut r, 1, 2, 0.5));
    let gain = p.add("gain", random_tensor(&mut r, 1, 4, 1.5));
    let bias = p.add("bias", random_tensor(&mut r, 1, 4, 0.5));

    let report = fd_check(&p, 1e-5, None, 1, |t, q| {
        let ab = t.matmul(q.get(a), q.get(b))?;
        let ab = t.add_row(ab, q.get(row))?;
        let th = t.tanh(ab);
        let sp = t.softplus(ab);
        let sg = t.sigmoid(ab);
        let e = t.exp(th);
        let l = t.log(q.get(pos));
        let m = t.mul(sp, l)?;
        let s = t.sub(m, sg)?;
        let rl = t.relu(s);
        let cl = t.clamp(s, -0.3, 0.4);
        let mn = t.minimum(e, cl)?;
        let ln = t.layer_norm(q.get(a), q.get(gain), q.get(bias))?;
        let sl = t.slice_cols(ln, 1, 2)?;
        let cat = t.concat_cols(&[sl, rl, mn])?;
        let sq = t.square(cat);
        let sc = t.scale(sq, 0.7);
        let mean_part = t.mean(sc);
        let lsb = t.broadcast_rows(q.get(ls), 3)?;
        let lp = t.gaussian_logpdf(th, sl, lsb)?;
        let lp = t.sum_cols(lp);
        let lp = t.add_scalar(lp, 0.25);
        let lp = t.sum(lp);
        t.add(mean_part, lp)
    });
    assert!(report.max_rel < 1e-6, "{} (max {})", report.worst, report.max_rel);
}

#[test]
fn lstm_gradients_reach_both_states() {
    let mut r = rng(3);
    let mut p = ParamSet::new();
    let lstm = Lstm::new(&mut p, "lstm", 5, 6, &mut r);
    let xs: Vec<_> = (0..4).map(|i| p.add(format!("x{i}"), random_tensor(&mut r, 2, 5, 1.0))).collect();
    let h0 = p.add("h0", random_tensor(&mut r, 2, 6, 0.5));
    let c0 = p.add("c0", random_tensor(&mut r, 2, 6, 0.5));
    let loss = |t: &mut Tape<'_>, q: &reskill::autodiff::Bound| {
        let steps: Vec<_> = xs.iter().map(|&x| q.get(x)).collect();
        let h = lstm.forward(t, q, &steps, q.get(h0), q.get(c0))?;
        let sq = t.square(h);
        Ok(t.sum(sq))
    };
    let report = fd_check(&p, 1e-5, None, 2, loss);
    assert!(report.max_rel < 1e-6, "{}", report.worst);

    let mut tape = Tape::new();
    let bound = p.bind(&mut tape);
    let out = loss(&mut tape, &bound).unwrap();
    let g = tape.backward(out).unwrap();
    let norm = |v: reskill::autodiff::Var| g.get(v).unwrap().iter().map(|x| x * x).sum::<f64>();
    assert!(norm(bound.get(h0)) > 1e-8);
    assert!(norm(bound.get(c0)) > 1e-8);
}

#[test]
fn mlp_forward_and_gradients_are_deterministic() {
    let build = || {
        let mut r = rng(11);
        let mut p = ParamSet::new();
        let spec = MlpSpec {
            input: 6,
            hidden: vec![8, 8],
            output: 3,
            activation: Activation::Relu,
            layer_norm: true,
            zero_output: false,
        };
        let mlp = Mlp::new(&mut p, "m", &spec, &mut r);
        let x = random_tensor(&mut r, 4, 6, 1.0);
        (p, mlp, x)
    };
    let run = || {
        let (p, mlp, x) = build();
        let mut tape = Tape::new();
        let b = p.bind(&mut tape);
        let xv = tape.constant(x);
        let y = mlp.forward(&mut tape, &b, xv).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        let bits: Vec<u64> = b
            .grads(&g)
            .iter()
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect();
        (tape.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), bits)
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_tanh_mlp_gradients_match(seed in 0u64..10_000, rows in 1usize..5) {
        let mut r = rng(seed);
        let mut p = ParamSet::new();
        let spec = MlpSpec {
            input: 3,
            hidden: vec![5],
            output: 2,
            activation: Activation::Tanh,
            layer_norm: seed % 2 == 0,
            zero_output: false,
        };
        let mlp = Mlp::new(&mut p, "m", &spec, &mut r);
        let x = random_tensor(&mut r, rows, 3, 2.0);
        let report = fd_check(&p, 1e-5, None, seed, |t, q| {
            let xv = t.constant(x.clone());
            let y = mlp.forward(t, q, xv)?;
            let y = t.tanh(y);
            Ok(t.sum(y))
        });
        prop_assert!(report.max_rel < 1e-6, "{}", report.worst);
    }
}
