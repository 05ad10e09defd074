#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reskill::autodiff::{AutodiffError, Bound, ParamSet, Tape, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Relative error with a floor on the magnitude so that gradients that are
/// zero in both routes compare as equal.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

pub struct FdReport {
    pub max_rel: f64,
    pub checked: usize,
    pub worst: String,
}

/// Compares tape gradients of a scalar loss against central differences.
///
/// `loss` builds the forward pass for the given parameters. At most
/// `per_tensor` coordinates of each parameter tensor are probed (chosen at
/// random), `None` probes all of them.
pub fn fd_check<F>(params: &ParamSet, h: f64, per_tensor: Option<usize>, seed: u64, loss: F) -> FdReport
where
    F: for<'a> Fn(&mut Tape<'a>, &Bound) -> Result<Var, AutodiffError>,
{
    let analytic = {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let out = loss(&mut tape, &bound).expect("forward");
        let grads = tape.backward(out).expect("backward");
        bound.grads(&grads)
    };
    let eval = |p: &ParamSet| -> f64 {
        let mut tape = Tape::new();
        let bound = p.bind_frozen(&mut tape);
        let out = loss(&mut tape, &bound).expect("forward");
        tape.value(out).item()
    };
    let mut r = rng(seed);
    let mut work = params.clone();
    let mut report = FdReport {
        max_rel: 0.0,
        checked: 0,
        worst: String::new(),
    };
    for ti in 0..params.len() {
        let len = params.tensors()[ti].len();
        let idxs: Vec<usize> = match per_tensor {
            Some(k) if k < len => (0..k).map(|_| r.random_range(0..len)).collect(),
            _ => (0..len).collect(),
        };
        for j in idxs {
            let orig = work.tensors()[ti].data()[j];
            work.tensors_mut()[ti].data_mut()[j] = orig + h;
            let fp = eval(&work);
            work.tensors_mut()[ti].data_mut()[j] = orig - h;
            let fm = eval(&work);
            work.tensors_mut()[ti].data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[ti].data()[j];
            let e = rel_err(a, numeric);
            report.checked += 1;
            if e > report.max_rel {
                report.max_rel = e;
                report.worst = format!(
                    "{}[{j}]: analytic {a:e} numeric {numeric:e}",
                    params.name(reskill::autodiff::ParamId(ti))
                );
            }
        }
    }
    report
}
