//! Central finite-difference checking of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{OpKind, Tape, Tensor, Var};
use crate::Result;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const DENOM_FLOOR: f64 = 1e-8;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub op: String,
    pub instances: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Projected scalar, raw output and (when projected) per-input gradients.
type Evaluation = (f64, Vec<f64>, Option<Vec<Vec<f64>>>);

/// Checks the gradient of `<r, f(inputs)>` for a fixed random projection `r`.
///
/// `build` records `f` on a fresh tape given leaf handles for `inputs`. Every
/// input element is perturbed by `+-FD_STEP`. Returns the largest elementwise
/// relative error.
pub fn check_instance<'p, F>(inputs: &[Tensor], seed: u64, fault: Option<OpKind>, build: F) -> Result<f64>
where
    F: Fn(&mut Tape<'p>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor], proj: Option<&[f64]>| -> Result<Evaluation> {
        let mut tape: Tape<'p> = Tape::new();
        if let Some(op) = fault {
            tape.inject_fault(op);
        }
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let value = tape.value(out).to_vec();
        let Some(r) = proj else {
            return Ok((0.0, value, None));
        };
        let scalar = value.iter().zip(r).map(|(a, b)| a * b).sum();
        let grads = tape.backward(out, r)?;
        let per_input = vars.iter().zip(xs).map(|(&v, x)| grads.get_or_zeros(v, x.len())).collect();
        Ok((scalar, value, Some(per_input)))
    };

    let (_, probe, _) = eval(inputs, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<f64> = (0..probe.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, _, analytic) = eval(inputs, Some(&r))?;
    let analytic = analytic.expect("projection given");

    let scalar_at = |xs: &[Tensor]| -> Result<f64> {
        let (_, value, _) = eval(xs, None)?;
        Ok(value.iter().zip(&r).map(|(a, b)| a * b).sum())
    };

    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for (e, (&orig, &a)) in input.data.iter().zip(&analytic[k]).enumerate() {
            work[k].data[e] = orig + FD_STEP;
            let up = scalar_at(&work)?;
            work[k].data[e] = orig - FD_STEP;
            let down = scalar_at(&work)?;
            work[k].data[e] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}

/// Random tensor with entries of magnitude in `[lo, hi]` and random sign, which
/// keeps inputs away from the kinks of `abs`, `relu` and the signed square root.
pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.random_range(lo..=hi);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor { rows, cols, data }
}
