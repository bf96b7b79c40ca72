//! Registered finite-difference suites, one per differentiable op plus the full
//! model loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{EncoderModel, EncodingMethod, ModelConfig};
use crate::grad::check::{check_instance, random_tensor, CheckReport, REL_TOL};
use crate::grad::{OpKind, Tape, Tensor, Var};
use crate::sketch::{init_sketch_params, SketchMode, SketchParams};
use crate::{Error, Exec, Modality, Result};

pub const DEFAULT_INSTANCES: usize = 10;

/// Names accepted by [`SuiteOptions::ops`], in run order.
pub const OPS: &[&str] = &[
    "linear",
    "bias",
    "relu",
    "abs",
    "signed_sqrt",
    "l2_normalize",
    "count_sketch",
    "count_sketch_temporal",
    "circular_conv",
    "tcbp",
    "cbp",
    "sum_pool",
    "mean_pool",
    "flatten",
    "pair_loss",
    "hinge",
    "add_scale",
    "model",
    "model_cbp",
    "model_meanpool",
    "model_concat",
];

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    /// Subset of [`OPS`] to run; `None` runs everything.
    pub ops: Option<Vec<String>>,
    pub instances: usize,
    pub seed: u64,
    /// Corrupts the backward rule of one op kind on every tape.
    pub fault: Option<OpKind>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { ops: None, instances: DEFAULT_INSTANCES, seed: 0, fault: None }
    }
}

/// Parses an op-kind name as used by `--inject-fault`.
pub fn parse_op_kind(name: &str) -> Result<OpKind> {
    Ok(match name {
        "matmul" | "linear" => OpKind::MatMul,
        "add_bias" | "bias" => OpKind::AddBias,
        "relu" => OpKind::Relu,
        "abs" => OpKind::Abs,
        "signed_sqrt" => OpKind::SignedSqrt,
        "l2_normalize" => OpKind::L2Normalize,
        "sketch_columns" | "count_sketch" => OpKind::SketchColumns,
        "sketch_temporal" => OpKind::SketchTemporal,
        "circ_conv" | "circular_conv" => OpKind::CircConv,
        "sum_cols" | "sum_pool" => OpKind::SumCols,
        "mean_cols" | "mean_pool" => OpKind::MeanCols,
        "flatten_cols" | "flatten" => OpKind::FlattenCols,
        "pair_loss" => OpKind::PairLoss,
        "hinge" => OpKind::Hinge,
        "add" => OpKind::Add,
        "scale" => OpKind::Scale,
        other => return Err(Error::arg(format!("unknown op kind {other:?}"))),
    })
}

/// Runs the selected suites, `instances` random draws each.
pub fn run_suite(opts: &SuiteOptions, exec: Exec) -> Result<Vec<CheckReport>> {
    if opts.instances == 0 {
        return Err(Error::arg("instances must be at least 1"));
    }
    let selected: Vec<&'static str> = match &opts.ops {
        None => OPS.to_vec(),
        Some(names) => names
            .iter()
            .map(|n| {
                OPS.iter()
                    .copied()
                    .find(|op| op == n)
                    .ok_or_else(|| Error::arg(format!("unknown gradcheck op {n:?}; known: {}", OPS.join(", "))))
            })
            .collect::<Result<_>>()?,
    };
    selected
        .into_iter()
        .map(|op| {
            let errs = exec.map_range(opts.instances, |k| {
                check_op(op, opts.seed.wrapping_mul(1_000_003).wrapping_add(k as u64), opts.fault)
            });
            let max_rel_err = errs.into_iter().collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
            Ok(CheckReport {
                op: op.to_string(),
                instances: opts.instances,
                max_rel_err,
                passed: max_rel_err < REL_TOL,
            })
        })
        .collect()
}

fn sketch(c: usize, t: usize, d: usize, seed: u64, mode: SketchMode) -> Result<SketchParams> {
    init_sketch_params(c, t, d, seed, mode)
}

/// Maximum relative error of one random instance of `op`.
pub fn check_op(op: &str, seed: u64, fault: Option<OpKind>) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rt = |r, c, lo, hi| random_tensor(&mut rng, r, c, lo, hi);
    match op {
        "linear" => {
            let (w, x) = (rt(3, 4, 0.1, 1.0), rt(4, 2, 0.1, 1.0));
            check_instance(&[w, x], seed, fault, |tp, v| tp.matmul(v[0], v[1]))
        }
        "bias" => {
            let (x, b) = (rt(4, 3, 0.1, 1.0), rt(4, 1, 0.1, 1.0));
            check_instance(&[x, b], seed, fault, |tp, v| tp.add_bias(v[0], v[1]))
        }
        "relu" => check_instance(&[rt(5, 2, 0.05, 1.0)], seed, fault, |tp, v| Ok(tp.relu(v[0]))),
        "abs" => check_instance(&[rt(5, 2, 0.05, 1.0)], seed, fault, |tp, v| Ok(tp.abs(v[0]))),
        "signed_sqrt" => check_instance(&[rt(6, 1, 0.1, 2.0)], seed, fault, |tp, v| Ok(tp.signed_sqrt(v[0]))),
        "l2_normalize" => check_instance(&[rt(6, 1, 0.1, 1.0)], seed, fault, |tp, v| Ok(tp.l2_normalize(v[0]))),
        "count_sketch" => {
            let p = sketch(5, 1, 7, seed, SketchMode::Cbp)?;
            check_instance(&[rt(5, 3, 0.1, 1.0)], seed, fault, |tp, v| tp.sketch_columns(v[0], p.h1(), p.s1(), 7))
        }
        "count_sketch_temporal" => {
            let p = sketch(5, 3, 7, seed, SketchMode::Tcbp)?;
            check_instance(&[rt(5, 3, 0.1, 1.0)], seed, fault, |tp, v| tp.sketch_temporal(v[0], p.h1(), p.s1(), 7))
        }
        "circular_conv" => {
            let p = sketch(1, 1, 7, seed, SketchMode::Cbp)?;
            let (a, b) = (rt(7, 2, 0.1, 1.0), rt(7, 2, 0.1, 1.0));
            check_instance(&[a, b], seed, fault, |tp, v| tp.circ_conv(v[0], v[1], p.convolver()))
        }
        "tcbp" => {
            let p = sketch(4, 3, 8, seed, SketchMode::Tcbp)?;
            check_instance(&[rt(4, 3, 0.1, 1.0)], seed, fault, |tp, v| tcbp_graph(tp, v[0], &p))
        }
        "cbp" => {
            let p = sketch(4, 1, 8, seed, SketchMode::Cbp)?;
            check_instance(&[rt(4, 3, 0.1, 1.0)], seed, fault, |tp, v| {
                let a = tp.sketch_columns(v[0], p.h1(), p.s1(), 8)?;
                let b = tp.sketch_columns(v[0], p.h2(), p.s2(), 8)?;
                let y = tp.circ_conv(a, b, p.convolver())?;
                Ok(tp.sum_cols(y))
            })
        }
        "sum_pool" => check_instance(&[rt(4, 3, 0.1, 1.0)], seed, fault, |tp, v| Ok(tp.sum_cols(v[0]))),
        "mean_pool" => check_instance(&[rt(4, 3, 0.1, 1.0)], seed, fault, |tp, v| Ok(tp.mean_cols(v[0]))),
        "flatten" => check_instance(&[rt(4, 3, 0.1, 1.0)], seed, fault, |tp, v| Ok(tp.flatten_cols(v[0]))),
        "pair_loss" => {
            let (a, b) = (rt(6, 1, 0.1, 1.0), rt(6, 1, 0.1, 1.0));
            check_instance(&[a, b], seed, fault, |tp, v| tp.pair_loss(v[0], v[1]))
        }
        "hinge" => {
            // Values in [0.05, 0.4] or beyond the margin, never at the kink.
            let x = rt(1, 1, 0.05, 0.4);
            let margin = if seed.is_multiple_of(2) { 0.5 } else { 0.01 };
            check_instance(&[x], seed, fault, move |tp, v| tp.hinge(v[0], margin))
        }
        "add_scale" => {
            let (a, b) = (rt(3, 2, 0.1, 1.0), rt(3, 2, 0.1, 1.0));
            check_instance(&[a, b], seed, fault, |tp, v| {
                let s = tp.add(v[0], v[1])?;
                Ok(tp.scale(s, -0.7))
            })
        }
        "model" => model_check(EncodingMethod::Tcbp, seed, fault),
        "model_cbp" => model_check(EncodingMethod::Cbp, seed, fault),
        "model_meanpool" => model_check(EncodingMethod::MeanPool, seed, fault),
        "model_concat" => model_check(EncodingMethod::ConcatTMlp, seed, fault),
        other => Err(Error::arg(format!("unknown gradcheck op {other:?}"))),
    }
}

fn tcbp_graph<'p>(tp: &mut Tape<'p>, x: Var, p: &'p SketchParams) -> Result<Var> {
    let d = p.dim();
    let u1 = tp.sketch_temporal(x, p.h1(), p.s1(), d)?;
    let u2 = tp.sketch_temporal(x, p.h2(), p.s2(), d)?;
    tp.circ_conv(u1, u2, p.convolver())
}

/// Full model on a tiny instance (`c = 6`, `t = 2`, `d = 8`), differentiated with
/// respect to three input clips and every parameter.
///
/// The loss is `L(a, b) + L(b, a) + max(0, alpha - L(a, n)) + L(a, 0)` with `alpha`
/// just above `L(a, n)`, so every term is active. The last term breaks the
/// invariance of the pairwise terms under a common shift of all `phi`.
///
/// The output layer is drawn at `OUT_SCALE` times its usual init so the loss is
/// O(1e-3), the size of real ordering losses. Some gradients are exactly zero by
/// structure (for example the reduce-layer bias under TCBP when a channel's
/// temporal signs cancel), and central differences resolve those only to about
/// `ulp(loss) / FD_STEP`; at O(1) losses that exceeds the absolute allowance
/// `REL_TOL * DENOM_FLOOR`.
///
/// Instances are redrawn until every non-smooth point (signed square root, ReLU,
/// `abs`, the pair-loss max) is well away from the evaluation point. Inputs to
/// the signed square root need the widest margin: its higher derivatives grow
/// like `|y|^-2.5` and would otherwise dominate the truncation error.
fn model_check(method: EncodingMethod, seed: u64, fault: Option<OpKind>) -> Result<f64> {
    const OUT_SCALE: f64 = 0.1;
    const MARGIN: f64 = 1e-2;
    const PHI_MARGIN: f64 = 1e-3;
    const SQRT_MARGIN: f64 = 0.2;
    const ATTEMPTS: u64 = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for attempt in 0..ATTEMPTS {
        let mut cfg = ModelConfig::new(method, &[(Modality::A, 2), (Modality::I, 4)]);
        cfg.t = 2;
        cfg.reduce_dim = 4;
        cfg.sketch_dim = 8;
        cfg.hidden_dim = 5;
        cfg.out_dim = 3;
        cfg.seed = seed.wrapping_mul(ATTEMPTS).wrapping_add(attempt);
        let mut model = EncoderModel::new(cfg)?;
        let n_params = model.params().len();
        for p in &mut model.params_mut()[n_params - 2..] {
            if p.name == "w2.bias" {
                p.value = random_tensor(&mut rng, p.value.rows, 1, 0.0, 1.0);
            }
            p.value.data.iter_mut().for_each(|v| *v *= OUT_SCALE);
        }
        let c = model.config().input_channels();
        let mut inputs: Vec<Tensor> = (0..3).map(|_| random_tensor(&mut rng, c, 2, 1.0, 3.0)).collect();
        inputs.extend(model.params().iter().map(|p| p.value.clone()));
        let margins = Margins { kink: MARGIN, phi: PHI_MARGIN, sqrt: SQRT_MARGIN };
        let Some(alpha) = smooth_margin(&model, &inputs, &margins)? else {
            continue;
        };
        let model = &model;
        return check_instance(&inputs, seed, fault, |tp, v| {
            let params = &v[3..];
            let a = model.forward(tp, params, v[0])?.phi;
            let b = model.forward(tp, params, v[1])?.phi;
            let n = model.forward(tp, params, v[2])?.phi;
            let ab = tp.pair_loss(a, b)?;
            let ba = tp.pair_loss(b, a)?;
            let an = tp.pair_loss(a, n)?;
            let h = tp.hinge(an, alpha)?;
            let zero = tp.leaf(Tensor::zeros(model.config().out_dim, 1));
            let anchor = tp.pair_loss(a, zero)?;
            let s = tp.add(ab, ba)?;
            let s = tp.add(s, h)?;
            tp.add(s, anchor)
        });
    }
    Err(Error::arg(format!("no smooth model instance for seed {seed}")))
}

struct Margins {
    kink: f64,
    phi: f64,
    sqrt: f64,
}

/// Hinge margin for a smooth instance, or `None` if some kink is too close.
fn smooth_margin(model: &EncoderModel, inputs: &[Tensor], m: &Margins) -> Result<Option<f64>> {
    let mut tp = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tp.leaf(x.clone())).collect();
    let params = &vars[3..];
    let mut phis = Vec::new();
    for &x in &vars[..3] {
        let f = model.forward(&mut tp, params, x)?;
        let away = |v: Var, gap: f64| tp.value(v).iter().all(|z| z.abs() >= gap);
        if !(away(f.encoded, m.sqrt) && away(f.v_clip, m.kink) && away(f.phi, m.phi)) {
            return Ok(None);
        }
        phis.push(tp.value(f.phi).to_vec());
    }
    let apart = |p: &[f64], q: &[f64]| p.iter().zip(q).all(|(x, y)| (x - y).abs() >= m.phi);
    if !apart(&phis[0], &phis[1]) || !apart(&phis[0], &phis[2]) {
        return Ok(None);
    }
    let an: f64 = phis[0].iter().zip(&phis[2]).map(|(x, y)| (x - y).max(0.0).powi(2)).sum();
    Ok(Some(2.0 * an + 1e-3))
}
