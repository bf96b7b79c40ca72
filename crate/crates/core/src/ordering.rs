//! Order-violation loss, its negative-mining hinge, brute-force permutation
//! inference and the strict ordering accuracy.

use std::collections::BTreeMap;

use itertools::Itertools;
use serde::Serialize;

use crate::{Error, Result};

/// Largest scene size [`infer_order`] accepts unless overridden.
pub const DEFAULT_MAX_CLIPS: usize = 6;
/// Smallest scene size.
pub const MIN_CLIPS: usize = 2;
/// Default negative-mining margin.
pub const DEFAULT_ALPHA: f64 = 0.2;

/// `sum_k max(0, phi_i[k] - phi_j[k])^2`: zero iff `phi_i <= phi_j` elementwise,
/// i.e. clip `i` is consistent with preceding clip `j`.
pub fn pair_loss(phi_i: &[f64], phi_j: &[f64]) -> Result<f64> {
    if phi_i.len() != phi_j.len() {
        return Err(Error::arg(format!("pair loss lengths differ: {} vs {}", phi_i.len(), phi_j.len())));
    }
    Ok(phi_i
        .iter()
        .zip(phi_j)
        .map(|(a, b)| {
            let d = (a - b).max(0.0);
            d * d
        })
        .sum())
}

/// `max(0, alpha - L(phi_i, phi_j'))` for a corrupted pair.
pub fn negative_loss(phi_i: &[f64], phi_j_corrupt: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::arg(format!("margin must be positive, got {alpha}")));
    }
    Ok((alpha - pair_loss(phi_i, phi_j_corrupt)?).max(0.0))
}

/// Inferred ordering of one scene.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingResult {
    /// `permutation[k]` is the input index placed at position `k`.
    pub permutation: Vec<usize>,
    pub total_loss: f64,
    /// Whether the predicted sequence equals the ground truth.
    pub correct: bool,
}

/// `m x m` matrix of `pair_loss(phi_a, phi_b)` (clip `a` placed before `b`).
pub fn pairwise_losses(phis: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    let m = phis.len();
    let mut out = vec![vec![0.0; m]; m];
    for a in 0..m {
        for b in 0..m {
            if a != b {
                out[a][b] = pair_loss(phis[a], phis[b])?;
            }
        }
    }
    Ok(out)
}

/// Total loss of placing clips in `perm` order: the sum over every earlier/later
/// pair of its forward loss.
pub fn permutation_loss(losses: &[Vec<f64>], perm: &[usize]) -> f64 {
    let mut total = 0.0;
    for (x, &a) in perm.iter().enumerate() {
        for &b in &perm[x + 1..] {
            total += losses[a][b];
        }
    }
    total
}

/// Orders `phis` by exhaustive search over all `M!` permutations.
///
/// Pairwise losses are computed once (`M(M-1)` evaluations). Permutations are
/// visited in lexicographic order and only a strictly smaller total replaces the
/// incumbent, so ties resolve to the lexicographically smallest permutation.
/// The inputs are taken to be in ground-truth order when setting `correct`.
pub fn infer_order(phis: &[&[f64]], max_clips: usize) -> Result<OrderingResult> {
    let m = phis.len();
    if m < MIN_CLIPS {
        return Err(Error::arg(format!("need at least {MIN_CLIPS} clips to order, got {m}")));
    }
    if m > max_clips {
        return Err(Error::SceneTooLarge { m, cap: max_clips });
    }
    let losses = pairwise_losses(phis)?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    for perm in (0..m).permutations(m) {
        let total = permutation_loss(&losses, &perm);
        if best.as_ref().is_none_or(|(_, b)| total < *b) {
            best = Some((perm, total));
        }
    }
    let (permutation, total_loss) = best.expect("at least one permutation");
    let correct = permutation.iter().enumerate().all(|(k, &p)| k == p);
    Ok(OrderingResult { permutation, total_loss, correct })
}

/// Like [`infer_order`] for clips presented in an arbitrary order:
/// `truth[k]` is the ground-truth position of the `k`-th presented clip.
pub fn infer_order_presented(phis: &[&[f64]], truth: &[usize], max_clips: usize) -> Result<OrderingResult> {
    if truth.len() != phis.len() {
        return Err(Error::arg("truth and feature counts differ"));
    }
    let mut res = infer_order(phis, max_clips)?;
    res.correct = res.permutation.iter().enumerate().all(|(k, &p)| truth[p] == k);
    Ok(res)
}

/// Fraction of results that match the ground truth exactly.
pub fn ordering_accuracy(results: &[OrderingResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::arg("no results to score"));
    }
    Ok(results.iter().filter(|r| r.correct).count() as f64 / results.len() as f64)
}

fn factorial(n: usize) -> f64 {
    (2..=n).map(|k| k as f64).product()
}

/// Accuracy of a uniformly random ordering: `sum_M n_M / M! / sum_M n_M`.
pub fn chance_accuracy(histogram: &BTreeMap<usize, usize>) -> Result<f64> {
    let total: usize = histogram.values().sum();
    if total == 0 {
        return Err(Error::arg("empty scene-size histogram"));
    }
    if let Some(&m) = histogram.keys().find(|&&m| m < MIN_CLIPS) {
        return Err(Error::arg(format!("scene size {m} is below {MIN_CLIPS}")));
    }
    let hits: f64 = histogram.iter().map(|(&m, &n)| n as f64 / factorial(m)).sum();
    Ok(hits / total as f64)
}
