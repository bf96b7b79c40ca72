//! Direct-sum reference implementations used as oracles by the integration tests.
#![allow(dead_code)]

use itertools::Itertools;

/// `y[k] = sum_j a[j] * b[(k - j) mod d]`.
pub fn direct_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let d = a.len();
    (0..d).map(|k| (0..d).map(|j| a[j] * b[(k + d - j) % d]).sum()).collect()
}

/// `y[j] = sum_k g[k] * u[(k - j) mod d]`, the adjoint of `u ⊛ ·`.
pub fn direct_correlate(g: &[f64], u: &[f64]) -> Vec<f64> {
    let d = g.len();
    (0..d).map(|j| (0..d).map(|k| g[k] * u[(k + d - j) % d]).sum()).collect()
}

/// Count sketch of `vec(x ⊗ x)` with hash `(h1[i] + h2[j]) mod d` and sign
/// `s1[i] * s2[j]`.
pub fn outer_product_sketch(x: &[f64], h1: &[usize], s1: &[i8], h2: &[usize], s2: &[i8], d: usize) -> Vec<f64> {
    let mut y = vec![0.0; d];
    for (i, j) in (0..x.len()).cartesian_product(0..x.len()) {
        y[(h1[i] + h2[j]) % d] += f64::from(s1[i]) * f64::from(s2[j]) * x[i] * x[j];
    }
    y
}

/// Temporal count sketch of a row-major `c x t` map: one slot per channel,
/// one sign per (channel, segment).
pub fn temporal_sketch(x: &[f64], c: usize, t: usize, h: &[usize], s: &[i8], d: usize) -> Vec<f64> {
    let mut u = vec![0.0; d];
    for i in 0..c {
        for k in 0..t {
            u[h[i]] += f64::from(s[i * t + k]) * x[i * t + k];
        }
    }
    u
}

/// TCBP by direct sums.
#[allow(clippy::too_many_arguments)]
pub fn tcbp_direct(
    x: &[f64],
    c: usize,
    t: usize,
    h1: &[usize],
    s1: &[i8],
    h2: &[usize],
    s2: &[i8],
    d: usize,
) -> Vec<f64> {
    direct_convolve(&temporal_sketch(x, c, t, h1, s1, d), &temporal_sketch(x, c, t, h2, s2, d))
}

/// Gradient of `<g, tcbp(x)>` with respect to `x`, by direct correlation.
pub fn tcbp_grad_direct(
    x: &[f64],
    g: &[f64],
    c: usize,
    t: usize,
    (h1, s1): (&[usize], &[i8]),
    (h2, s2): (&[usize], &[i8]),
    d: usize,
) -> Vec<f64> {
    let u1 = temporal_sketch(x, c, t, h1, s1, d);
    let u2 = temporal_sketch(x, c, t, h2, s2, d);
    let g1 = direct_correlate(g, &u2);
    let g2 = direct_correlate(g, &u1);
    let mut out = vec![0.0; c * t];
    for i in 0..c {
        for k in 0..t {
            out[i * t + k] = f64::from(s1[i * t + k]) * g1[h1[i]] + f64::from(s2[i * t + k]) * g2[h2[i]];
        }
    }
    out
}

/// Largest `|a - b| / max(|b|, floor)` over a pair of vectors.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(floor)).fold(0.0, f64::max)
}

/// `max_k |a_k - b_k| / max(max_k |b_k|, 1e-300)`: error relative to the size of
/// the reference vector, so exactly-zero reference slots compare against the
/// vector's scale instead of against zero.
pub fn scaled_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
    max_rel_err(a, b, scale)
}

/// `sum_{p < q} sum_k max(0, phi[perm[p]][k] - phi[perm[q]][k])^2`, computed
/// without any precomputed matrix.
pub fn permutation_loss_direct(phis: &[Vec<f64>], perm: &[usize]) -> f64 {
    let mut total = 0.0;
    for p in 0..perm.len() {
        for q in p + 1..perm.len() {
            total += phis[perm[p]].iter().zip(&phis[perm[q]]).map(|(a, b)| (a - b).max(0.0).powi(2)).sum::<f64>();
        }
    }
    total
}
