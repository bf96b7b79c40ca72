use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Circular convolution of length-`d` real signals through the frequency domain.
///
/// Any `d >= 1` is supported; rustfft picks mixed-radix or Bluestein plans for
/// lengths that are not powers of two. Plans are shared, so a convolver is cheap to
/// clone and safe to use from several threads.
#[derive(Clone)]
pub struct CircularConvolver {
    d: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for CircularConvolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CircularConvolver").field("d", &self.d).finish()
    }
}

impl CircularConvolver {
    pub fn new(d: usize) -> Self {
        assert!(d >= 1, "convolution length must be positive");
        let mut planner = FftPlanner::new();
        Self { d, fwd: planner.plan_fft_forward(d), inv: planner.plan_fft_inverse(d) }
    }

    pub fn len(&self) -> usize {
        self.d
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn spectrum(&self, x: &[f64]) -> Vec<Complex<f64>> {
        debug_assert_eq!(x.len(), self.d);
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf
    }

    fn real_inverse(&self, mut buf: Vec<Complex<f64>>) -> Vec<f64> {
        self.inv.process(&mut buf);
        let scale = 1.0 / self.d as f64;
        buf.into_iter().map(|z| z.re * scale).collect()
    }

    /// `out[k] = sum_j a[j] * b[(k - j) mod d]`.
    pub fn convolve(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let fa = self.spectrum(a);
        let fb = self.spectrum(b);
        let prod = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
        self.real_inverse(prod)
    }

    /// Vector-Jacobian product of [`convolve`](Self::convolve): given the upstream
    /// gradient `g`, returns the gradients with respect to `a` and `b`. Each is the
    /// circular cross-correlation of `g` with the other operand.
    pub fn convolve_backward(&self, g: &[f64], a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let fg = self.spectrum(g);
        let fa = self.spectrum(a);
        let fb = self.spectrum(b);
        let ga = fg.iter().zip(&fb).map(|(x, y)| x * y.conj()).collect();
        let gb = fg.iter().zip(&fa).map(|(x, y)| x * y.conj()).collect();
        (self.real_inverse(ga), self.real_inverse(gb))
    }
}
