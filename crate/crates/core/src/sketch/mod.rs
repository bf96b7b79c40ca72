//! Count sketch, tensor sketch, compact bilinear pooling (CBP) and temporal
//! compact bilinear pooling (TCBP).
//!
//! Hash indices are 0-based: `h[i]` is in `0..d`. Signs are stored as `i8` in
//! `{-1, +1}`. For TCBP the sign arrays are `c x t` row-major while the hash
//! depends on the channel only, so every segment of channel `i` lands in slot
//! `h[i]`.
//!
//! All arithmetic is carried out in `f64`; the slice-level functions accept `f32`
//! or `f64` through [`Real`] and return the input precision.

mod conv;

use std::path::Path;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use conv::CircularConvolver;

use crate::{Error, FeatureMap, Result, CRC64};

/// Default projected dimension.
pub const DEFAULT_SKETCH_DIM: usize = 8192;

/// Identifier of the generator used for `h` and `s`. Bumping the serialization
/// version is required if this ever changes.
pub const SKETCH_RNG: &str = "chacha8-v1";

const MAGIC: &[u8; 7] = b"TCBPSKP";
const VERSION: u32 = 1;
/// Serialized length of a [`SketchParams`] blob.
pub const SERIALIZED_LEN: usize = 7 + 4 + 1 + 12 + 8 + 8;

/// Scalar types accepted by the public sketch functions.
pub trait Real: Copy + Send + Sync + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Real for f64 {
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
}

impl Real for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

fn widen<T: Real>(x: &[T]) -> Vec<f64> {
    x.iter().map(|v| v.to_f64()).collect()
}

fn narrow<T: Real>(x: Vec<f64>) -> Vec<T> {
    x.into_iter().map(T::from_f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SketchMode {
    /// One sign per channel; the sketch is applied to every segment separately.
    Cbp,
    /// One sign per (channel, segment); segments are merged before convolving.
    Tcbp,
}

impl SketchMode {
    fn tag(self) -> u8 {
        match self {
            SketchMode::Cbp => 0,
            SketchMode::Tcbp => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(SketchMode::Cbp),
            1 => Some(SketchMode::Tcbp),
            _ => None,
        }
    }
}

/// Fixed random projections of a (temporal) tensor sketch.
///
/// Immutable after construction; regenerating from the same arguments yields the
/// same `h` and `s` on every platform.
#[derive(Debug, Clone)]
pub struct SketchParams {
    mode: SketchMode,
    c: usize,
    t: usize,
    d: usize,
    seed: u64,
    h1: Vec<usize>,
    h2: Vec<usize>,
    s1: Vec<i8>,
    s2: Vec<i8>,
    conv: CircularConvolver,
}

impl PartialEq for SketchParams {
    fn eq(&self, other: &Self) -> bool {
        self.mode == other.mode
            && (self.c, self.t, self.d, self.seed) == (other.c, other.t, other.d, other.seed)
            && self.h1 == other.h1
            && self.h2 == other.h2
            && self.s1 == other.s1
            && self.s2 == other.s2
    }
}

/// Maps a 64-bit draw onto `0..n` by multiply-shift.
fn draw_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

fn draw_sign(rng: &mut ChaCha8Rng) -> i8 {
    if rng.next_u64() >> 63 == 0 {
        1
    } else {
        -1
    }
}

/// Draws `h` and `s` for `c` channels and `t` segments (`t = 1` for CBP).
///
/// Sketch parameters are drawn from `ChaCha8Rng::seed_from_u64(seed)` in the order
/// `h1, s1, h2, s2`, so a TCBP sketch with `t = 1` equals the CBP sketch of the
/// same seed.
pub fn init_sketch_params(c: usize, t: usize, d: usize, seed: u64, mode: SketchMode) -> Result<SketchParams> {
    SketchParams::new(c, t, d, seed, mode)
}

impl SketchParams {
    pub fn new(c: usize, t: usize, d: usize, seed: u64, mode: SketchMode) -> Result<Self> {
        if c == 0 || t == 0 || d == 0 {
            return Err(Error::arg(format!("sketch dimensions must be positive, got c={c} t={t} d={d}")));
        }
        if d > u32::MAX as usize || c > u32::MAX as usize || t > u32::MAX as usize {
            return Err(Error::arg("sketch dimensions exceed u32"));
        }
        let signs_per_channel = match mode {
            SketchMode::Cbp => 1,
            SketchMode::Tcbp => t,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha8Rng| {
            let h: Vec<usize> = (0..c).map(|_| draw_index(rng, d)).collect();
            let s: Vec<i8> = (0..c * signs_per_channel).map(|_| draw_sign(rng)).collect();
            (h, s)
        };
        let (h1, s1) = draw(&mut rng);
        let (h2, s2) = draw(&mut rng);
        Ok(Self { mode, c, t, d, seed, h1, h2, s1, s2, conv: CircularConvolver::new(d) })
    }

    pub fn mode(&self) -> SketchMode {
        self.mode
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    /// Segment count the sign matrices were drawn for. Informational in CBP mode.
    pub fn segments(&self) -> usize {
        self.t
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn h1(&self) -> &[usize] {
        &self.h1
    }

    pub fn h2(&self) -> &[usize] {
        &self.h2
    }

    pub fn s1(&self) -> &[i8] {
        &self.s1
    }

    pub fn s2(&self) -> &[i8] {
        &self.s2
    }

    pub fn convolver(&self) -> &CircularConvolver {
        &self.conv
    }

    /// Number of stored hash and sign entries: `2*2c` for CBP, `2*(c + ct)` for TCBP.
    pub fn parameter_count(&self) -> usize {
        self.h1.len() + self.h2.len() + self.s1.len() + self.s2.len()
    }

    /// CRC-64 over `h1, h2` (u32 LE) followed by `s1, s2` (one byte each).
    pub fn checksum(&self) -> u64 {
        let mut digest = CRC64.digest();
        for h in [&self.h1, &self.h2] {
            for &v in h.iter() {
                digest.update(&(v as u32).to_le_bytes());
            }
        }
        for s in [&self.s1, &self.s2] {
            let bytes: Vec<u8> = s.iter().map(|&v| v as u8).collect();
            digest.update(&bytes);
        }
        digest.finalize()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SERIALIZED_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.mode.tag());
        for v in [self.c, self.t, self.d] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.checksum().to_le_bytes());
        out
    }

    /// Parses a blob written by [`to_bytes`](Self::to_bytes), regenerating `h` and
    /// `s` from the seed and verifying them against the stored checksum.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |detail: &str| Error::Format { path: "<sketch params>".into(), detail: detail.to_string() };
        if bytes.len() != SERIALIZED_LEN {
            return Err(bad(&format!("expected {SERIALIZED_LEN} bytes, got {}", bytes.len())));
        }
        if &bytes[..7] != MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(7);
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mode = SketchMode::from_tag(bytes[11]).ok_or_else(|| bad("unknown mode"))?;
        let (c, t, d) = (u32_at(12) as usize, u32_at(16) as usize, u32_at(20) as usize);
        let seed = u64_at(24);
        let stored = u64_at(32);
        let params = Self::new(c, t, d, seed, mode)?;
        if params.checksum() != stored {
            return Err(Error::Checksum { path: "<sketch params>".into() });
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(Error::io(path))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format { detail, .. } => Error::Format { path: path.into(), detail },
            Error::Checksum { .. } => Error::Checksum { path: path.into() },
            other => other,
        })
    }

    fn require_mode(&self, mode: SketchMode) -> Result<()> {
        if self.mode != mode {
            return Err(Error::arg(format!("sketch is in {:?} mode, {mode:?} required", self.mode)));
        }
        Ok(())
    }

    fn require_channels(&self, c: usize) -> Result<()> {
        if c != self.c {
            return Err(Error::arg(format!("input has {c} channels, sketch expects {}", self.c)));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// f64 kernels shared with the differentiable ops in `grad`.

/// Per-segment count sketch: `x` is `c x t`, output is `d x t` with
/// `out[h[i], s] += sign[i] * x[i, s]`.
pub(crate) fn scatter_columns(x: &[f64], c: usize, t: usize, h: &[usize], sign: &[i8], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * t];
    for i in 0..c {
        let sg = sign[i] as f64;
        let dst = h[i] * t;
        for s in 0..t {
            out[dst + s] += sg * x[i * t + s];
        }
    }
    out
}

/// Transpose of [`scatter_columns`].
pub(crate) fn gather_columns(g: &[f64], c: usize, t: usize, h: &[usize], sign: &[i8]) -> Vec<f64> {
    let mut out = vec![0.0; c * t];
    for i in 0..c {
        let sg = sign[i] as f64;
        let src = h[i] * t;
        for s in 0..t {
            out[i * t + s] = sg * g[src + s];
        }
    }
    out
}

/// Temporal count sketch: `out[h[i]] += sum_s sign[i, s] * x[i, s]`.
pub(crate) fn scatter_temporal(x: &[f64], c: usize, t: usize, h: &[usize], sign: &[i8], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for i in 0..c {
        let dst = h[i];
        for s in 0..t {
            out[dst] += sign[i * t + s] as f64 * x[i * t + s];
        }
    }
    out
}

/// Transpose of [`scatter_temporal`].
pub(crate) fn gather_temporal(g: &[f64], c: usize, t: usize, h: &[usize], sign: &[i8]) -> Vec<f64> {
    let mut out = vec![0.0; c * t];
    for i in 0..c {
        let gi = g[h[i]];
        for s in 0..t {
            out[i * t + s] = sign[i * t + s] as f64 * gi;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Public operations.

/// Count sketch of `x` into `d` slots: `out[j] = sum_{i: h[i] = j} s[i] * x[i]`.
pub fn count_sketch<T: Real>(x: &[T], h: &[usize], s: &[i8], d: usize) -> Result<Vec<T>> {
    if x.len() != h.len() || x.len() != s.len() {
        return Err(Error::arg(format!("count sketch lengths differ: x={}, h={}, s={}", x.len(), h.len(), s.len())));
    }
    if d == 0 {
        return Err(Error::arg("count sketch dimension must be positive"));
    }
    if let Some(&bad) = h.iter().find(|&&j| j >= d) {
        return Err(Error::arg(format!("hash index {bad} out of range for d={d}")));
    }
    let xf = widen(x);
    Ok(narrow(scatter_columns(&xf, x.len(), 1, h, s, d)))
}

/// Circular convolution of two equal-length vectors via FFT.
pub fn circular_convolve<T: Real>(u1: &[T], u2: &[T]) -> Result<Vec<T>> {
    if u1.len() != u2.len() {
        return Err(Error::arg(format!("convolution lengths differ: {} vs {}", u1.len(), u2.len())));
    }
    if u1.is_empty() {
        return Err(Error::arg("cannot convolve empty vectors"));
    }
    let conv = CircularConvolver::new(u1.len());
    Ok(narrow(conv.convolve(&widen(u1), &widen(u2))))
}

/// Tensor sketch of a single channel vector (CBP-mode parameters).
pub fn tensor_sketch<T: Real>(x: &[T], p: &SketchParams) -> Result<Vec<T>> {
    p.require_mode(SketchMode::Cbp)?;
    p.require_channels(x.len())?;
    let xf = widen(x);
    Ok(narrow(tensor_sketch_f64(&xf, p)))
}

fn tensor_sketch_f64(x: &[f64], p: &SketchParams) -> Vec<f64> {
    let u1 = scatter_columns(x, p.c, 1, &p.h1, &p.s1, p.d);
    let u2 = scatter_columns(x, p.c, 1, &p.h2, &p.s2, p.d);
    p.conv.convolve(&u1, &u2)
}

/// Compact bilinear pooling: tensor sketch of every segment, sum-pooled.
pub fn cbp_encode(x: &FeatureMap, p: &SketchParams) -> Result<Vec<f64>> {
    p.require_mode(SketchMode::Cbp)?;
    p.require_channels(x.channels())?;
    let mut acc: Option<Vec<f64>> = None;
    for s in 0..x.segments() {
        let v = tensor_sketch_f64(&x.column(s), p);
        match acc.as_mut() {
            None => acc = Some(v),
            Some(a) => a.iter_mut().zip(&v).for_each(|(a, b)| *a += b),
        }
    }
    Ok(acc.expect("feature map has at least one segment"))
}

/// The two linear TCBP projections `(u1, u2)` before convolution.
pub fn tcbp_project(x: &FeatureMap, p: &SketchParams) -> Result<(Vec<f64>, Vec<f64>)> {
    p.require_mode(SketchMode::Tcbp)?;
    p.require_channels(x.channels())?;
    if x.segments() != p.t {
        return Err(Error::arg(format!("input has {} segments, sketch was drawn for {}", x.segments(), p.t)));
    }
    let u1 = scatter_temporal(x.data(), p.c, p.t, &p.h1, &p.s1, p.d);
    let u2 = scatter_temporal(x.data(), p.c, p.t, &p.h2, &p.s2, p.d);
    Ok((u1, u2))
}

/// Temporal compact bilinear pooling of a `c x t` map.
pub fn tcbp_encode(x: &FeatureMap, p: &SketchParams) -> Result<Vec<f64>> {
    let (u1, u2) = tcbp_project(x, p)?;
    Ok(p.conv.convolve(&u1, &u2))
}
