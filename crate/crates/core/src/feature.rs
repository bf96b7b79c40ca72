//! Feature containers shared by the encoder, the data loaders and the sketches.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Input modality. The declaration order is the concatenation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    /// Audio.
    A,
    /// Places / scene appearance.
    P,
    /// ImageNet objects.
    I,
    /// Video motion.
    R,
    /// Subtitle text.
    S,
}

impl Modality {
    pub const ALL: [Modality; 5] = [Modality::A, Modality::P, Modality::I, Modality::R, Modality::S];

    /// On-disk tag byte.
    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn letter(self) -> char {
        match self {
            Modality::A => 'A',
            Modality::P => 'P',
            Modality::I => 'I',
            Modality::R => 'R',
            Modality::S => 'S',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.letter() == c.to_ascii_uppercase())
    }

    /// Channel count of the reference extractor for this modality.
    pub fn reference_channels(self) -> usize {
        match self {
            Modality::A => 256,
            Modality::S => 300,
            Modality::P | Modality::I | Modality::R => 2048,
        }
    }

    /// Parses a modality string such as `"API"` into a sorted, deduplicated set.
    pub fn parse_set(s: &str) -> Result<Vec<Modality>> {
        let mut out = Vec::new();
        for ch in s.chars() {
            let m = Modality::from_letter(ch)
                .ok_or_else(|| Error::arg(format!("unknown modality `{ch}` (expected A, P, I, R or S)")))?;
            out.push(m);
        }
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(Error::arg("empty modality set"));
        }
        Ok(out)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Modality::from_letter(c).ok_or_else(|| Error::arg(format!("unknown modality `{s}`"))),
            _ => Err(Error::arg(format!("unknown modality `{s}`"))),
        }
    }
}

/// A `c x t` feature map stored row-major (channel-major): element `(i, s)` lives
/// at `i * t + s`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    c: usize,
    t: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(c: usize, t: usize, data: Vec<f64>) -> Result<Self> {
        if c == 0 || t == 0 {
            return Err(Error::arg(format!("feature map must be non-empty, got {c}x{t}")));
        }
        if data.len() != c * t {
            return Err(Error::arg(format!("feature map {c}x{t} needs {} values, got {}", c * t, data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(Self { c, t, data })
    }

    pub fn zeros(c: usize, t: usize) -> Self {
        Self { c, t, data: vec![0.0; c * t] }
    }

    pub fn from_fn(c: usize, t: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(c * t);
        for i in 0..c {
            for s in 0..t {
                data.push(f(i, s));
            }
        }
        Self::new(c, t, data)
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn segments(&self) -> usize {
        self.t
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, s: usize) -> f64 {
        self.data[i * self.t + s]
    }

    pub fn column(&self, s: usize) -> Vec<f64> {
        (0..self.c).map(|i| self.get(i, s)).collect()
    }

    /// Per-channel average over segments.
    pub fn mean_pool(&self) -> Vec<f64> {
        self.data.chunks_exact(self.t).map(|row| row.iter().sum::<f64>() / self.t as f64).collect()
    }

    /// Columns `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.t {
            return Err(Error::arg(format!(
                "segment window {start}..{} out of range for {} segments",
                start + len,
                self.t
            )));
        }
        let mut data = Vec::with_capacity(self.c * len);
        for row in self.data.chunks_exact(self.t) {
            data.extend_from_slice(&row[start..start + len]);
        }
        Ok(Self { c: self.c, t: len, data })
    }

    /// Stacks maps with equal segment counts along the channel axis.
    pub fn concat_rows(parts: &[&FeatureMap]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::arg("nothing to concatenate"))?;
        let t = first.t;
        if let Some(bad) = parts.iter().find(|p| p.t != t) {
            return Err(Error::arg(format!("segment counts differ: {} vs {t}", bad.t)));
        }
        let c = parts.iter().map(|p| p.c).sum();
        let mut data = Vec::with_capacity(c * t);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Self { c, t, data })
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// One modality of one clip: a `c_i x t_full` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityFeature {
    pub modality: Modality,
    pub map: FeatureMap,
}

/// All modalities of one clip. Every modality shares the same segment count.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFeatures {
    clip_id: String,
    t_full: usize,
    modalities: Vec<ModalityFeature>,
}

impl ClipFeatures {
    pub fn new(clip_id: impl Into<String>, mut modalities: Vec<ModalityFeature>) -> Result<Self> {
        let clip_id = clip_id.into();
        modalities.sort_by_key(|m| m.modality);
        if modalities.windows(2).any(|w| w[0].modality == w[1].modality) {
            return Err(Error::arg(format!("clip {clip_id}: duplicate modality")));
        }
        let t_full = modalities
            .first()
            .map(|m| m.map.segments())
            .ok_or_else(|| Error::arg(format!("clip {clip_id}: no modalities")))?;
        if let Some(bad) = modalities.iter().find(|m| m.map.segments() != t_full) {
            return Err(Error::arg(format!(
                "clip {clip_id}: modality {} has {} segments, expected {t_full}",
                bad.modality,
                bad.map.segments()
            )));
        }
        Ok(Self { clip_id, t_full, modalities })
    }

    pub fn clip_id(&self) -> &str {
        &self.clip_id
    }

    pub fn t_full(&self) -> usize {
        self.t_full
    }

    pub fn modalities(&self) -> &[ModalityFeature] {
        &self.modalities
    }

    pub fn get(&self, modality: Modality) -> Option<&FeatureMap> {
        self.modalities.iter().find(|m| m.modality == modality).map(|m| &m.map)
    }

    /// Concatenated channel count over all modalities present.
    pub fn channels(&self) -> usize {
        self.modalities.iter().map(|m| m.map.channels()).sum()
    }
}
