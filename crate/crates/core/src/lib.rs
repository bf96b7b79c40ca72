//! Temporal compact bilinear pooling (TCBP) for multimodal clip features,
//! with a self-supervised temporal-ordering objective.
//!
//! The crate is organised bottom-up:
//!
//! * [`sketch`]: count sketch, FFT circular convolution, tensor sketch, CBP and TCBP.
//! * [`grad`]: a small reverse-mode tape with the backward rules the model needs,
//!   plus a finite-difference checker.
//! * [`encoder`]: per-modality ingestion, segment sampling, concatenation and the
//!   clip head producing the ordering feature.
//! * [`ordering`]: order-violation loss, negative hinge, brute-force permutation
//!   inference and accuracy metrics.
//! * [`trainer`]: mini-batch SGD with momentum over ordered clip pairs.
//! * [`dataio`]: on-disk feature files, JSON-lines manifests and a synthetic
//!   dataset generator.
//!
//! Data-parallel loops (batch encoding, evaluation, Monte-Carlo sweeps) go through
//! [`Exec`], which uses rayon when the `parallel` feature is enabled and falls back
//! to plain iteration otherwise. Results never depend on which path ran.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod encoder;
mod error;
mod exec;
pub mod feature;
pub mod grad;
pub mod gradcheck;
pub mod ordering;
pub mod sketch;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Exec;
pub use feature::{ClipFeatures, FeatureMap, Modality, ModalityFeature};

/// CRC-64/XZ, used for every on-disk checksum in this crate.
pub(crate) const CRC64: crc::Crc<u64> = crc::Crc::<u64>::new(&crc::CRC_64_XZ);
