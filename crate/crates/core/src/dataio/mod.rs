//! Feature files, scene manifests and synthetic data.

mod features;
mod manifest;
mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ordering::{DEFAULT_MAX_CLIPS, MIN_CLIPS};
use crate::{ClipFeatures, Error, Result};

pub use features::{decode_feature_file, encode_feature_file, read_feature_file, write_feature_file, FEATURE_MAGIC};
pub use manifest::{load_manifest, write_manifest, ClipEntry, Manifest, SceneEntry};
pub use synth::{generate_synthetic, synthesize, SynthConfig, REFERENCE_VALIDATION_SIZES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::arg(format!("unknown split `{s}` (train, val, test)"))),
        }
    }
}

/// Clips of one scene in ground-truth temporal order.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub split: Split,
    clips: Vec<ClipFeatures>,
}

impl Scene {
    pub fn new(scene_id: impl Into<String>, split: Split, clips: Vec<ClipFeatures>) -> Result<Self> {
        let scene_id = scene_id.into();
        check_scene_size(clips.len()).map_err(|e| Error::arg(format!("scene {scene_id}: {e}")))?;
        let mut ids: Vec<&str> = clips.iter().map(ClipFeatures::clip_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::arg(format!("scene {scene_id}: duplicate clip ids")));
        }
        Ok(Self { scene_id, split, clips })
    }

    pub fn clips(&self) -> &[ClipFeatures] {
        &self.clips
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn clip_ids(&self) -> Vec<&str> {
        self.clips.iter().map(ClipFeatures::clip_id).collect()
    }
}

pub(crate) fn check_scene_size(m: usize) -> std::result::Result<(), String> {
    if (MIN_CLIPS..=DEFAULT_MAX_CLIPS).contains(&m) {
        Ok(())
    } else {
        Err(format!("scene size out of range: {m} clips (allowed {MIN_CLIPS}..={DEFAULT_MAX_CLIPS})"))
    }
}

/// Number of scenes per clip count.
pub fn size_histogram<'s>(scenes: impl IntoIterator<Item = &'s Scene>) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for s in scenes {
        *hist.entry(s.len()).or_insert(0) += 1;
    }
    hist
}
