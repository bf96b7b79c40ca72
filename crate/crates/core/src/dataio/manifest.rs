//! JSON-lines scene manifests.
//!
//! One scene per line:
//! `{"scene_id": .., "split": "train", "clips": [{"clip_id": .., "t_full": 4,
//! "features": {"A": "features/x_A.mmfe", ..}, "channels": {"A": 16, ..}}]}`.
//! Clips are listed in ground-truth order. `channels` is optional; when present
//! it is checked against the files. Relative paths resolve against the
//! manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{check_scene_size, read_feature_file, Scene, Split};
use crate::{ClipFeatures, Error, Exec, Modality, ModalityFeature, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipEntry {
    pub clip_id: String,
    pub t_full: usize,
    pub features: BTreeMap<Modality, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<BTreeMap<Modality, usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneEntry {
    pub scene_id: String,
    pub split: Split,
    pub clips: Vec<ClipEntry>,
}

/// Parsed manifest. Feature files are read lazily by [`Manifest::load_scenes`].
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub scenes: Vec<SceneEntry>,
}

impl ClipEntry {
    fn resolve(&self, root: &Path, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            root.join(p)
        }
    }

    /// Reads and validates every feature file of this clip.
    pub fn load(&self, root: &Path) -> Result<ClipFeatures> {
        let mut mods = Vec::with_capacity(self.features.len());
        for (&modality, rel) in &self.features {
            let path = self.resolve(root, rel);
            let (tag, map) = read_feature_file(&path)?;
            let bad = |detail: String| Error::Format { path: path.clone(), detail };
            if tag != modality {
                return Err(bad(format!("file holds modality {tag}, manifest says {modality}")));
            }
            if map.segments() != self.t_full {
                return Err(bad(format!("{} segments, manifest says {}", map.segments(), self.t_full)));
            }
            if let Some(&c) = self.channels.as_ref().and_then(|ch| ch.get(&modality)) {
                if map.channels() != c {
                    return Err(bad(format!("{} channels, manifest says {c}", map.channels())));
                }
            }
            mods.push(ModalityFeature { modality, map });
        }
        ClipFeatures::new(self.clip_id.clone(), mods)
    }
}

/// Parses a manifest. Blank lines are skipped; an empty file is an empty dataset.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let file = std::fs::File::open(path).map_err(Error::io(path))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut scenes = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |detail: String| Error::Manifest { line: line_no, detail };
        let entry: SceneEntry = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        check_scene_size(entry.clips.len()).map_err(err)?;
        if !seen.insert(entry.scene_id.clone()) {
            return Err(err(format!("duplicate scene id {}", entry.scene_id)));
        }
        let mut clip_ids = HashSet::new();
        for clip in &entry.clips {
            if !clip_ids.insert(clip.clip_id.as_str()) {
                return Err(err(format!("duplicate clip id {}", clip.clip_id)));
            }
            if clip.features.is_empty() {
                return Err(err(format!("clip {} has no features", clip.clip_id)));
            }
            if clip.t_full == 0 {
                return Err(err(format!("clip {} has t_full = 0", clip.clip_id)));
            }
        }
        scenes.push(entry);
    }
    Ok(Manifest { root, scenes })
}

pub fn write_manifest(path: &Path, scenes: &[SceneEntry]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(Error::io(path))?);
    for s in scenes {
        let line = serde_json::to_string(s).expect("manifest entries serialize");
        writeln!(out, "{line}").map_err(Error::io(path))?;
    }
    out.flush().map_err(Error::io(path))
}

impl Manifest {
    pub fn entries(&self, split: Option<Split>) -> impl Iterator<Item = &SceneEntry> {
        self.scenes.iter().filter(move |s| split.is_none_or(|sp| s.split == sp))
    }

    /// Loads the feature files of every scene in `split` (all splits if `None`).
    ///
    /// Also checks that each modality has the same channel count everywhere.
    pub fn load_scenes(&self, split: Option<Split>, exec: Exec) -> Result<Vec<Scene>> {
        let entries: Vec<&SceneEntry> = self.entries(split).collect();
        let loaded = exec.map(&entries, |e| -> Result<Scene> {
            let clips = e.clips.iter().map(|c| c.load(&self.root)).collect::<Result<Vec<_>>>()?;
            Scene::new(e.scene_id.clone(), e.split, clips)
        });
        let scenes = loaded.into_iter().collect::<Result<Vec<_>>>()?;
        let mut widths: BTreeMap<Modality, usize> = BTreeMap::new();
        for scene in &scenes {
            for clip in scene.clips() {
                for m in clip.modalities() {
                    let c = *widths.entry(m.modality).or_insert(m.map.channels());
                    if c != m.map.channels() {
                        return Err(Error::arg(format!(
                            "clip {}: modality {} has {} channels, elsewhere {c}",
                            clip.clip_id(),
                            m.modality,
                            m.map.channels()
                        )));
                    }
                }
            }
        }
        Ok(scenes)
    }
}
