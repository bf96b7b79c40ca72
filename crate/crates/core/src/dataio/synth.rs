//! Synthetic orderable scenes.
//!
//! Every clip carries a latent time code `k / M` (clip `k` of `M`). Each
//! modality has one fixed random direction `u` with `||u|| = sqrt(c)`, so
//! `signal_strength` is the per-channel RMS amplitude of the progression:
//!
//! ```text
//! x[:, s] = noise + signal_strength * (k / M) * u      noise ~ N(0, noise_std^2)
//! ```
//!
//! Text (`S`) draws one column and replicates it over all segments. Values are
//! rounded to f32 so in-memory and on-disk datasets agree exactly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{write_feature_file, write_manifest, ClipEntry, Scene, SceneEntry, Split};
use crate::{ClipFeatures, Error, FeatureMap, Modality, ModalityFeature, Result};

/// Validation-split scene counts for sizes 2..=6 of the reference dataset.
pub const REFERENCE_VALIDATION_SIZES: [(usize, usize); 5] = [(2, 958), (3, 472), (4, 203), (5, 100), (6, 51)];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Proportion of scenes per clip count; must sum to 1.
    pub sizes: Vec<(usize, f64)>,
    pub modalities: Vec<(Modality, usize)>,
    /// Proportion of clips per segment count; must sum to 1.
    pub t_full: Vec<(usize, f64)>,
    pub signal_strength: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let total: usize = REFERENCE_VALIDATION_SIZES.iter().map(|(_, n)| n).sum();
        Self {
            n_train: 2000,
            n_val: 500,
            n_test: 500,
            sizes: REFERENCE_VALIDATION_SIZES.iter().map(|&(m, n)| (m, n as f64 / total as f64)).collect(),
            modalities: vec![(Modality::A, 8), (Modality::P, 16), (Modality::I, 16)],
            t_full: vec![(4, 0.65), (5, 0.20), (6, 0.15)],
            signal_strength: 5.0,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

fn check_distribution(name: &str, dist: &[(usize, f64)]) -> Result<()> {
    if dist.is_empty() || dist.iter().any(|&(_, p)| !(p >= 0.0)) {
        return Err(Error::arg(format!("{name}: proportions must be nonnegative and non-empty")));
    }
    let total: f64 = dist.iter().map(|(_, p)| p).sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::arg(format!("{name}: proportions sum to {total}, expected 1")));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        check_distribution("scene sizes", &self.sizes)?;
        check_distribution("segment counts", &self.t_full)?;
        if let Some(&(m, _)) = self.sizes.iter().find(|(m, _)| super::check_scene_size(*m).is_err()) {
            return Err(Error::arg(format!("scene size {m} outside 2..=6")));
        }
        if self.t_full.iter().any(|&(t, _)| t == 0) {
            return Err(Error::arg("segment counts must be positive"));
        }
        if self.modalities.is_empty() || self.modalities.iter().any(|&(_, c)| c == 0) {
            return Err(Error::arg("need at least one modality with positive channels"));
        }
        if !(self.signal_strength >= 0.0) || !(self.noise_std >= 0.0) {
            return Err(Error::arg("signal_strength and noise_std must be nonnegative"));
        }
        Ok(())
    }

    fn split_counts(&self) -> [(Split, usize); 3] {
        [(Split::Train, self.n_train), (Split::Val, self.n_val), (Split::Test, self.n_test)]
    }
}

/// Splits `n` items over `dist` by largest remainder, so the counts sum to `n`
/// and follow the proportions as closely as integers allow.
fn allocate(n: usize, dist: &[(usize, f64)]) -> Vec<(usize, usize)> {
    let raw: Vec<f64> = dist.iter().map(|(_, p)| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    dist.iter().zip(counts).map(|(&(k, _), n)| (k, n)).collect()
}

fn draw_categorical(rng: &mut ChaCha8Rng, dist: &[(usize, f64)]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(k, p) in dist {
        acc += p;
        if u < acc {
            return k;
        }
    }
    dist.last().expect("non-empty").0
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Generates the dataset in memory, train scenes first, then val, then test.
pub fn synthesize(cfg: &SynthConfig) -> Result<Vec<Scene>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut modalities = cfg.modalities.clone();
    modalities.sort_by_key(|(m, _)| *m);

    let directions: BTreeMap<Modality, Vec<f64>> = modalities
        .iter()
        .map(|&(m, c)| {
            let mut u: Vec<f64> = (0..c).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let scale = (c as f64).sqrt() / norm;
            u.iter_mut().for_each(|v| *v *= scale);
            (m, u)
        })
        .collect();
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::arg(e.to_string()))?;

    let mut scenes = Vec::new();
    for (split, n) in cfg.split_counts() {
        let mut sizes: Vec<usize> =
            allocate(n, &cfg.sizes).into_iter().flat_map(|(m, count)| std::iter::repeat_n(m, count)).collect();
        sizes.shuffle(&mut rng);
        for (idx, &m) in sizes.iter().enumerate() {
            let scene_id = format!("{split}{idx:05}");
            let mut clips = Vec::with_capacity(m);
            for k in 0..m {
                let t_full = draw_categorical(&mut rng, &cfg.t_full);
                let level = cfg.signal_strength * k as f64 / m as f64;
                let mut feats = Vec::with_capacity(modalities.len());
                for &(modality, c) in &modalities {
                    let u = &directions[&modality];
                    let map = if modality == Modality::S {
                        let col: Vec<f64> = (0..c).map(|i| round_f32(noise.sample(&mut rng) + level * u[i])).collect();
                        FeatureMap::from_fn(c, t_full, |i, _| col[i])?
                    } else {
                        let mut data = vec![0.0; c * t_full];
                        for s in 0..t_full {
                            for i in 0..c {
                                data[i * t_full + s] = round_f32(noise.sample(&mut rng) + level * u[i]);
                            }
                        }
                        FeatureMap::new(c, t_full, data)?
                    };
                    feats.push(ModalityFeature { modality, map });
                }
                clips.push(ClipFeatures::new(format!("{scene_id}_c{k}"), feats)?);
            }
            scenes.push(Scene::new(scene_id, split, clips)?);
        }
    }
    Ok(scenes)
}

/// Writes a synthetic dataset under `out_dir` (`manifest.jsonl` plus
/// `features/*.mmfe`) and returns the manifest path.
pub fn generate_synthetic(cfg: &SynthConfig, out_dir: &Path) -> Result<PathBuf> {
    let scenes = synthesize(cfg)?;
    let feat_dir = out_dir.join("features");
    std::fs::create_dir_all(&feat_dir).map_err(Error::io(&feat_dir))?;
    let mut entries = Vec::with_capacity(scenes.len());
    for scene in &scenes {
        let mut clips = Vec::with_capacity(scene.len());
        for clip in scene.clips() {
            let mut features = BTreeMap::new();
            let mut channels = BTreeMap::new();
            for m in clip.modalities() {
                let rel = format!("features/{}_{}.mmfe", clip.clip_id(), m.modality);
                write_feature_file(&out_dir.join(&rel), m.modality, &m.map)?;
                features.insert(m.modality, rel);
                channels.insert(m.modality, m.map.channels());
            }
            clips.push(ClipEntry {
                clip_id: clip.clip_id().to_string(),
                t_full: clip.t_full(),
                features,
                channels: Some(channels),
            });
        }
        entries.push(SceneEntry { scene_id: scene.scene_id.clone(), split: scene.split, clips });
    }
    let manifest = out_dir.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SynthConfig {
        SynthConfig {
            n_train: 10,
            n_val: 4,
            n_test: 3,
            modalities: vec![(Modality::I, 3), (Modality::S, 2)],
            ..SynthConfig::default()
        }
    }

    #[test]
    fn allocation_is_exact() {
        assert_eq!(allocate(100, &[(2, 1.0)]), vec![(2, 100)]);
        let total: usize = REFERENCE_VALIDATION_SIZES.iter().map(|(_, n)| n).sum();
        let dist: Vec<_> = REFERENCE_VALIDATION_SIZES.iter().map(|&(m, n)| (m, n as f64 / total as f64)).collect();
        assert_eq!(allocate(1784, &dist), REFERENCE_VALIDATION_SIZES.to_vec());
        assert_eq!(allocate(7, &dist).iter().map(|(_, n)| n).sum::<usize>(), 7);
    }

    #[test]
    fn split_sizes_and_text_replication() {
        let scenes = synthesize(&tiny()).unwrap();
        assert_eq!(scenes.len(), 17);
        assert_eq!(scenes.iter().filter(|s| s.split == Split::Val).count(), 4);
        for clip in scenes.iter().flat_map(|s| s.clips()) {
            assert!((4..=6).contains(&clip.t_full()));
            let text = clip.get(Modality::S).unwrap();
            for i in 0..text.channels() {
                assert!((0..text.segments()).all(|s| text.get(i, s) == text.get(i, 0)));
            }
        }
    }

    #[test]
    fn zero_signal_and_determinism() {
        let a = synthesize(&tiny()).unwrap();
        assert_eq!(a, synthesize(&tiny()).unwrap());
        let mut cfg = tiny();
        cfg.seed = 1;
        assert_ne!(a, synthesize(&cfg).unwrap());
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = tiny();
        cfg.sizes = vec![(2, 0.5)];
        assert!(synthesize(&cfg).is_err());
        let mut cfg = tiny();
        cfg.sizes = vec![(7, 1.0)];
        assert!(synthesize(&cfg).is_err());
        let mut cfg = tiny();
        cfg.signal_strength = -1.0;
        assert!(synthesize(&cfg).is_err());
    }
}
