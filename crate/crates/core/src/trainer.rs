//! Mini-batch SGD on ordered clip pairs.
//!
//! Each iteration draws `batch_size` scenes uniformly with replacement and one
//! forward pair `(V_i, V_j)` (with `i` before `j`) from each. The batch loss is
//!
//! ```text
//! (1/B) * [ sum_pos L(V_i, V_j) + sum_neg max(0, alpha - L(V_i, V_j')) ]
//! ```
//!
//! where negatives (optional, one per positive) replace `V_j` by a clip from a
//! different scene of the same batch. Updates use heavy-ball momentum with weight
//! decay on weights only:
//!
//! ```text
//! v <- mu * v - lr * (g + wd * theta);   theta <- theta + v
//! ```

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{size_histogram, Scene};
use crate::encoder::{EncoderModel, Sampling};
use crate::grad::Tape;
use crate::ordering::{chance_accuracy, infer_order_presented, DEFAULT_ALPHA, DEFAULT_MAX_CLIPS};
use crate::{ClipFeatures, Error, Exec, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub alpha: f64,
    pub use_negatives: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
            iterations: 5000,
            alpha: DEFAULT_ALPHA,
            use_negatives: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.lr) || !finite_nonneg(self.momentum) || !finite_nonneg(self.weight_decay) {
            return Err(Error::arg("lr, momentum and weight_decay must be finite and nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be at least 1"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::arg("alpha must be positive"));
        }
        Ok(())
    }
}

/// Momentum buffers, one per model parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub velocity: Vec<Vec<f64>>,
    pub iteration: usize,
}

impl OptimizerState {
    pub fn new(model: &EncoderModel) -> Self {
        Self { velocity: model.params().iter().map(|p| vec![0.0; p.value.len()]).collect(), iteration: 0 }
    }

    /// Applies one SGD step from the gradients accumulated in `model` and zeroes
    /// them.
    pub fn apply(&mut self, model: &mut EncoderModel, cfg: &TrainConfig) -> Result<()> {
        if self.velocity.len() != model.params().len() {
            return Err(Error::arg("optimizer state does not match the model"));
        }
        for (p, v) in model.params_mut().iter_mut().zip(self.velocity.iter_mut()) {
            if v.len() != p.value.len() {
                return Err(Error::arg(format!("velocity shape mismatch for {}", p.name)));
            }
            let wd = if p.decay { cfg.weight_decay } else { 0.0 };
            for ((theta, g), vel) in p.value.data.iter_mut().zip(&p.grad.data).zip(v.iter_mut()) {
                *vel = cfg.momentum * *vel - cfg.lr * (g + wd * *theta);
                *theta += *vel;
            }
            p.zero_grad();
        }
        self.iteration += 1;
        Ok(())
    }
}

/// Uniform forward pair `(i, j)`, `i < j`, from a scene of `m` clips.
pub fn sample_pair(m: usize, rng: &mut impl Rng) -> Result<(usize, usize)> {
    if m < 2 {
        return Err(Error::arg(format!("cannot sample a pair from {m} clips")));
    }
    let a = rng.random_range(0..m);
    let mut b = rng.random_range(0..m - 1);
    if b >= a {
        b += 1;
    }
    Ok((a.min(b), a.max(b)))
}

/// One training example: an ordered pair and an optional corrupted partner for
/// the earlier clip.
#[derive(Debug, Clone, Copy)]
pub struct PairExample<'d> {
    pub earlier: &'d ClipFeatures,
    pub later: &'d ClipFeatures,
    pub negative: Option<&'d ClipFeatures>,
    /// Segment-sampling seeds for the three clips.
    pub seeds: [u64; 3],
}

/// Draws one batch from `scenes`.
pub fn sample_batch<'d>(scenes: &'d [Scene], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Vec<PairExample<'d>>> {
    if scenes.is_empty() {
        return Err(Error::arg("no training scenes"));
    }
    if cfg.use_negatives && scenes.len() < 2 {
        return Err(Error::arg("negative mining needs at least two scenes"));
    }
    let picks: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..scenes.len())).collect();
    let mut batch = Vec::with_capacity(picks.len());
    for (b, &si) in picks.iter().enumerate() {
        let scene = &scenes[si];
        let (i, j) = sample_pair(scene.len(), rng)?;
        let negative = if cfg.use_negatives {
            let others: Vec<usize> = picks
                .iter()
                .enumerate()
                .filter(|&(k, &sk)| k != b && scenes[sk].scene_id != scene.scene_id)
                .map(|(_, &sk)| sk)
                .collect();
            let donor = match others.choose(rng) {
                Some(&sk) => sk,
                None => {
                    let mut sk = rng.random_range(0..scenes.len() - 1);
                    if sk >= si {
                        sk += 1;
                    }
                    sk
                }
            };
            let clips = scenes[donor].clips();
            Some(&clips[rng.random_range(0..clips.len())])
        } else {
            None
        };
        let seeds = [rng.next_u64(), rng.next_u64(), rng.next_u64()];
        let clips = scene.clips();
        batch.push(PairExample { earlier: &clips[i], later: &clips[j], negative, seeds });
    }
    Ok(batch)
}

/// Loss components of one step (already divided by the batch size).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepStats {
    pub iteration: usize,
    pub loss: f64,
    pub positive: f64,
    pub negative: f64,
}

struct ExampleOutput {
    positive: f64,
    negative: f64,
    grads: Vec<Vec<f64>>,
}

fn example_backward(model: &EncoderModel, ex: &PairExample<'_>, alpha: f64, scale: f64) -> Result<ExampleOutput> {
    let mut tape = Tape::new();
    let params = model.bind(&mut tape);
    let a = model.forward_clip(&mut tape, &params, ex.earlier, ex.seeds[0])?;
    let b = model.forward_clip(&mut tape, &params, ex.later, ex.seeds[1])?;
    let pos = tape.pair_loss(a.phi, b.phi)?;
    let positive = tape.value(pos)[0];
    let (total, negative) = match ex.negative {
        Some(clip) => {
            let n = model.forward_clip(&mut tape, &params, clip, ex.seeds[2])?;
            let l = tape.pair_loss(a.phi, n.phi)?;
            let h = tape.hinge(l, alpha)?;
            let neg = tape.value(h)[0];
            (tape.add(pos, h)?, neg)
        }
        None => (pos, 0.0),
    };
    let out = tape.scale(total, scale);
    let g = tape.backward(out, &[1.0])?;
    let grads = params.iter().zip(model.params()).map(|(&v, p)| g.get_or_zeros(v, p.value.len())).collect();
    Ok(ExampleOutput { positive, negative, grads })
}

/// Forward and backward over `batch`, accumulating into the model's parameter
/// gradients, then one optimizer step. Returns the mean batch loss.
///
/// Gradients are summed in batch order whatever `exec` is, so results do not
/// depend on the thread count.
pub fn train_step(
    model: &mut EncoderModel,
    opt: &mut OptimizerState,
    batch: &[PairExample<'_>],
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let chunk = if exec.is_parallel() { 16 } else { 1 };
    let (mut positive, mut negative) = (0.0, 0.0);
    model.zero_grad();
    for part in batch.chunks(chunk) {
        let frozen: &EncoderModel = model;
        let outs = exec.map(part, |ex| example_backward(frozen, ex, cfg.alpha, scale));
        for out in outs {
            let out = out?;
            positive += out.positive;
            negative += out.negative;
            for (p, g) in model.params_mut().iter_mut().zip(&out.grads) {
                p.grad.data.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
    }
    let stats = StepStats {
        iteration: opt.iteration,
        loss: (positive + negative) * scale,
        positive: positive * scale,
        negative: negative * scale,
    };
    if !stats.loss.is_finite() {
        return Err(Error::Diverged {
            iteration: opt.iteration,
            detail: format!("loss {} (positive {}, negative {})", stats.loss, stats.positive, stats.negative),
        });
    }
    opt.apply(model, cfg)?;
    Ok(stats)
}

/// Owns a model, its optimizer state and the sampling RNG.
pub struct Trainer {
    pub model: EncoderModel,
    pub opt: OptimizerState,
    pub cfg: TrainConfig,
    rng: ChaCha8Rng,
    exec: Exec,
}

impl Trainer {
    pub fn new(model: EncoderModel, cfg: TrainConfig, exec: Exec) -> Result<Self> {
        cfg.validate()?;
        let opt = OptimizerState::new(&model);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self { model, opt, cfg, rng, exec })
    }

    pub fn step(&mut self, scenes: &[Scene]) -> Result<StepStats> {
        let batch = sample_batch(scenes, &self.cfg, &mut self.rng)?;
        train_step(&mut self.model, &mut self.opt, &batch, &self.cfg, self.exec)
    }

    /// Runs `cfg.iterations` steps, calling `on_step` after each.
    pub fn train(
        &mut self,
        scenes: &[Scene],
        mut on_step: impl FnMut(&StepStats, &EncoderModel) -> Result<()>,
    ) -> Result<Vec<StepStats>> {
        let mut history = Vec::with_capacity(self.cfg.iterations);
        for _ in 0..self.cfg.iterations {
            let stats = self.step(scenes)?;
            on_step(&stats, &self.model)?;
            history.push(stats);
        }
        Ok(history)
    }

    pub fn into_model(self) -> EncoderModel {
        self.model
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub sampling: Sampling,
    pub max_clips: usize,
    /// Seed for the order in which clips are presented to the inference step.
    /// `None` presents them in ground-truth order.
    pub shuffle_seed: Option<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { sampling: Sampling::CLast, max_clips: DEFAULT_MAX_CLIPS, shuffle_seed: Some(0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneOrdering {
    pub scene_id: String,
    pub predicted: Vec<String>,
    pub gt: Vec<String>,
    pub total_loss: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SizeStats {
    pub scenes: usize,
    pub correct: usize,
}

impl SizeStats {
    pub fn accuracy(&self) -> f64 {
        if self.scenes == 0 {
            0.0
        } else {
            self.correct as f64 / self.scenes as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub chance: f64,
    pub by_size: BTreeMap<usize, SizeStats>,
    pub scenes: Vec<SceneOrdering>,
}

/// Orders the clips of a scene with precomputed ordering features.
pub fn order_scene(scene: &Scene, phis: &[Vec<f64>], cfg: &EvalConfig, scene_index: usize) -> Result<SceneOrdering> {
    let m = scene.len();
    let mut presented: Vec<usize> = (0..m).collect();
    if let Some(seed) = cfg.shuffle_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(scene_index as u64);
        presented.shuffle(&mut rng);
    }
    let refs: Vec<&[f64]> = presented.iter().map(|&k| phis[k].as_slice()).collect();
    let res = infer_order_presented(&refs, &presented, cfg.max_clips)?;
    let ids = scene.clip_ids();
    Ok(SceneOrdering {
        scene_id: scene.scene_id.clone(),
        predicted: res.permutation.iter().map(|&p| ids[presented[p]].to_string()).collect(),
        gt: ids.iter().map(|s| s.to_string()).collect(),
        total_loss: res.total_loss,
        correct: res.correct,
    })
}

/// Encodes every clip and orders every scene.
pub fn evaluate(model: &EncoderModel, scenes: &[Scene], cfg: &EvalConfig, exec: Exec) -> Result<EvalReport> {
    if scenes.is_empty() {
        return Err(Error::arg("no scenes to evaluate"));
    }
    let indexed: Vec<(usize, &Scene)> = scenes.iter().enumerate().collect();
    let results = exec.map(&indexed, |&(idx, scene)| -> Result<SceneOrdering> {
        let phis = scene
            .clips()
            .iter()
            .map(|c| Ok(model.encode_clip_with(c, cfg.sampling, 0)?.phi))
            .collect::<Result<Vec<_>>>()?;
        order_scene(scene, &phis, cfg, idx)
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut by_size: BTreeMap<usize, SizeStats> = BTreeMap::new();
    for (scene, r) in scenes.iter().zip(&results) {
        let e = by_size.entry(scene.len()).or_default();
        e.scenes += 1;
        e.correct += r.correct as usize;
    }
    let correct: usize = by_size.values().map(|s| s.correct).sum();
    Ok(EvalReport {
        accuracy: correct as f64 / scenes.len() as f64,
        chance: chance_accuracy(&size_histogram(scenes))?,
        by_size,
        scenes: results,
    })
}
