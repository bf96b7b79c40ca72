//! Clip encoder: segment sampling, modality concatenation, channel reduction,
//! pooling (TCBP, CBP, mean or temporal concatenation), signed square root and
//! l2 normalization, followed by the two linear heads.
//!
//! ```text
//! x (c x t) -> [1x1 reduce] -> encode -> ssqrt -> l2 -> W1 -> v_clip
//!                                                  phi = |W2 relu(v_clip)|
//! ```

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grad::{Param, Tape, Tensor, Var};
use crate::sketch::{SketchMode, SketchParams, DEFAULT_SKETCH_DIM};
use crate::{ClipFeatures, Error, FeatureMap, Modality, Result};

pub use checkpoint::CHECKPOINT_MAGIC;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncodingMethod {
    Tcbp,
    Cbp,
    MeanPool,
    ConcatTMlp,
}

impl EncodingMethod {
    pub(crate) fn tag(self) -> u8 {
        match self {
            EncodingMethod::Tcbp => 0,
            EncodingMethod::Cbp => 1,
            EncodingMethod::MeanPool => 2,
            EncodingMethod::ConcatTMlp => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => EncodingMethod::Tcbp,
            1 => EncodingMethod::Cbp,
            2 => EncodingMethod::MeanPool,
            3 => EncodingMethod::ConcatTMlp,
            _ => return None,
        })
    }

    fn sketch_mode(self) -> Option<SketchMode> {
        match self {
            EncodingMethod::Tcbp => Some(SketchMode::Tcbp),
            EncodingMethod::Cbp => Some(SketchMode::Cbp),
            _ => None,
        }
    }
}

impl fmt::Display for EncodingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncodingMethod::Tcbp => "tcbp",
            EncodingMethod::Cbp => "cbp",
            EncodingMethod::MeanPool => "meanpool",
            EncodingMethod::ConcatTMlp => "concat",
        })
    }
}

impl FromStr for EncodingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tcbp" => Ok(EncodingMethod::Tcbp),
            "cbp" => Ok(EncodingMethod::Cbp),
            "meanpool" | "mean_pool" | "mean" => Ok(EncodingMethod::MeanPool),
            "concat" | "concatt_mlp" | "concatt" => Ok(EncodingMethod::ConcatTMlp),
            _ => Err(Error::arg(format!("unknown method `{s}` (tcbp, cbp, meanpool, concat)"))),
        }
    }
}

/// Which `t` consecutive segments of a clip are used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Sampling {
    /// A uniformly random run of `t` consecutive segments.
    Random,
    /// The first `t` segments.
    CFirst,
    /// The last `t` segments.
    #[default]
    CLast,
}

impl Sampling {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Sampling::Random => 0,
            Sampling::CFirst => 1,
            Sampling::CLast => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Sampling::Random,
            1 => Sampling::CFirst,
            2 => Sampling::CLast,
            _ => return None,
        })
    }
}

impl fmt::Display for Sampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sampling::Random => "random",
            Sampling::CFirst => "c_first",
            Sampling::CLast => "c_last",
        })
    }
}

impl FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(Sampling::Random),
            "c_first" | "cfirst" | "first" => Ok(Sampling::CFirst),
            "c_last" | "clast" | "last" => Ok(Sampling::CLast),
            _ => Err(Error::arg(format!("unknown sampling `{s}` (random, c_first, c_last)"))),
        }
    }
}

/// First segment index of the window chosen by `strategy`.
pub fn segment_start(t_full: usize, t: usize, strategy: Sampling, rng_seed: u64) -> Result<usize> {
    if t == 0 {
        return Err(Error::arg("segment count must be positive"));
    }
    if t_full < t {
        return Err(Error::ClipTooShort { t_full, t });
    }
    Ok(match strategy {
        Sampling::CFirst => 0,
        Sampling::CLast => t_full - t,
        Sampling::Random => ChaCha8Rng::seed_from_u64(rng_seed).random_range(0..=t_full - t),
    })
}

/// Selects `t` consecutive segments from every modality of `clip`.
pub fn sample_segments(
    clip: &ClipFeatures,
    t: usize,
    strategy: Sampling,
    rng_seed: u64,
) -> Result<Vec<(Modality, FeatureMap)>> {
    let start = segment_start(clip.t_full(), t, strategy, rng_seed)?;
    clip.modalities().iter().map(|m| Ok((m.modality, m.map.window(start, t)?))).collect()
}

/// Row-stacks the maps for `order` (which must be in concatenation order).
pub fn concat_modalities(parts: &[(Modality, FeatureMap)], order: &[Modality]) -> Result<FeatureMap> {
    let maps = order
        .iter()
        .map(|m| parts.iter().find(|(pm, _)| pm == m).map(|(_, map)| map).ok_or(Error::MissingModality(m.letter())))
        .collect::<Result<Vec<_>>>()?;
    FeatureMap::concat_rows(&maps)
}

/// Architecture and sketch settings of an [`EncoderModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub method: EncodingMethod,
    /// Modalities with their channel counts, kept in concatenation order.
    pub modalities: Vec<(Modality, usize)>,
    /// Segments per clip.
    pub t: usize,
    pub sampling: Sampling,
    /// Output channels of the 1x1 reduction (multi-modality runs only).
    pub reduce_dim: usize,
    /// Sketch dimension `d` for CBP/TCBP.
    pub sketch_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    /// Seeds both the sketch and the weight initialization.
    pub seed: u64,
}

impl ModelConfig {
    /// Reference sizes: reduction to 2048, `d = 8192`, heads 4096/2048
    /// (2048/1024 for mean pooling), `t = 3`, C_Last.
    pub fn new(method: EncodingMethod, modalities: &[(Modality, usize)]) -> Self {
        let (hidden_dim, out_dim) = match method {
            EncodingMethod::MeanPool => (2048, 1024),
            _ => (4096, 2048),
        };
        let mut modalities = modalities.to_vec();
        modalities.sort_by_key(|(m, _)| *m);
        Self {
            method,
            modalities,
            t: 3,
            sampling: Sampling::CLast,
            reduce_dim: 2048,
            sketch_dim: DEFAULT_SKETCH_DIM,
            hidden_dim,
            out_dim,
            seed: 0,
        }
    }

    pub fn modality_order(&self) -> Vec<Modality> {
        self.modalities.iter().map(|(m, _)| *m).collect()
    }

    pub fn input_channels(&self) -> usize {
        self.modalities.iter().map(|(_, c)| c).sum()
    }

    /// Multi-modality inputs go through the 1x1 reduction; single-modality inputs
    /// and mean pooling use the raw concatenated channels.
    pub fn reduces(&self) -> bool {
        self.modalities.len() > 1 && self.method != EncodingMethod::MeanPool
    }

    /// Channel count entering the encoding stage.
    pub fn encoder_channels(&self) -> usize {
        if self.reduces() {
            self.reduce_dim
        } else {
            self.input_channels()
        }
    }

    /// Length of `v_enc`.
    pub fn encoded_dim(&self) -> usize {
        match self.method {
            EncodingMethod::Tcbp | EncodingMethod::Cbp => self.sketch_dim,
            EncodingMethod::MeanPool => self.encoder_channels(),
            EncodingMethod::ConcatTMlp => self.encoder_channels() * self.t,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::arg("model needs at least one modality"));
        }
        if self.modalities.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::arg("duplicate modality in model config"));
        }
        let dims = [self.t, self.reduce_dim, self.sketch_dim, self.hidden_dim, self.out_dim];
        if dims.contains(&0) || self.modalities.iter().any(|(_, c)| *c == 0) {
            return Err(Error::arg("model dimensions must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layout {
    reduce: Option<(usize, usize)>,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Output of [`EncoderModel::encode_clip`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClipEmbedding {
    /// Generic clip representation.
    pub v_clip: Vec<f64>,
    /// Nonnegative temporal-ordering feature.
    pub phi: Vec<f64>,
}

/// Handles to the intermediate values of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub reduced: Option<Var>,
    pub encoded: Var,
    /// Signed square root of `encoded`.
    pub rooted: Var,
    pub normalized: Var,
    pub v_clip: Var,
    pub phi: Var,
}

/// Learnable heads plus the frozen sketch.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    config: ModelConfig,
    sketch: Option<SketchParams>,
    params: Vec<Param>,
    layout: Layout,
}

fn init_linear(rng: &mut ChaCha8Rng, name: &str, out: usize, fan_in: usize) -> [Param; 2] {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let w = (0..out * fan_in).map(|_| rng.random_range(-bound..bound)).collect();
    [
        Param::new(format!("{name}.weight"), Tensor { rows: out, cols: fan_in, data: w }, true),
        Param::new(format!("{name}.bias"), Tensor::zeros(out, 1), false),
    ]
}

impl EncoderModel {
    /// Builds the sketch and draws initial weights from `config.seed`.
    ///
    /// Weights are uniform in `+-1/sqrt(fan_in)`, biases zero.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let enc_c = config.encoder_channels();
        let sketch = match config.method.sketch_mode() {
            Some(mode) => Some(SketchParams::new(enc_c, config.t, config.sketch_dim, config.seed, mode)?),
            None => None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let mut params = Vec::new();
        let reduce = if config.reduces() {
            params.extend(init_linear(&mut rng, "reduce", config.reduce_dim, config.input_channels()));
            Some((0, 1))
        } else {
            None
        };
        let base = params.len();
        params.extend(init_linear(&mut rng, "w1", config.hidden_dim, config.encoded_dim()));
        params.extend(init_linear(&mut rng, "w2", config.out_dim, config.hidden_dim));
        let layout = Layout { reduce, w1: base, b1: base + 1, w2: base + 2, b2: base + 3 };
        Ok(Self { config, sketch, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn sketch(&self) -> Option<&SketchParams> {
        self.sketch.as_ref()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Param::zero_grad);
    }

    /// Registers every parameter on `tape` as a borrowed leaf.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf_ref(&p.value)).collect()
    }

    /// Sampled and concatenated `c x t` input for `clip`, using the model's
    /// sampling strategy.
    pub fn prepare_input(&self, clip: &ClipFeatures, rng_seed: u64) -> Result<FeatureMap> {
        self.prepare_input_with(clip, self.config.sampling, rng_seed)
    }

    pub fn prepare_input_with(&self, clip: &ClipFeatures, sampling: Sampling, rng_seed: u64) -> Result<FeatureMap> {
        let order = self.config.modality_order();
        for &(m, c) in &self.config.modalities {
            let map = clip.get(m).ok_or(Error::MissingModality(m.letter()))?;
            if map.channels() != c {
                return Err(Error::arg(format!(
                    "clip {}: modality {m} has {} channels, model expects {c}",
                    clip.clip_id(),
                    map.channels()
                )));
            }
        }
        let start = segment_start(clip.t_full(), self.config.t, sampling, rng_seed)?;
        let parts = order
            .iter()
            .map(|&m| Ok((m, clip.get(m).expect("checked above").window(start, self.config.t)?)))
            .collect::<Result<Vec<_>>>()?;
        concat_modalities(&parts, &order)
    }

    /// Records the forward pass for input `x` (`c x t`) using parameter handles
    /// `params` (in [`params`](Self::params) order).
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, params: &[Var], x: Var) -> Result<ForwardVars> {
        if params.len() != self.params.len() {
            return Err(Error::arg(format!("expected {} parameter handles, got {}", self.params.len(), params.len())));
        }
        let (c, t) = tape.shape(x);
        if c != self.config.input_channels() || t != self.config.t {
            return Err(Error::arg(format!(
                "input is {c}x{t}, model expects {}x{}",
                self.config.input_channels(),
                self.config.t
            )));
        }
        let l = self.layout;
        let reduced = match l.reduce {
            Some((w, b)) => Some(tape.linear(params[w], params[b], x)?),
            None => None,
        };
        let h = reduced.unwrap_or(x);
        let encoded = match (self.config.method, &self.sketch) {
            (EncodingMethod::Tcbp, Some(sk)) => {
                let u1 = tape.sketch_temporal(h, sk.h1(), sk.s1(), sk.dim())?;
                let u2 = tape.sketch_temporal(h, sk.h2(), sk.s2(), sk.dim())?;
                tape.circ_conv(u1, u2, sk.convolver())?
            }
            (EncodingMethod::Cbp, Some(sk)) => {
                let u1 = tape.sketch_columns(h, sk.h1(), sk.s1(), sk.dim())?;
                let u2 = tape.sketch_columns(h, sk.h2(), sk.s2(), sk.dim())?;
                let per_segment = tape.circ_conv(u1, u2, sk.convolver())?;
                tape.sum_cols(per_segment)
            }
            (EncodingMethod::MeanPool, _) => tape.mean_cols(h),
            (EncodingMethod::ConcatTMlp, _) => tape.flatten_cols(h),
            (method, None) => unreachable!("{method} model without sketch"),
        };
        let rooted = tape.signed_sqrt(encoded);
        let normalized = tape.l2_normalize(rooted);
        let v_clip = tape.linear(params[l.w1], params[l.b1], normalized)?;
        let act = tape.relu(v_clip);
        let out = tape.linear(params[l.w2], params[l.b2], act)?;
        let phi = tape.abs(out);
        Ok(ForwardVars { reduced, encoded, rooted, normalized, v_clip, phi })
    }

    /// Records the forward pass for `clip` on `tape` using bound parameters.
    pub fn forward_clip<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        params: &[Var],
        clip: &ClipFeatures,
        rng_seed: u64,
    ) -> Result<ForwardVars> {
        let x = self.prepare_input(clip, rng_seed)?;
        let (c, t) = (x.channels(), x.segments());
        let xv = tape.leaf(Tensor { rows: c, cols: t, data: x.into_data() });
        self.forward(tape, params, xv)
    }

    /// Embeds an already-sampled `c x t` map.
    pub fn encode_map(&self, x: &FeatureMap) -> Result<ClipEmbedding> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape);
        let xv = tape.leaf(Tensor { rows: x.channels(), cols: x.segments(), data: x.data().to_vec() });
        let vars = self.forward(&mut tape, &params, xv)?;
        Self::finish(&tape, &vars)
    }

    /// Full pipeline for one clip. `rng_seed` only matters for random sampling.
    pub fn encode_clip(&self, clip: &ClipFeatures, rng_seed: u64) -> Result<ClipEmbedding> {
        self.encode_clip_with(clip, self.config.sampling, rng_seed)
    }

    /// [`encode_clip`](Self::encode_clip) with an explicit sampling strategy.
    pub fn encode_clip_with(&self, clip: &ClipFeatures, sampling: Sampling, rng_seed: u64) -> Result<ClipEmbedding> {
        self.encode_map(&self.prepare_input_with(clip, sampling, rng_seed)?)
    }

    fn finish(tape: &Tape<'_>, vars: &ForwardVars) -> Result<ClipEmbedding> {
        let stages = [
            ("reduce", vars.reduced),
            ("encode", Some(vars.encoded)),
            ("normalize", Some(vars.normalized)),
            ("v_clip", Some(vars.v_clip)),
            ("phi", Some(vars.phi)),
        ];
        for (name, var) in stages {
            if let Some(v) = var {
                if tape.value(v).iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(name));
                }
            }
        }
        Ok(ClipEmbedding { v_clip: tape.value(vars.v_clip).to_vec(), phi: tape.value(vars.phi).to_vec() })
    }
}
