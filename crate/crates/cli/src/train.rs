use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use tcbp::dataio::{load_manifest, Scene, Split};
use tcbp::encoder::{EncoderModel, EncodingMethod, ModelConfig, Sampling};
use tcbp::trainer::{TrainConfig, Trainer};
use tcbp::{Exec, Modality};

use crate::output::write_file;
use crate::{ser_display, usage, Status};

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Modality letters to use, e.g. `API`; defaults to every modality present.
    #[arg(long)]
    pub modalities: Option<String>,
    /// tcbp, cbp, meanpool or concat.
    #[arg(long, default_value = "tcbp")]
    #[serde(serialize_with = "ser_display")]
    pub method: EncodingMethod,
    /// Segments per clip.
    #[arg(long, default_value_t = 3)]
    pub t: usize,
    /// random, c_first or c_last.
    #[arg(long, default_value = "c_last")]
    #[serde(serialize_with = "ser_display")]
    pub sampling: Sampling,
    /// Sketch dimension.
    #[arg(long)]
    pub d: Option<usize>,
    /// Channels after the 1x1 reduction of multi-modality inputs.
    #[arg(long)]
    pub reduce: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub out_dim: Option<usize>,
    /// Add hinged negative pairs.
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true")]
    pub negatives: bool,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Seeds the sketch, the initial weights and batch sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for `model.ckpt`, `optimizer.json` and `log.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
    /// Print progress to stderr every this many iterations (0 disables).
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
}

#[derive(Serialize)]
struct Resolved<'a> {
    model: ModelSummary,
    train: &'a TrainConfig,
}

#[derive(Serialize)]
struct ModelSummary {
    #[serde(serialize_with = "ser_display")]
    method: EncodingMethod,
    modalities: Vec<(String, usize)>,
    t: usize,
    #[serde(serialize_with = "ser_display")]
    sampling: Sampling,
    reduce_dim: Option<usize>,
    sketch_dim: Option<usize>,
    hidden_dim: usize,
    out_dim: usize,
    seed: u64,
    sketch_checksum: Option<String>,
}

fn summarize(model: &EncoderModel) -> ModelSummary {
    let c = model.config();
    ModelSummary {
        method: c.method,
        modalities: c.modalities.iter().map(|(m, n)| (m.to_string(), *n)).collect(),
        t: c.t,
        sampling: c.sampling,
        reduce_dim: c.reduces().then_some(c.reduce_dim),
        sketch_dim: model.sketch().map(|s| s.dim()),
        hidden_dim: c.hidden_dim,
        out_dim: c.out_dim,
        seed: c.seed,
        sketch_checksum: model.sketch().map(|s| format!("{:016x}", s.checksum())),
    }
}

/// Modalities and channel counts taken from the first clip of the data.
fn modality_channels(scenes: &[Scene], wanted: Option<&str>) -> Result<Vec<(Modality, usize)>> {
    let first = scenes.first().and_then(|s| s.clips().first()).ok_or_else(|| usage("train split is empty"))?;
    let wanted = match wanted {
        Some(s) => Modality::parse_set(s)?,
        None => first.modalities().iter().map(|m| m.modality).collect(),
    };
    wanted
        .into_iter()
        .map(|m| {
            first.get(m).map(|map| (m, map.channels())).ok_or_else(|| usage(format!("modality {m} is not in the data")))
        })
        .collect()
}

pub fn build_model(args: &TrainArgs, scenes: &[Scene]) -> Result<EncoderModel> {
    let mods = modality_channels(scenes, args.modalities.as_deref())?;
    let mut cfg = ModelConfig::new(args.method, &mods);
    cfg.t = args.t;
    cfg.sampling = args.sampling;
    cfg.seed = args.seed;
    if let Some(d) = args.d {
        cfg.sketch_dim = d;
    }
    if let Some(r) = args.reduce {
        cfg.reduce_dim = r;
    }
    if let Some(h) = args.hidden {
        cfg.hidden_dim = h;
    }
    if let Some(o) = args.out_dim {
        cfg.out_dim = o;
    }
    Ok(EncoderModel::new(cfg)?)
}

fn train_config(args: &TrainArgs) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        lr: args.lr.unwrap_or(d.lr),
        momentum: args.momentum.unwrap_or(d.momentum),
        weight_decay: args.weight_decay.unwrap_or(d.weight_decay),
        batch_size: args.batch.unwrap_or(d.batch_size),
        iterations: args.iters.unwrap_or(d.iterations),
        alpha: args.alpha.unwrap_or(d.alpha),
        use_negatives: args.negatives,
        seed: args.seed,
    }
}

pub fn run(args: TrainArgs, exec: Exec) -> Result<Status> {
    let manifest = load_manifest(&args.manifest)?;
    let scenes = manifest.load_scenes(Some(Split::Train), exec)?;
    let model = build_model(&args, &scenes)?;
    let cfg = train_config(&args);
    eprintln!("resolved run: {}", serde_json::to_string(&Resolved { model: summarize(&model), train: &cfg })?);

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let log_path = args.out.join("log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let mut trainer = Trainer::new(model, cfg, exec)?;
    let every = args.log_every;
    let result = trainer.train(&scenes, |stats, _| {
        let line = serde_json::to_string(stats).expect("step stats serialize");
        writeln!(log, "{line}").map_err(|e| tcbp::Error::Io { path: log_path.clone(), source: e })?;
        if every > 0 && (stats.iteration + 1) % every == 0 {
            eprintln!("iter {:>6}  loss {:.6}", stats.iteration + 1, stats.loss);
        }
        Ok(())
    });
    log.flush()?;
    result?;

    let ckpt = args.out.join("model.ckpt");
    trainer.model.save(&ckpt)?;
    write_file(&args.out.join("optimizer.json"), serde_json::to_string(&trainer.opt)? + "\n")?;
    eprintln!("wrote {}", ckpt.display());
    Ok(Status::Ok)
}
