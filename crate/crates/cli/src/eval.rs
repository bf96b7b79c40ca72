use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde::Serialize;
use tcbp::dataio::{load_manifest, Scene, Split};
use tcbp::encoder::{EncoderModel, Sampling};
use tcbp::ordering::{chance_accuracy, DEFAULT_MAX_CLIPS};
use tcbp::trainer::{evaluate, EvalConfig, EvalReport};
use tcbp::Exec;

use crate::output::{write_file, Emit, Table};
use crate::{usage, Status};

#[derive(Debug, Args, Serialize)]
pub struct Source {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// train, val, test or all.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Largest scene that may be ordered by exhaustive search.
    #[arg(long, default_value_t = DEFAULT_MAX_CLIPS)]
    pub max_clips: usize,
    /// Segment sampling at inference; defaults to the model's own setting.
    #[arg(long)]
    #[serde(serialize_with = "crate::ser_display_opt")]
    pub sampling: Option<Sampling>,
    /// Seed for the order clips are presented in, or `none` for ground-truth order.
    #[arg(long, default_value = "0")]
    pub shuffle_seed: String,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct OrderArgs {
    #[command(flatten)]
    pub source: Source,
    /// Write the JSON lines here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub emit: Emit,
}

fn report(src: &Source, exec: Exec) -> Result<EvalReport> {
    let split = match src.split.as_str() {
        "all" => None,
        s => Some(s.parse::<Split>()?),
    };
    let shuffle_seed = match src.shuffle_seed.as_str() {
        "none" => None,
        s => Some(s.parse().map_err(|_| usage(format!("--shuffle-seed: expected an integer or `none`, got `{s}`")))?),
    };
    let model = EncoderModel::load(&src.checkpoint)?;
    let scenes: Vec<Scene> = load_manifest(&src.manifest)?.load_scenes(split, exec)?;
    let cfg = EvalConfig {
        sampling: src.sampling.unwrap_or(model.config().sampling),
        max_clips: src.max_clips,
        shuffle_seed,
    };
    Ok(evaluate(&model, &scenes, &cfg, exec)?)
}

pub fn run_order(args: OrderArgs, exec: Exec) -> Result<Status> {
    let rep = report(&args.source, exec)?;
    let mut text = String::new();
    for s in &rep.scenes {
        text += &serde_json::to_string(s)?;
        text.push('\n');
    }
    match &args.out {
        Some(path) => write_file(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    eprintln!("ordered {} scenes, accuracy {:.2}%", rep.scenes.len(), 100.0 * rep.accuracy);
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct SizeRow {
    scenes: usize,
    correct: usize,
    accuracy: f64,
    chance: f64,
}

#[derive(Serialize)]
struct EvalSummary {
    scenes: usize,
    accuracy: f64,
    chance: f64,
    by_size: BTreeMap<usize, SizeRow>,
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// Accuracy per scene size with the random-permutation baseline beneath it.
fn size_table(rep: &EvalReport) -> Result<(Table, EvalSummary)> {
    let sizes: Vec<usize> = rep.by_size.keys().copied().collect();
    let mut table =
        Table::new(["".to_string()].into_iter().chain(sizes.iter().map(|m| format!("M={m}"))).chain(["all".into()]));
    let mut by_size = BTreeMap::new();
    for (&m, s) in &rep.by_size {
        let chance = chance_accuracy(&BTreeMap::from([(m, 1)]))?;
        by_size.insert(m, SizeRow { scenes: s.scenes, correct: s.correct, accuracy: s.accuracy(), chance });
    }
    let row = |name: &str, f: &dyn Fn(&SizeRow) -> String, all: String| {
        [name.to_string()].into_iter().chain(by_size.values().map(f)).chain([all]).collect::<Vec<_>>()
    };
    table.push(row("model", &|r| pct(r.accuracy), pct(rep.accuracy)));
    table.push(row("random", &|r| pct(r.chance), pct(rep.chance)));
    table.push(row("scenes", &|r| r.scenes.to_string(), rep.scenes.len().to_string()));
    let summary = EvalSummary { scenes: rep.scenes.len(), accuracy: rep.accuracy, chance: rep.chance, by_size };
    Ok((table, summary))
}

pub fn run_eval(args: EvalArgs, exec: Exec) -> Result<Status> {
    let rep = report(&args.source, exec)?;
    let (table, summary) = size_table(&rep)?;
    println!("accuracy {}%  (chance {}%)", pct(rep.accuracy), pct(rep.chance));
    print!("{}", table.to_text());
    args.emit.write(&table, &summary)?;
    Ok(Status::Ok)
}
