use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde::Serialize;
use tcbp::dataio::{generate_synthetic, load_manifest, Split, SynthConfig, REFERENCE_VALIDATION_SIZES};
use tcbp::Modality;

use crate::output::{Emit, Table};
use crate::{usage, Status};

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct SynthArgs {
    /// Output directory for `manifest.jsonl` and `features/`.
    #[arg(long)]
    pub out: PathBuf,
    /// Train-split scene count. The default reproduces the reference
    /// validation histogram exactly.
    #[arg(long, default_value_t = 1784)]
    pub n_scenes: usize,
    #[arg(long, default_value_t = 0)]
    pub n_val: usize,
    #[arg(long, default_value_t = 0)]
    pub n_test: usize,
    /// Scene-size proportions as `M:p,...`; defaults to the reference histogram.
    #[arg(long)]
    pub sizes: Option<String>,
    /// Modalities with channel counts as `X:c,...`.
    #[arg(long, default_value = "A:8,P:16,I:16")]
    pub modalities: String,
    /// Segment-count proportions as `t:p,...`.
    #[arg(long, default_value = "4:0.65,5:0.2,6:0.15")]
    pub t_full: String,
    #[arg(long, default_value_t = 5.0)]
    pub signal: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub emit: Emit,
}

/// Parses `k:v,k:v` into pairs.
pub fn parse_pairs<K: std::str::FromStr, V: std::str::FromStr>(flag: &str, s: &str) -> Result<Vec<(K, V)>> {
    s.split(',')
        .map(|item| {
            let parsed = item.split_once(':').and_then(|(k, v)| Some((k.trim().parse().ok()?, v.trim().parse().ok()?)));
            parsed.ok_or_else(|| usage(format!("--{flag}: cannot parse `{item}`, expected key:value")))
        })
        .collect()
}

#[derive(Serialize)]
struct Summary {
    manifest: PathBuf,
    histogram: BTreeMap<Split, BTreeMap<usize, usize>>,
}

pub fn run(args: SynthArgs) -> Result<Status> {
    let sizes = match &args.sizes {
        Some(s) => parse_pairs("sizes", s)?,
        None => {
            let total: usize = REFERENCE_VALIDATION_SIZES.iter().map(|(_, n)| n).sum();
            REFERENCE_VALIDATION_SIZES.iter().map(|&(m, n)| (m, n as f64 / total as f64)).collect()
        }
    };
    let cfg = SynthConfig {
        n_train: args.n_scenes,
        n_val: args.n_val,
        n_test: args.n_test,
        sizes,
        modalities: parse_pairs::<Modality, usize>("modalities", &args.modalities)?,
        t_full: parse_pairs("t-full", &args.t_full)?,
        signal_strength: args.signal,
        noise_std: args.noise,
        seed: args.seed,
    };
    let manifest_path = generate_synthetic(&cfg, &args.out)?;
    let manifest = load_manifest(&manifest_path)?;

    let mut histogram: BTreeMap<Split, BTreeMap<usize, usize>> = BTreeMap::new();
    for entry in &manifest.scenes {
        *histogram.entry(entry.split).or_default().entry(entry.clips.len()).or_default() += 1;
    }
    let mut table =
        Table::new(["split".to_string()].into_iter().chain((2..=6).map(|m| format!("M={m}"))).chain(["total".into()]));
    for (split, h) in &histogram {
        let counts = (2..=6).map(|m| h.get(&m).copied().unwrap_or(0).to_string());
        table.push([split.to_string()].into_iter().chain(counts).chain([h.values().sum::<usize>().to_string()]));
    }
    eprintln!("wrote {}", manifest_path.display());
    print!("{}", table.to_text());
    args.emit.write(&table, &Summary { manifest: manifest_path, histogram })?;
    Ok(Status::Ok)
}
