//! `tcbp` command-line driver.
//!
//! Exit codes: 0 success, 1 a check or assertion failed (or training
//! diverged), 2 usage or input error. Logs and the resolved configuration go to
//! stderr, data to stdout or the files named by flags.

mod bench;
mod eval;
mod gradcheck;
mod output;
mod overlay;
mod synth;
mod train;

use std::fmt::Display;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use serde::{Serialize, Serializer};
use tcbp::Exec;

#[derive(Debug, Parser, Serialize)]
#[command(name = "tcbp", version, about = "Temporal compact bilinear pooling and clip ordering")]
struct Cli {
    /// Flat `key = value` file whose entries act as flags of the subcommand;
    /// flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads. 1 runs everything sequentially.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    threads: u32,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
enum Command {
    /// Generate a synthetic dataset and print its scene-size histogram.
    Synth(synth::SynthArgs),
    /// Train an encoder on the train split of a manifest.
    Train(train::TrainArgs),
    /// Order the scenes of a split and emit one JSON object per scene.
    Order(eval::OrderArgs),
    /// Ordering accuracy per scene size, with the chance baseline.
    Eval(eval::EvalArgs),
    /// Finite-difference checks of every differentiable op.
    Gradcheck(gradcheck::GradcheckArgs),
    /// Encoder timings and sketch parameter counts as CSV.
    Bench(bench::BenchArgs),
}

/// Outcome of a subcommand that ran to completion.
pub enum Status {
    Ok,
    /// A check or assertion reported failure.
    CheckFailed,
}

/// Serializes through `Display`, for printing enums from the core crate.
pub fn ser_display<T: Display, S: Serializer>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

pub fn ser_display_opt<T: Display, S: Serializer>(v: &Option<T>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.collect_str(v),
        None => s.serialize_none(),
    }
}

fn exec_for(threads: u32) -> Result<Exec> {
    if threads == 1 {
        return Ok(Exec::Sequential);
    }
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new().num_threads(threads as usize).build_global()?;
        Ok(Exec::Parallel)
    }
    #[cfg(not(feature = "parallel"))]
    {
        eprintln!("warning: built without the `parallel` feature; running on one thread");
        Ok(Exec::Sequential)
    }
}

/// Input and argument errors exit with 2; everything else with 1.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    use tcbp::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Diverged { .. } | E::NonFinite(_) | E::Shape { .. } => 1,
                _ => 2,
            };
        }
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
    }
    1
}

/// A bad flag value detected after parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// The error chain joined with `: `, skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg += ": ";
            }
            msg += &text;
        }
    }
    msg
}

fn run(cli: Cli) -> Result<Status> {
    eprintln!("resolved config: {}", serde_json::to_string(&cli)?);
    let exec = exec_for(cli.threads)?;
    match cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Train(a) => train::run(a, exec),
        Command::Order(a) => eval::run_order(a, exec),
        Command::Eval(a) => eval::run_eval(a, exec),
        Command::Gradcheck(a) => gradcheck::run(a, exec),
        Command::Bench(a) => bench::run(a),
    }
}

fn main() -> ExitCode {
    let args = match overlay::apply(std::env::args_os().collect()) {
        Ok(args) => args,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code_for(&e))
        }
    }
}
