use std::hint::black_box;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::Result;
use clap::Args;
use serde::Serialize;
use tcbp::sketch::{cbp_encode, tcbp_encode, tcbp_project, SketchMode, SketchParams};
use tcbp::FeatureMap;

use crate::output::{write_file, Table};
use crate::{usage, Status};

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct BenchArgs {
    /// Channel counts to sweep.
    #[arg(long, value_delimiter = ',', default_value = "256,1024")]
    pub c: Vec<usize>,
    /// Segment counts to sweep.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,6,8")]
    pub t: Vec<usize>,
    /// Sketch dimensions to sweep.
    #[arg(long, value_delimiter = ',', default_value = "1024,8192")]
    pub d: Vec<usize>,
    /// Timed repetitions per cell; the minimum is reported alongside the mean.
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write parameter-count checks and the TCBP projection slopes as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
struct Row {
    method: &'static str,
    c: usize,
    t: usize,
    d: usize,
    params: Option<usize>,
    expected_params: Option<usize>,
    mean_us: f64,
    min_us: f64,
}

/// Least-squares fit of projection time against `t` for one `(c, d)`.
#[derive(Debug, Clone, Serialize)]
struct Slope {
    c: usize,
    d: usize,
    us_per_segment: f64,
    intercept_us: f64,
    r2: f64,
}

#[derive(Serialize)]
struct Summary {
    param_mismatches: Vec<Row>,
    tcbp_projection_slopes: Vec<Slope>,
}

/// Stored hash and sign entries predicted for each sketch kind.
pub fn expected_params(mode: SketchMode, c: usize, t: usize) -> usize {
    match mode {
        SketchMode::Cbp => 2 * 2 * c,
        SketchMode::Tcbp => 2 * (c + c * t),
    }
}

fn input(c: usize, t: usize) -> Result<FeatureMap> {
    Ok(FeatureMap::from_fn(c, t, |i, s| ((i * 31 + s * 17) % 97) as f64 / 97.0 - 0.5)?)
}

fn time<R>(reps: usize, mut f: impl FnMut() -> R) -> (f64, f64) {
    black_box(f());
    let mut total = Duration::ZERO;
    let mut best = Duration::MAX;
    for _ in 0..reps {
        let start = Instant::now();
        black_box(f());
        let el = start.elapsed();
        total += el;
        best = best.min(el);
    }
    (total.as_secs_f64() * 1e6 / reps as f64, best.as_secs_f64() * 1e6)
}

fn fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let (mx, my) = (points.iter().map(|p| p.0).sum::<f64>() / n, points.iter().map(|p| p.1).sum::<f64>() / n);
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

pub fn run(args: BenchArgs) -> Result<Status> {
    if args.reps == 0 || [&args.c, &args.t, &args.d].iter().any(|v| v.is_empty() || v.contains(&0)) {
        return Err(usage("--c, --t and --d need positive values and --reps must be at least 1"));
    }
    let mut rows = Vec::new();
    for &c in &args.c {
        for &d in &args.d {
            for &t in &args.t {
                let x = input(c, t)?;
                let cbp = SketchParams::new(c, t, d, args.seed, SketchMode::Cbp)?;
                let tcbp = SketchParams::new(c, t, d, args.seed, SketchMode::Tcbp)?;
                let cell = |method, p: Option<&SketchParams>, (mean_us, min_us)| Row {
                    method,
                    c,
                    t,
                    d,
                    params: p.map(SketchParams::parameter_count),
                    expected_params: p.map(|p| expected_params(p.mode(), c, t)),
                    mean_us,
                    min_us,
                };
                rows.push(cell("cbp", Some(&cbp), time(args.reps, || cbp_encode(&x, &cbp))));
                rows.push(cell("tcbp", Some(&tcbp), time(args.reps, || tcbp_encode(&x, &tcbp))));
                rows.push(cell("tcbp_project", Some(&tcbp), time(args.reps, || tcbp_project(&x, &tcbp))));
                rows.push(cell("meanpool", None, time(args.reps, || x.mean_pool())));
            }
        }
    }

    let mut table = Table::new(["method", "c", "t", "d", "params", "expected_params", "mean_us", "min_us"]);
    let opt = |v: Option<usize>| v.map(|n| n.to_string()).unwrap_or_default();
    for r in &rows {
        table.push([
            r.method.to_string(),
            r.c.to_string(),
            r.t.to_string(),
            r.d.to_string(),
            opt(r.params),
            opt(r.expected_params),
            format!("{:.3}", r.mean_us),
            format!("{:.3}", r.min_us),
        ]);
    }
    match &args.out {
        Some(path) => write_file(path, table.to_csv())?,
        None => print!("{}", table.to_csv()),
    }

    let mut slopes = Vec::new();
    for &c in &args.c {
        for &d in &args.d {
            let points: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.method == "tcbp_project" && r.c == c && r.d == d)
                .map(|r| (r.t as f64, r.min_us))
                .collect();
            if points.len() >= 2 {
                let (us_per_segment, intercept_us, r2) = fit(&points);
                eprintln!("tcbp projection c={c} d={d}: {us_per_segment:.3} us per segment, intercept {intercept_us:.3} us, r2 {r2:.3}");
                slopes.push(Slope { c, d, us_per_segment, intercept_us, r2 });
            }
        }
    }
    let mismatches: Vec<Row> = rows.iter().filter(|r| r.params != r.expected_params).cloned().collect();
    if let Some(path) = &args.json {
        let summary = Summary { param_mismatches: mismatches.clone(), tcbp_projection_slopes: slopes };
        write_file(path, serde_json::to_string_pretty(&summary)? + "\n")?;
    }
    if !mismatches.is_empty() {
        eprintln!("{} sketch parameter counts differ from 2*2c / 2*(c+ct)", mismatches.len());
        return Ok(Status::CheckFailed);
    }
    eprintln!("sketch parameter counts match 2*2c (CBP) and 2*(c+ct) (TCBP)");
    Ok(Status::Ok)
}
