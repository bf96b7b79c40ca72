use anyhow::Result;
use clap::Args;
use serde::Serialize;
use tcbp::grad::check::REL_TOL;
use tcbp::gradcheck::{parse_op_kind, run_suite, SuiteOptions, DEFAULT_INSTANCES};
use tcbp::Exec;

use crate::output::{Emit, Table};
use crate::Status;

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct GradcheckArgs {
    /// Only run these suites (comma-separated or repeated).
    #[arg(long = "op", value_delimiter = ',')]
    pub ops: Vec<String>,
    /// Random instances per suite.
    #[arg(long, default_value_t = DEFAULT_INSTANCES)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupt the backward rule of one op kind (for testing the checker).
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
    #[command(flatten)]
    pub emit: Emit,
}

#[derive(Serialize)]
struct Row {
    op: String,
    instances: usize,
    max_rel_err: f64,
    passed: bool,
}

pub fn run(args: GradcheckArgs, exec: Exec) -> Result<Status> {
    let opts = SuiteOptions {
        ops: (!args.ops.is_empty()).then(|| args.ops.clone()),
        instances: args.instances,
        seed: args.seed,
        fault: args.inject_fault.as_deref().map(parse_op_kind).transpose()?,
    };
    let reports = run_suite(&opts, exec)?;
    let mut table = Table::new(["op", "instances", "max_rel_err", "status"]);
    let mut rows = Vec::new();
    for r in reports {
        let status = if r.passed { "pass" } else { "FAIL" };
        table.push([r.op.clone(), r.instances.to_string(), format!("{:.3e}", r.max_rel_err), status.into()]);
        rows.push(Row { op: r.op, instances: r.instances, max_rel_err: r.max_rel_err, passed: r.passed });
    }
    print!("{}", table.to_text());
    args.emit.write(&table, &rows)?;
    let failed = rows.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        eprintln!("{failed} of {} suites exceed relative error {REL_TOL:e}", rows.len());
        return Ok(Status::CheckFailed);
    }
    eprintln!("all {} suites within relative error {REL_TOL:e}", rows.len());
    Ok(Status::Ok)
}
