//! `gridplan`: process-grid planning, scaling sweeps, simulated execution and
//! traffic reconciliation.
//!
//! Exit codes: 0 success, 1 bad input, 2 infeasible query or failed check.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gridplan::planner::Policy;

#[derive(Debug, Parser)]
#[command(name = "gridplan", version, about = "Plan and verify process grids for data/model/domain parallel training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rank every grid for one process count and batch size.
    Plan(PlanArgs),
    /// Plan across several process counts.
    Sweep(SweepArgs),
    /// Execute a small network on a simulated grid and check it.
    Simulate(SimulateArgs),
    /// Batch size at which batch and model parallelism move equal words, per convolution.
    Crossover(CrossoverArgs),
    /// Compare an exported traffic ledger with the cost model.
    Reconcile(ReconcileArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Alexnet,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct NetArgs {
    /// Network description (JSON).
    #[arg(long, value_name = "FILE")]
    net: Option<PathBuf>,
    /// Built-in network.
    #[arg(long)]
    preset: Option<Preset>,
}

#[derive(Debug, Args)]
#[group(multiple = false)]
struct HwArgs {
    /// Hardware description (JSON).
    #[arg(long, value_name = "FILE")]
    hw: Option<PathBuf>,
    /// alpha = 2 us, 6 GB/s, 4-byte words (the default when neither flag is given).
    #[arg(long = "default")]
    default_hw: bool,
}

#[derive(Debug, Args)]
struct PlanArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    hw: HwArgs,
    #[arg(long, value_name = "P")]
    procs: u64,
    #[arg(long, value_name = "B")]
    batch: u64,
    #[arg(long, default_value = "conv-batch-fc-model", value_parser = parse_policy)]
    policy: Policy,
    /// Hide backward weight all-reduces behind backward compute.
    #[arg(long)]
    overlap: bool,
    /// Drop grids whose per-process batch exceeds N.
    #[arg(long = "max-bpp", value_name = "N")]
    max_bpp: Option<u64>,
    /// Also write the ranked table as CSV.
    #[arg(long, value_name = "CSV")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepMode {
    Strong,
    Weak,
    BeyondBatch,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    hw: HwArgs,
    #[arg(long, value_enum)]
    mode: SweepMode,
    #[arg(long = "procs-list", value_delimiter = ',', required = true, num_args = 1..)]
    procs_list: Vec<u64>,
    /// Global batch for strong and beyond-batch sweeps.
    #[arg(long, value_name = "B", conflicts_with = "batch_list")]
    batch: Option<u64>,
    /// One batch size per process count, for weak sweeps.
    #[arg(long = "batch-list", value_delimiter = ',', num_args = 0..)]
    batch_list: Option<Vec<u64>>,
    #[arg(long, default_value = "conv-batch-fc-model", value_parser = parse_policy)]
    policy: Policy,
    #[arg(long)]
    overlap: bool,
    #[arg(long = "max-bpp", value_name = "N")]
    max_bpp: Option<u64>,
    /// Write the CSV here instead of stdout.
    #[arg(long, value_name = "CSV")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Fully connected widths such as `8,6,4`, or `conv:HxWxC:K:OUT[:K:OUT...]`.
    #[arg(long)]
    layers: String,
    /// Grid as `RxC`.
    #[arg(long, value_parser = parse_grid)]
    grid: (usize, usize),
    #[arg(long)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also check the distributed gradient against finite differences
    /// (fully connected networks).
    #[arg(long)]
    check: bool,
    /// Write the traffic ledger as CSV.
    #[arg(long = "ledger-out", value_name = "CSV")]
    ledger_out: Option<PathBuf>,
    /// Write the per-rank reconcile report as CSV.
    #[arg(long = "report-out", value_name = "CSV")]
    report_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CrossoverArgs {
    #[command(flatten)]
    net: NetArgs,
}

#[derive(Debug, Args)]
struct ReconcileArgs {
    /// Ledger CSV written by `simulate --ledger-out`.
    #[arg(long, value_name = "CSV")]
    ledger: PathBuf,
    #[arg(long)]
    layers: String,
    #[arg(long, value_parser = parse_grid)]
    grid: (usize, usize),
    #[arg(long)]
    batch: usize,
}

fn parse_policy(s: &str) -> Result<Policy, String> {
    s.parse::<Policy>().map_err(|e| e.to_string())
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected RxC, got {s:?}"))?;
    let side = |v: &str| v.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| format!("bad grid side {v:?} in {s:?}"));
    Ok((side(r)?, side(c)?))
}

/// How a command ended when it did not fail with an error.
enum Outcome {
    Success,
    /// A check ran and failed.
    CheckFailed,
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("GRIDPLAN_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| anyhow::anyhow!("GRIDPLAN_THREADS must be a positive integer, got {v:?}"))?;
        if n == 0 {
            anyhow::bail!("GRIDPLAN_THREADS must be >= 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<gridplan::Error>() {
        Some(gridplan::Error::Infeasible(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Plan(a) => commands::plan(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Crossover(a) => commands::crossover(a),
        Command::Reconcile(a) => commands::reconcile(a),
    });
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
