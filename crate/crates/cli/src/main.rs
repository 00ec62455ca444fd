//! `gsim` — run a workload on a simulated multi-GPU platform.
//!
//! `gsim run` executes one workload; `gsim sweep` runs a parameter grid
//! over one numeric parameter and concatenates the per-run metric rows
//! (each tagged with the parameter value) into a single CSV.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use gsim_core::platform::PlatformConfig;
use gsim_core::runner::{run, to_csv, Row, RunSpec};
use gsim_core::workloads::Params;

#[derive(Parser)]
#[command(name = "gsim", version, about = "Deterministic multi-GPU architectural simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one workload once.
    Run(RunArgs),
    /// Run a workload over a grid of values for one numeric parameter.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Workload name (alu, l1-access, l2-access, dram-access, aes, bs,
    /// fir, gd, km, mt, sc).
    #[arg(long)]
    workload: String,
    /// Platform preset: r9nano (single GPU), msgpu, umgpu, dmgpu.
    #[arg(long, default_value = "r9nano")]
    platform: String,
    /// TOML platform config file; overrides --platform.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Execution mode.
    #[arg(long, default_value = "simulate")]
    mode: String,
    /// Worker threads for the parallel engine (falls back to
    /// SIM_WORKERS, then 1).
    #[arg(long)]
    workers: Option<usize>,
    /// Check the final memory against the workload's host oracle.
    #[arg(long)]
    verify: bool,
    /// Write the metric rows to this CSV file (default: stdout).
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    /// Print every dispatched event to stderr.
    #[arg(long)]
    trace: bool,
    /// Workload parameter override, repeatable: --param n=1024.
    #[arg(long = "param", value_name = "K=V")]
    params: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Parameter to sweep.
    #[arg(long)]
    sweep_param: String,
    /// Inclusive range start.
    #[arg(long)]
    from: u64,
    /// Inclusive range end.
    #[arg(long)]
    to: u64,
    /// Additive step (default) — use --factor for a geometric grid.
    #[arg(long, default_value_t = 1)]
    step: u64,
    /// Multiply instead of add between grid points.
    #[arg(long)]
    factor: bool,
}

fn parse_params(raw: &[String]) -> Result<Params> {
    let mut params = Params::default();
    for kv in raw {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow!("--param expects k=v, got `{kv}`"))?;
        let v: u64 = v.parse().with_context(|| format!("--param {k}: `{v}` is not a number"))?;
        params.0.insert(k.to_string(), v);
    }
    Ok(params)
}

fn build_spec(common: &CommonArgs, params: Params) -> Result<RunSpec> {
    let config = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            PlatformConfig::from_toml(&text).map_err(|e| anyhow!("{e}"))?
        }
        None => PlatformConfig::preset(&common.platform).map_err(|e| anyhow!("{e}"))?,
    };
    let workers = match common.workers {
        Some(w) => w,
        None => std::env::var("SIM_WORKERS")
            .ok()
            .map(|v| v.parse().context("SIM_WORKERS must be an integer"))
            .transpose()?
            .unwrap_or(1),
    };
    if workers == 0 {
        return Err(anyhow!("workers must be >= 1"));
    }
    Ok(RunSpec {
        workload: common.workload.clone(),
        config,
        mode: common.mode.parse().map_err(|e: String| anyhow!(e))?,
        workers,
        verify: common.verify,
        trace: common.trace,
        params,
    })
}

fn emit(common: &CommonArgs, rows: &[Row]) -> Result<()> {
    let csv = to_csv(rows);
    match &common.metrics_out {
        Some(path) => std::fs::write(path, csv)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

/// Exit 2 signals an oracle mismatch, distinct from usage errors.
const EXIT_MISMATCH: u8 = 2;

fn run_once(args: &RunArgs) -> Result<u8> {
    let spec = build_spec(&args.common, parse_params(&args.common.params)?)?;
    let out = run(spec).map_err(|e| anyhow!(e))?;
    emit(&args.common, &out.rows)?;
    if !out.mismatches.is_empty() {
        eprintln!("oracle mismatch:");
        for m in &out.mismatches {
            eprintln!("  {m}");
        }
        return Ok(EXIT_MISMATCH);
    }
    Ok(0)
}

fn sweep(args: &SweepArgs) -> Result<u8> {
    if args.from > args.to || (args.factor && args.step < 2) || args.step == 0 {
        return Err(anyhow!("invalid sweep grid"));
    }
    let mut rows: Vec<Row> = Vec::new();
    let mut mismatched = false;
    let mut v = args.from;
    loop {
        let mut params = parse_params(&args.common.params)?;
        params.0.insert(args.sweep_param.clone(), v);
        let spec = build_spec(&args.common, params)?;
        let out = run(spec).map_err(|e| anyhow!(e))?;
        for (m, c, val) in out.rows {
            rows.push((m, format!("{c}[{}={v}]", args.sweep_param), val));
        }
        if !out.mismatches.is_empty() {
            mismatched = true;
            eprintln!("oracle mismatch at {}={v}:", args.sweep_param);
            for m in &out.mismatches {
                eprintln!("  {m}");
            }
        }
        if v >= args.to {
            break;
        }
        v = if args.factor { v * args.step } else { v + args.step };
    }
    emit(&args.common, &rows)?;
    Ok(if mismatched { EXIT_MISMATCH } else { 0 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run(a) => run_once(a),
        Cmd::Sweep(a) => sweep(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
