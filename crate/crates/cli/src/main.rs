use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use fastpod_sim::audit::{audit_collision_free, CollisionAudit};
use fastpod_sim::config::{RunConfig, Scheme};
use fastpod_sim::sim::{flows_for, run_to_dir};
use fastpod_sim::sweep::{sweep, SweepPlan};

#[derive(Parser)]
#[command(name = "fastpod", version, about = "Slot-arbitrated zero-buffer pod simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulation and write its output directory.
    Run {
        /// JSON config; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config key, e.g. `--set load=0.8 --set clock.drift_ppm=1`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Run every scheme x load x seed combination and aggregate.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        loads: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "fastpod,fastpod_no_opt,fastpass_mode")]
        schemes: Vec<String>,
        /// Directory for aggregates and per-run outputs; the config's
        /// output_root when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Simulations run at once.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Check a run's recorded link occupancy for overlapping transmissions.
    Audit {
        /// Run directory holding occupancy.csv (written with trace.occupancy).
        #[arg(long)]
        trace: PathBuf,
    },
}

fn load_config(path: Option<&PathBuf>, sets: &[String]) -> Result<RunConfig> {
    let base = match path {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::default(),
    };
    let cfg = base.with_overrides(sets)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(config: Option<PathBuf>, sets: Vec<String>) -> Result<ExitCode> {
    let cfg = load_config(config.as_ref(), &sets)?;
    let flows = flows_for(&cfg)?;
    let (dir, out) = run_to_dir(&cfg, flows)?;
    let s = &out.summary;
    println!("{}", dir.display());
    println!(
        "status={} completed={}/{} audit={} p99_short={} goodput={:.4}",
        s.status,
        s.completed,
        s.n_flows,
        if s.audit.pass { "pass" } else { "FAIL" },
        s.slowdown["short"]
            .p99_slowdown
            .map_or("-".to_string(), |v| format!("{v:.3}")),
        s.goodput.goodput,
    );
    if s.status != "complete" {
        eprintln!("run cap reached before every flow completed");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn run_sweep(
    config: Option<PathBuf>,
    sets: Vec<String>,
    loads: Vec<f64>,
    seeds: Vec<u64>,
    schemes: Vec<String>,
    out: Option<PathBuf>,
    jobs: usize,
) -> Result<ExitCode> {
    let base = load_config(config.as_ref(), &sets)?;
    let schemes = schemes
        .iter()
        .map(|s| s.parse::<Scheme>())
        .collect::<Result<Vec<_>, _>>()?;
    if loads.is_empty() || seeds.is_empty() || schemes.is_empty() {
        bail!("loads, seeds and schemes must be non-empty");
    }
    let out_dir = out.unwrap_or_else(|| base.output_root.clone());
    let plan = SweepPlan {
        base,
        schemes,
        loads,
        seeds,
        out_dir: out_dir.clone(),
        jobs,
    };
    let status = sweep(&plan)?;
    let mut bad = 0;
    for c in &status {
        println!("{} load={} seed={} {} {}", c.scheme, c.load, c.seed, c.status, c.error);
        if c.status != "complete" {
            bad += 1;
        }
    }
    println!("aggregates in {}", out_dir.display());
    Ok(if bad == 0 { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn audit(trace: PathBuf) -> Result<ExitCode> {
    let path = if trace.is_dir() {
        trace.join("occupancy.csv")
    } else {
        trace
    };
    let occ = CollisionAudit::read_csv(&path).with_context(|| format!("reading {}", path.display()))?;
    let report = audit_collision_free(&occ);
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if report.pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Run { config, sets } => run(config, sets),
        Cmd::Sweep {
            config,
            sets,
            loads,
            seeds,
            schemes,
            out,
            jobs,
        } => run_sweep(config, sets, loads, seeds, schemes, out, jobs),
        Cmd::Audit { trace } => audit(trace),
    };
    match r {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
