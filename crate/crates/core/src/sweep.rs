//! Load/seed/scheme sweeps and their aggregate CSVs.
//!
//! Column sets are stable; downstream plotting reads them by name:
//!
//! - `slowdown.csv`: scheme, load, seed, size_class, count, p50, p99,
//!   mean_slowdown, mean_fct_ps
//! - `goodput.csv`: scheme, load, seed, offered_load, goodput, makespan_ps,
//!   completed, n_flows
//! - `latency.csv`: scheme, load, seed, kind, latency_ps, count, cdf
//! - `overhead.csv`: scheme, load, seed, unique_bytes, redundant_bytes,
//!   optimistic_bytes, control_bytes, dropped_unscheduled
//! - `sweep_status.csv`: scheme, load, seed, run_dir, status, error

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::config::{RunConfig, Scheme};
use crate::error::SimError;
use crate::framing::CellKind;
use crate::metrics::SizeClass;
use crate::sim::{flows_for, run_to_dir, RunOutput};

#[derive(Clone, Debug)]
pub struct SweepPlan {
    pub base: RunConfig,
    pub schemes: Vec<Scheme>,
    pub loads: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Aggregates go here; runs go in subdirectories.
    pub out_dir: PathBuf,
    pub jobs: usize,
}

impl SweepPlan {
    /// Every (scheme, load, seed) in output order.
    pub fn cells(&self) -> Vec<RunConfig> {
        let mut v = Vec::new();
        for &scheme in &self.schemes {
            for &load in &self.loads {
                for &seed in &self.seeds {
                    let mut c = self.base.clone();
                    c.scheme = scheme;
                    c.load = load;
                    c.seed = seed;
                    c.output_root = self.out_dir.clone();
                    v.push(c);
                }
            }
        }
        v
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CellStatus {
    pub scheme: Scheme,
    pub load: f64,
    pub seed: u64,
    pub run_dir: String,
    pub status: String,
    pub error: String,
}

#[derive(Serialize)]
struct SlowdownRow {
    scheme: Scheme,
    load: f64,
    seed: u64,
    size_class: &'static str,
    count: usize,
    p50: Option<f64>,
    p99: Option<f64>,
    mean_slowdown: Option<f64>,
    mean_fct_ps: Option<f64>,
}

#[derive(Serialize)]
struct GoodputRow {
    scheme: Scheme,
    load: f64,
    seed: u64,
    offered_load: f64,
    goodput: f64,
    makespan_ps: u64,
    completed: usize,
    n_flows: usize,
}

#[derive(Serialize)]
struct LatencyRow {
    scheme: Scheme,
    load: f64,
    seed: u64,
    kind: &'static str,
    latency_ps: u64,
    count: u64,
    cdf: f64,
}

#[derive(Serialize)]
struct OverheadRow {
    scheme: Scheme,
    load: f64,
    seed: u64,
    unique_bytes: u64,
    redundant_bytes: u64,
    optimistic_bytes: u64,
    control_bytes: u64,
    dropped_unscheduled: u64,
}

struct Aggregates {
    slowdown: Vec<SlowdownRow>,
    goodput: Vec<GoodputRow>,
    latency: Vec<LatencyRow>,
    overhead: Vec<OverheadRow>,
}

fn rows_for(cfg: &RunConfig, out: &RunOutput, agg: &mut Aggregates) {
    let s = &out.summary;
    for class in SizeClass::ALL {
        let c = s.slowdown[class.as_str()];
        agg.slowdown.push(SlowdownRow {
            scheme: cfg.scheme,
            load: cfg.load,
            seed: cfg.seed,
            size_class: class.as_str(),
            count: c.count,
            p50: c.p50_slowdown,
            p99: c.p99_slowdown,
            mean_slowdown: c.mean_slowdown,
            mean_fct_ps: c.mean_fct_ps,
        });
    }
    agg.goodput.push(GoodputRow {
        scheme: cfg.scheme,
        load: cfg.load,
        seed: cfg.seed,
        offered_load: s.goodput.offered_load,
        goodput: s.goodput.goodput,
        makespan_ps: s.goodput.makespan_ps,
        completed: s.completed,
        n_flows: s.n_flows,
    });
    for (kind, h) in out.latency.iter() {
        for (latency_ps, count, cdf) in h.cdf() {
            agg.latency.push(LatencyRow {
                scheme: cfg.scheme,
                load: cfg.load,
                seed: cfg.seed,
                kind,
                latency_ps,
                count,
                cdf,
            });
        }
    }
    agg.overhead.push(OverheadRow {
        scheme: cfg.scheme,
        load: cfg.load,
        seed: cfg.seed,
        unique_bytes: s.overhead.unique_bytes,
        redundant_bytes: s.overhead.redundant_bytes,
        optimistic_bytes: s.overhead.optimistic_bytes,
        control_bytes: s.overhead.control_bytes,
        dropped_unscheduled: s.cells_dropped[CellKind::DataUnscheduled.as_str()],
    });
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| SimError::io(path, e))
}

type CellResult = Result<(PathBuf, RunOutput), SimError>;

/// Runs every cell of the plan, `jobs` at a time, and writes the aggregates.
/// A failing cell is recorded in `sweep_status.csv` and skipped.
pub fn sweep(plan: &SweepPlan) -> Result<Vec<CellStatus>, SimError> {
    std::fs::create_dir_all(&plan.out_dir).map_err(|e| SimError::io(&plan.out_dir, e))?;
    let cells = plan.cells();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<CellResult>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..plan.jobs.max(1).min(cells.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = cells.get(i) else { break };
                let r = flows_for(cfg).and_then(|flows| run_to_dir(cfg, flows));
                results.lock().expect("no panics while held")[i] = Some(r);
            });
        }
    });
    let results = results.into_inner().expect("workers joined");

    let mut agg = Aggregates {
        slowdown: Vec::new(),
        goodput: Vec::new(),
        latency: Vec::new(),
        overhead: Vec::new(),
    };
    let mut status = Vec::new();
    for (cfg, r) in cells.iter().zip(results) {
        let r = r.expect("every cell ran");
        let (run_dir, st, error) = match &r {
            Ok((dir, out)) => {
                rows_for(cfg, out, &mut agg);
                (dir.display().to_string(), out.summary.status.to_string(), String::new())
            }
            Err(e) => (cfg.run_dir().display().to_string(), "error".to_string(), e.to_string()),
        };
        status.push(CellStatus {
            scheme: cfg.scheme,
            load: cfg.load,
            seed: cfg.seed,
            run_dir,
            status: st,
            error,
        });
    }
    let d = &plan.out_dir;
    write_rows(&d.join("slowdown.csv"), &agg.slowdown)?;
    write_rows(&d.join("goodput.csv"), &agg.goodput)?;
    write_rows(&d.join("latency.csv"), &agg.latency)?;
    write_rows(&d.join("overhead.csv"), &agg.overhead)?;
    write_rows(&d.join("sweep_status.csv"), &status)?;
    Ok(status)
}
