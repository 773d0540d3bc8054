//! Flow completion, goodput and latency statistics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::engine::SimTime;
use crate::error::SimError;
use crate::framing::{CellKind, FlowId, FrameLayout};
use crate::topology::{HostId, PodTopology};

/// Flows strictly below this size count as short.
pub const SHORT_FLOW_BYTES: u64 = 10_000;

/// Completion time of a flow alone on an idle fabric: back-to-back cells,
/// no slot quantization, no control gaps.
pub fn ideal_fct(size_bytes: u64, topo: &PodTopology, layout: &FrameLayout, cut_through_ps: u64) -> u64 {
    let cells = size_bytes.div_ceil(layout.data_cell_bytes as u64);
    cells * layout.data_cell_ps + 4 * topo.prop_ps() + 3 * cut_through_ps
}

/// Nearest-rank percentile of sorted data, `q` in (0, 100].
pub fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((q / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeClass {
    Short,
    Long,
    All,
}

impl SizeClass {
    pub const ALL: [SizeClass; 3] = [SizeClass::Short, SizeClass::Long, SizeClass::All];

    pub fn contains(self, size_bytes: u64) -> bool {
        match self {
            SizeClass::Short => size_bytes < SHORT_FLOW_BYTES,
            SizeClass::Long => size_bytes >= SHORT_FLOW_BYTES,
            SizeClass::All => true,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SizeClass::Short => "short",
            SizeClass::Long => "long",
            SizeClass::All => "all",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FlowRecord {
    pub flow_id: FlowId,
    pub src: u32,
    pub dst: u32,
    pub size_bytes: u64,
    pub arrival_ps: u64,
    pub completion_ps: Option<u64>,
    pub fct_ps: Option<u64>,
    pub ideal_fct_ps: u64,
    pub slowdown: Option<f64>,
    pub optimistic_bytes: u64,
    pub redundant_bytes: u64,
}

impl FlowRecord {
    pub fn new(
        id: FlowId,
        src: HostId,
        dst: HostId,
        size_bytes: u64,
        arrival: SimTime,
        ideal_fct_ps: u64,
    ) -> Self {
        FlowRecord {
            flow_id: id,
            src: src.0,
            dst: dst.0,
            size_bytes,
            arrival_ps: arrival.0,
            completion_ps: None,
            fct_ps: None,
            ideal_fct_ps,
            slowdown: None,
            optimistic_bytes: 0,
            redundant_bytes: 0,
        }
    }

    pub fn complete(&mut self, at: SimTime) {
        let fct = at.0 - self.arrival_ps;
        self.completion_ps = Some(at.0);
        self.fct_ps = Some(fct);
        self.slowdown = Some(fct as f64 / self.ideal_fct_ps as f64);
    }
}

/// Exact histogram of per-cell in-network latency, one per cell class.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LatencyHistogram {
    bins: BTreeMap<u64, u64>,
    count: u64,
}

impl LatencyHistogram {
    pub fn add(&mut self, latency_ps: u64) {
        *self.bins.entry(latency_ps).or_default() += 1;
        self.count += 1;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn distinct(&self) -> usize {
        self.bins.len()
    }

    pub fn bins(&self) -> &BTreeMap<u64, u64> {
        &self.bins
    }

    /// (latency, count, cumulative fraction) rows.
    pub fn cdf(&self) -> Vec<(u64, u64, f64)> {
        let mut acc = 0;
        self.bins
            .iter()
            .map(|(&l, &c)| {
                acc += c;
                (l, c, acc as f64 / self.count as f64)
            })
            .collect()
    }

    pub fn stats(&self) -> LatencyStats {
        let mean = if self.count == 0 {
            0.0
        } else {
            self.bins.iter().map(|(&l, &c)| l as f64 * c as f64).sum::<f64>() / self.count as f64
        };
        let var = if self.count == 0 {
            0.0
        } else {
            self.bins
                .iter()
                .map(|(&l, &c)| (l as f64 - mean).powi(2) * c as f64)
                .sum::<f64>()
                / self.count as f64
        };
        LatencyStats {
            count: self.count,
            distinct: self.bins.len(),
            min_ps: self.bins.keys().next().copied(),
            max_ps: self.bins.keys().next_back().copied(),
            mean_ps: mean,
            variance_ps2: var,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LatencyStats {
    pub count: u64,
    pub distinct: usize,
    pub min_ps: Option<u64>,
    pub max_ps: Option<u64>,
    pub mean_ps: f64,
    pub variance_ps2: f64,
}

/// Latency histograms keyed by the cell kind's label.
#[derive(Clone, Debug, Default)]
pub struct LatencyBook {
    by_kind: BTreeMap<&'static str, LatencyHistogram>,
}

impl LatencyBook {
    pub fn add(&mut self, kind: CellKind, latency_ps: u64) {
        self.by_kind.entry(kind.as_str()).or_default().add(latency_ps);
    }

    pub fn get(&self, kind: CellKind) -> Option<&LatencyHistogram> {
        self.by_kind.get(kind.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &LatencyHistogram)> {
        self.by_kind.iter().map(|(k, v)| (*k, v))
    }

    pub fn stats(&self) -> BTreeMap<&'static str, LatencyStats> {
        self.by_kind.iter().map(|(k, v)| (*k, v.stats())).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassStats {
    pub count: usize,
    pub p50_slowdown: Option<f64>,
    pub p99_slowdown: Option<f64>,
    pub mean_slowdown: Option<f64>,
    pub mean_fct_ps: Option<f64>,
}

pub fn class_stats(records: &[FlowRecord], class: SizeClass) -> ClassStats {
    let done: Vec<&FlowRecord> = records
        .iter()
        .filter(|r| class.contains(r.size_bytes) && r.fct_ps.is_some())
        .collect();
    let mut sd: Vec<f64> = done.iter().filter_map(|r| r.slowdown).collect();
    sd.sort_by(f64::total_cmp);
    let n = done.len();
    let mean = |v: f64| (n > 0).then(|| v / n as f64);
    ClassStats {
        count: n,
        p50_slowdown: percentile(&sd, 50.0),
        p99_slowdown: percentile(&sd, 99.0),
        mean_slowdown: mean(sd.iter().sum()),
        mean_fct_ps: mean(done.iter().map(|r| r.fct_ps.unwrap() as f64).sum()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Goodput {
    pub unique_bytes: u64,
    pub first_arrival_ps: u64,
    pub last_completion_ps: u64,
    pub makespan_ps: u64,
    /// Unique bytes over makespan, relative to aggregate host capacity.
    pub goodput: f64,
    /// Bytes over the arrival span, same normalization.
    pub offered_load: f64,
}

pub fn goodput(records: &[FlowRecord], topo: &PodTopology) -> Goodput {
    let cap = topo.n_hosts() as f64 * topo.link_rate_bps() as f64;
    let first = records.iter().map(|r| r.arrival_ps).min().unwrap_or(0);
    let last_arrival = records.iter().map(|r| r.arrival_ps).max().unwrap_or(0);
    let last = records.iter().filter_map(|r| r.completion_ps).max().unwrap_or(first);
    let unique: u64 = records
        .iter()
        .filter(|r| r.completion_ps.is_some())
        .map(|r| r.size_bytes)
        .sum();
    let total: u64 = records.iter().map(|r| r.size_bytes).sum();
    let rate = |bytes: u64, span: u64| {
        if span == 0 {
            0.0
        } else {
            bytes as f64 * 8.0 / (span as f64 / 1e12) / cap
        }
    };
    Goodput {
        unique_bytes: unique,
        first_arrival_ps: first,
        last_completion_ps: last,
        makespan_ps: last - first,
        goodput: rate(unique, last - first),
        offered_load: rate(total, last_arrival),
    }
}

pub fn write_fct_csv(path: &Path, records: &[FlowRecord]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| SimError::io(path, e))
}

#[derive(Serialize)]
struct LatencyRow<'a> {
    kind: &'a str,
    latency_ps: u64,
    count: u64,
    cdf: f64,
}

pub fn write_latency_csv(path: &Path, book: &LatencyBook) -> Result<(), SimError> {
    let mut w = csv::Writer::from_path(path)?;
    for (kind, h) in book.iter() {
        for (latency_ps, count, cdf) in h.cdf() {
            w.serialize(LatencyRow {
                kind,
                latency_ps,
                count,
                cdf,
            })?;
        }
    }
    w.flush().map_err(|e| SimError::io(path, e))
}
