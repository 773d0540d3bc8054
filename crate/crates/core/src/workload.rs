//! Flow generation: Poisson arrivals over an empirical size distribution,
//! uniform all-to-all endpoints.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::error::SimError;
use crate::framing::FlowId;
use crate::topology::{HostId, PodTopology};

/// The shipped heavy-tailed web-search style distribution.
pub const WEBSEARCH_CSV: &str = include_str!("../data/websearch.csv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub id: FlowId,
    pub src: HostId,
    pub dst: HostId,
    pub size_bytes: u64,
    pub arrival: SimTime,
}

#[derive(Deserialize)]
struct CdfRow {
    size_bytes: f64,
    cdf: f64,
}

#[derive(Serialize, Deserialize)]
struct FlowRow {
    flow_id: u32,
    src: u32,
    dst: u32,
    size_bytes: u64,
    arrival_ps: u64,
}

/// Piecewise-linear empirical CDF. Probability below the first point sits
/// on the first size.
#[derive(Clone, Debug, PartialEq)]
pub struct SizeDistribution {
    points: Vec<(f64, f64)>,
}

impl SizeDistribution {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, SimError> {
        let bad = |m: String| Err(SimError::Workload(m));
        if points.is_empty() {
            return bad("size distribution has no points".into());
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return bad(format!("sizes not strictly increasing at {}", w[1].0));
            }
            if w[1].1 < w[0].1 {
                return bad(format!("cdf decreases at size {}", w[1].0));
            }
        }
        if points[0].0 < 1.0 {
            return bad("sizes must be at least 1 byte".into());
        }
        if points.iter().any(|p| !(0.0..=1.0).contains(&p.1)) {
            return bad("cdf values must lie in [0, 1]".into());
        }
        let last = points[points.len() - 1].1;
        if (last - 1.0).abs() > 1e-9 {
            return bad(format!("cdf ends at {last}, not 1.0"));
        }
        Ok(SizeDistribution { points })
    }

    pub fn fixed(size_bytes: u64) -> Self {
        SizeDistribution {
            points: vec![(size_bytes as f64, 1.0)],
        }
    }

    /// Parses `size_bytes,cdf` CSV text.
    pub fn from_csv_str(text: &str) -> Result<Self, SimError> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let points = rdr
            .deserialize::<CdfRow>()
            .map(|r| r.map(|r| (r.size_bytes, r.cdf)))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(points)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        Self::from_csv_str(&text)
    }

    pub fn websearch() -> Self {
        Self::from_csv_str(WEBSEARCH_CSV).expect("shipped distribution is valid")
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Continuous inverse CDF.
    pub fn quantile(&self, u: f64) -> f64 {
        let p = &self.points;
        if u <= p[0].1 {
            return p[0].0;
        }
        let i = p.partition_point(|&(_, c)| c <= u).min(p.len() - 1);
        let (s0, c0) = p[i - 1];
        let (s1, c1) = p[i];
        if c1 <= c0 {
            return s1;
        }
        s0 + (u - c0) / (c1 - c0) * (s1 - s0)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> u64 {
        let u: f64 = rng.random();
        (self.quantile(u).round() as u64).max(1)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let p = &self.points;
        if x < p[0].0 {
            return 0.0;
        }
        let i = p.partition_point(|&(s, _)| s <= x);
        if i == p.len() {
            return 1.0;
        }
        let (s0, c0) = p[i - 1];
        let (s1, c1) = p[i];
        c0 + (x - s0) / (s1 - s0) * (c1 - c0)
    }

    pub fn mean_bytes(&self) -> f64 {
        let p = &self.points;
        let mut m = p[0].0 * p[0].1;
        for w in p.windows(2) {
            m += (w[1].1 - w[0].1) * (w[0].0 + w[1].0) / 2.0;
        }
        m
    }
}

/// Mean flow arrival rate per second that offers `load` of the pod's
/// aggregate host capacity.
pub fn arrival_rate_per_s(load: f64, topo: &PodTopology, dist: &SizeDistribution) -> f64 {
    load * topo.n_hosts() as f64 * topo.link_rate_bps() as f64 / (dist.mean_bytes() * 8.0)
}

pub fn generate(
    seed: u64,
    load: f64,
    n_flows: usize,
    topo: &PodTopology,
    dist: &SizeDistribution,
) -> Result<Vec<FlowSpec>, SimError> {
    if !(load > 0.0 && load.is_finite()) {
        return Err(SimError::Workload(format!("load must be positive, got {load}")));
    }
    if n_flows == 0 {
        return Err(SimError::Workload("need at least one flow".into()));
    }
    let n = topo.n_hosts() as u32;
    let mean_gap_ps = 1e12 / arrival_rate_per_s(load, topo, dist);
    let gap = Exp::new(1.0 / mean_gap_ps).map_err(|e| SimError::Workload(e.to_string()))?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut t = 0.0f64;
    let mut flows = Vec::with_capacity(n_flows);
    for id in 0..n_flows {
        t += gap.sample(&mut rng);
        let src = rng.random_range(0..n);
        let mut dst = rng.random_range(0..n - 1);
        if dst >= src {
            dst += 1;
        }
        flows.push(FlowSpec {
            id: id as FlowId,
            src: HostId(src),
            dst: HostId(dst),
            size_bytes: dist.sample(&mut rng),
            arrival: SimTime(t.round() as u64),
        });
    }
    Ok(flows)
}

/// Offered load realized by a flow list: bytes over the arrival span,
/// relative to aggregate host capacity.
pub fn realized_load(flows: &[FlowSpec], topo: &PodTopology) -> f64 {
    let Some(last) = flows.last() else {
        return 0.0;
    };
    let bits: f64 = flows.iter().map(|f| f.size_bytes as f64 * 8.0).sum();
    let secs = last.arrival.0 as f64 / 1e12;
    bits / secs / (topo.n_hosts() as f64 * topo.link_rate_bps() as f64)
}

pub fn write_flows_csv(path: &Path, flows: &[FlowSpec]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_path(path)?;
    for f in flows {
        w.serialize(FlowRow {
            flow_id: f.id,
            src: f.src.0,
            dst: f.dst.0,
            size_bytes: f.size_bytes,
            arrival_ps: f.arrival.0,
        })?;
    }
    w.flush().map_err(|e| SimError::io(path, e))
}

pub fn read_flows_csv(path: &Path, topo: &PodTopology) -> Result<Vec<FlowSpec>, SimError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut flows = Vec::new();
    for row in rdr.deserialize::<FlowRow>() {
        let r = row?;
        let n = topo.n_hosts() as u32;
        if r.src >= n || r.dst >= n || r.src == r.dst || r.size_bytes == 0 {
            return Err(SimError::Workload(format!("invalid flow row {}", r.flow_id)));
        }
        flows.push(FlowSpec {
            id: r.flow_id,
            src: HostId(r.src),
            dst: HostId(r.dst),
            size_bytes: r.size_bytes,
            arrival: SimTime(r.arrival_ps),
        });
    }
    flows.sort_by_key(|f| (f.arrival, f.id));
    Ok(flows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topo() -> PodTopology {
        PodTopology::build(8, 100_000_000_000, 1_000_000).unwrap()
    }

    #[test]
    fn shipped_distribution_loads() {
        let d = SizeDistribution::websearch();
        assert_eq!(d.points().len(), 12);
        assert!(d.mean_bytes() > 1e6);
    }

    #[test]
    fn rejects_bad_distributions() {
        assert!(SizeDistribution::new(vec![]).is_err());
        assert!(SizeDistribution::new(vec![(10.0, 0.5), (10.0, 1.0)]).is_err());
        assert!(SizeDistribution::new(vec![(10.0, 0.5), (20.0, 0.9)]).is_err());
        assert!(SizeDistribution::new(vec![(10.0, 0.6), (20.0, 0.5), (30.0, 1.0)]).is_err());
        assert!(SizeDistribution::from_csv_str("size_bytes,cdf\n").is_err());
    }

    #[test]
    fn quantile_interpolates_linearly() {
        let d = SizeDistribution::new(vec![(100.0, 0.0), (200.0, 0.5), (1200.0, 1.0)]).unwrap();
        assert_eq!(d.quantile(0.0), 100.0);
        assert_eq!(d.quantile(0.25), 150.0);
        assert_eq!(d.quantile(0.75), 700.0);
        assert_eq!(d.cdf(700.0), 0.75);
        // point mass + two trapezoids
        assert_eq!(d.mean_bytes(), 0.5 * 150.0 + 0.5 * 700.0);
    }

    #[test]
    fn same_seed_same_flows() {
        let t = topo();
        let d = SizeDistribution::websearch();
        let a = generate(7, 0.5, 500, &t, &d).unwrap();
        let b = generate(7, 0.5, 500, &t, &d).unwrap();
        let c = generate(8, 0.5, 500, &t, &d).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|f| f.src != f.dst && f.size_bytes >= 1));
        assert!(a.windows(2).all(|w| w[0].arrival <= w[1].arrival));
    }

    #[test]
    fn rejects_bad_generation_args() {
        let t = topo();
        let d = SizeDistribution::fixed(1500);
        assert!(generate(1, 0.0, 10, &t, &d).is_err());
        assert!(generate(1, 0.5, 0, &t, &d).is_err());
    }

    #[test]
    fn flows_csv_round_trip() {
        let t = topo();
        let flows = generate(3, 0.3, 200, &t, &SizeDistribution::websearch()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("flows.csv");
        write_flows_csv(&p, &flows).unwrap();
        assert_eq!(read_flows_csv(&p, &t).unwrap(), flows);
    }
}
