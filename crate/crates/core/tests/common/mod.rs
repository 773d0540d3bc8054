#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use fastpod_sim::arbiter::{Arbiter, PairService};
use fastpod_sim::framing::{DemandAnnounce, FrameLayout, RtsInfo};
use fastpod_sim::{HostId, LinkId, NodeId, PodTopology, SimTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn pod() -> (PodTopology, FrameLayout) {
    (
        PodTopology::build(8, 100_000_000_000, 1_000_000).unwrap(),
        FrameLayout::new(4, 1500, 64, 80, 0, 0).unwrap(),
    )
}

/// Links of a host-to-host path found by node names, not by the router.
pub fn path_by_names(t: &PodTopology, src: HostId, dst: HostId, agg: u32) -> [LinkId; 4] {
    let per_tor = t.k() / 2;
    let (ts, td) = (src.0 / per_tor, dst.0 / per_tor);
    let l = |a, b| t.find_link(a, b).expect("link exists");
    [
        l(NodeId::Host(src.0), NodeId::Tor(ts)),
        l(NodeId::Tor(ts), NodeId::Agg(agg)),
        l(NodeId::Agg(agg), NodeId::Tor(td)),
        l(NodeId::Tor(td), NodeId::Host(dst.0)),
    ]
}

#[derive(Debug, Default)]
pub struct BookStats {
    pub slots: u64,
    pub grants: u64,
    pub demands: usize,
}

/// Drives a random demand book through the arbiter until it drains and
/// audits every allocation by brute force.
pub fn check_random_book(seed: u64, service: PairService) -> Result<BookStats, String> {
    let (topo, layout) = pod();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = topo.n_hosts() as u32;
    let n_demands = rng.random_range(1..=60usize);
    let mut arrivals: BTreeMap<u64, Vec<RtsInfo>> = BTreeMap::new();
    let mut requested = BTreeMap::new();
    for id in 0..n_demands as u32 {
        let src = rng.random_range(0..n);
        let dst = (src + rng.random_range(1..n)) % n;
        let bytes = rng.random_range(1..=50_000u64);
        let slot = rng.random_range(0..20u64);
        requested.insert(id, bytes);
        arrivals.entry(slot).or_default().push(RtsInfo {
            src: HostId(src),
            slot,
            demand: Some(DemandAnnounce {
                demand: id,
                dst: HostId(dst),
                bytes,
            }),
            report: None,
        });
    }
    let mut arb = Arbiter::new(&topo, &layout).with_pair_service(service);
    let mut cells_granted: BTreeMap<u32, u64> = BTreeMap::new();
    let mut stats = BookStats {
        demands: n_demands,
        ..Default::default()
    };
    let max_cells = layout.n_positions - 1;
    for slot in 0..100_000u64 {
        for r in arrivals.remove(&slot).unwrap_or_default() {
            arb.handle_rts(&r, SimTime(0)).map_err(|e| e.to_string())?;
        }
        let pending: BTreeSet<(HostId, HostId)> =
            arb.book().candidates().map(|c| (c.src, c.dst)).collect();
        let alloc = arb.schedule_slot(slot, &topo).map_err(|e| e.to_string())?;
        let mut srcs = BTreeSet::new();
        let mut dsts = BTreeSet::new();
        let mut used: BTreeMap<LinkId, u32> = BTreeMap::new();
        for g in &alloc.grants {
            if g.src == g.dst || !srcs.insert(g.src) || !dsts.insert(g.dst) {
                return Err(format!("seed {seed} slot {slot}: matching broken by {g:?}"));
            }
            if g.cells == 0 || g.cells > max_cells {
                return Err(format!("seed {seed} slot {slot}: {} cells in one grant", g.cells));
            }
            if !pending.contains(&(g.src, g.dst)) {
                return Err(format!("seed {seed} slot {slot}: grant without demand"));
            }
            for l in path_by_names(&topo, g.src, g.dst, g.agg) {
                *used.entry(l).or_default() += 1;
            }
            *cells_granted.entry(g.demand).or_default() += g.cells as u64;
        }
        if let Some((l, c)) = used.iter().find(|(_, &c)| c > 1) {
            return Err(format!("seed {seed} slot {slot}: link {} used {c} times", l.0));
        }
        // Maximality: a pending pair with both ends free could have been granted.
        for (s, d) in &pending {
            if !srcs.contains(s) && !dsts.contains(d) {
                return Err(format!("seed {seed} slot {slot}: {s}->{d} left unmatched"));
            }
        }
        stats.grants += alloc.grants.len() as u64;
        stats.slots = slot + 1;
        if arrivals.is_empty() && arb.book().is_empty() {
            break;
        }
    }
    if !arb.book().is_empty() {
        return Err(format!("seed {seed}: book never drained"));
    }
    let ledger = arb.book().completed();
    if ledger.len() != n_demands {
        return Err(format!("seed {seed}: {} of {n_demands} demands completed", ledger.len()));
    }
    for l in ledger {
        let want = requested[&l.demand];
        if l.requested_bytes != want || l.granted_bytes != want {
            return Err(format!("seed {seed}: demand {} requested {want}, ledger {l:?}", l.demand));
        }
        let cells = want.div_ceil(layout.data_cell_bytes as u64);
        if cells_granted[&l.demand] != cells {
            return Err(format!(
                "seed {seed}: demand {} needs {cells} cells, granted {}",
                l.demand, cells_granted[&l.demand]
            ));
        }
    }
    Ok(stats)
}
