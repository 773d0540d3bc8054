//! Heartbeat and report driven failure detection.
//!
//! Every host sends one RTS per slot, so a missing RTS implicates the host or
//! its access path within one slot. For links above the ToR, receivers report
//! whether the scheduled cells they were told to expect actually arrived; the
//! arbiter intersects failed paths with the paths vouched for by healthy
//! reports of the same slot.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::framing::RxReport;
use crate::topology::{HostId, LinkId, PodTopology};

use super::TimeslotAllocation;

const RING: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "id")]
pub enum Suspect {
    /// The host or its link to the ToR.
    Host(u32),
    Link(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Detection {
    pub suspect: Suspect,
    /// For hosts: the slot boundary at which the missing RTS was noticed.
    /// For links: the data slot whose report implicated the link.
    pub slot: u64,
}

#[derive(Clone, Debug)]
pub struct FailureMonitor {
    seen: Vec<[u64; RING]>,
    reports: Vec<(HostId, RxReport)>,
    flagged_hosts: BTreeSet<HostId>,
    detections: BTreeMap<Suspect, u64>,
}

impl FailureMonitor {
    pub fn new(n_hosts: usize) -> Self {
        FailureMonitor {
            seen: vec![[u64::MAX; RING]; n_hosts],
            reports: Vec::new(),
            flagged_hosts: BTreeSet::new(),
            detections: BTreeMap::new(),
        }
    }

    pub fn record_rts(&mut self, h: HostId, slot: u64, report: Option<RxReport>) {
        self.seen[h.idx()][slot as usize % RING] = slot;
        if let Some(r) = report {
            self.reports.push((h, r));
        }
    }

    /// Flags every host whose RTS for `slot` never arrived.
    pub fn check_heartbeats(&mut self, slot: u64) -> Vec<HostId> {
        let mut newly = Vec::new();
        for (h, ring) in self.seen.iter().enumerate() {
            if ring[slot as usize % RING] != slot {
                let host = HostId(h as u32);
                if self.flagged_hosts.insert(host) {
                    self.detections.insert(Suspect::Host(host.0), slot + 1);
                    newly.push(host);
                }
            }
        }
        newly
    }

    /// Consumes the receive reports gathered since the last call.
    pub fn localize(
        &mut self,
        topo: &PodTopology,
        history: &BTreeMap<u64, TimeslotAllocation>,
    ) -> Vec<LinkId> {
        let reports = std::mem::take(&mut self.reports);
        let mut by_slot: BTreeMap<u64, (Vec<[LinkId; 2]>, BTreeSet<LinkId>)> = BTreeMap::new();
        for (rx, r) in reports {
            let Some(alloc) = history.get(&r.slot) else {
                continue;
            };
            let Some(g) = alloc.grant_to(rx) else {
                continue;
            };
            // A dead sender explains its own missing cells.
            if self.flagged_hosts.contains(&g.src) {
                continue;
            }
            let links = topo.path_links(g.src, g.dst, g.agg);
            let upper = [links[1], links[2]];
            let entry = by_slot.entry(r.slot).or_default();
            if r.missing {
                entry.0.push(upper);
            } else {
                entry.1.extend(upper);
            }
        }
        let mut newly = Vec::new();
        for (slot, (failed, healthy)) in by_slot {
            let known = self.suspect_links();
            let mut fresh = BTreeSet::new();
            for upper in failed {
                // Losses on a path through a known bad link are explained.
                if upper.iter().any(|l| known.contains(l)) {
                    continue;
                }
                fresh.extend(upper.into_iter().filter(|l| !healthy.contains(l)));
            }
            for l in fresh {
                let key = Suspect::Link(l.0);
                if !self.detections.contains_key(&key) {
                    self.detections.insert(key, slot);
                    newly.push(l);
                }
            }
        }
        newly
    }

    pub fn flagged_hosts(&self) -> &BTreeSet<HostId> {
        &self.flagged_hosts
    }

    pub fn suspects(&self) -> Vec<Detection> {
        self.detections
            .iter()
            .map(|(&suspect, &slot)| Detection { suspect, slot })
            .collect()
    }

    pub fn suspect_links(&self) -> BTreeSet<LinkId> {
        self.detections
            .keys()
            .filter_map(|s| match s {
                Suspect::Link(l) => Some(LinkId(*l)),
                Suspect::Host(_) => None,
            })
            .collect()
    }
}
