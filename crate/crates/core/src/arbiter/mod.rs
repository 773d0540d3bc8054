//! The pod's central controller.
//!
//! Per slot the arbiter turns collected RTS demand into a host-level
//! matching, colors the matching onto Aggs, and sends every host exactly one
//! SCHD timed to land in the gap its incoming stream reserves.

mod book;
mod failure;
mod paths;

use std::collections::BTreeMap;

pub use book::{Candidate, DemandBook, DemandLedger, Draw, PairService, PendingDemand};
pub use failure::{Detection, FailureMonitor, Suspect};
pub use paths::assign_paths;

use crate::engine::SimTime;
use crate::error::SimError;
use crate::framing::{schd_injection_time, FrameLayout, Grant, RtsInfo, SchdInfo};
use crate::timing::PodTiming;
use crate::topology::{HostId, PodTopology};

/// Slots of allocation history kept for SCHD placement and failure reports.
const HISTORY_SLOTS: u64 = 256;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TimeslotAllocation {
    pub slot: u64,
    pub grants: Vec<Grant>,
}

impl TimeslotAllocation {
    pub fn grant_to(&self, dst: HostId) -> Option<&Grant> {
        self.grants.iter().find(|g| g.dst == dst)
    }

    pub fn grant_from(&self, src: HostId) -> Option<&Grant> {
        self.grants.iter().find(|g| g.src == src)
    }
}

/// One SCHD the arbiter will put on the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SchdSend {
    pub host: HostId,
    pub depart: SimTime,
    pub info: SchdInfo,
}

#[derive(Clone, Debug)]
pub struct Arbiter {
    n_hosts: usize,
    max_cells: u32,
    book: DemandBook,
    history: BTreeMap<u64, TimeslotAllocation>,
    monitor: FailureMonitor,
    rts_received: u64,
}

impl Arbiter {
    pub fn new(topo: &PodTopology, layout: &FrameLayout) -> Self {
        Arbiter {
            n_hosts: topo.n_hosts(),
            max_cells: layout.data_slots(),
            book: DemandBook::new(layout.data_cell_bytes),
            history: BTreeMap::new(),
            monitor: FailureMonitor::new(topo.n_hosts()),
            rts_received: 0,
        }
    }

    pub fn with_pair_service(mut self, service: PairService) -> Self {
        self.book = self.book.with_service(service);
        self
    }

    pub fn book(&self) -> &DemandBook {
        &self.book
    }

    pub fn monitor(&self) -> &FailureMonitor {
        &self.monitor
    }

    pub fn history(&self) -> &BTreeMap<u64, TimeslotAllocation> {
        &self.history
    }

    pub fn rts_received(&self) -> u64 {
        self.rts_received
    }

    /// Records the heartbeat and any new demand the RTS announces.
    pub fn handle_rts(&mut self, rts: &RtsInfo, now: SimTime) -> Result<(), SimError> {
        if rts.src.idx() >= self.n_hosts {
            return Err(SimError::ProtocolViolation {
                at: now,
                detail: format!("RTS from unknown host {}", rts.src),
            });
        }
        if let Some(d) = rts.demand {
            if d.dst == rts.src || d.dst.idx() >= self.n_hosts {
                return Err(SimError::ProtocolViolation {
                    at: now,
                    detail: format!("RTS from {} names bad destination {}", rts.src, d.dst),
                });
            }
        }
        self.rts_received += 1;
        self.monitor.record_rts(rts.src, rts.slot, rts.report);
        if let Some(d) = rts.demand {
            self.book.add(rts.src, d.dst, d.demand, d.bytes, rts.slot);
        }
        Ok(())
    }

    /// Greedy maximal matching for `slot`. Pairs that have waited longest
    /// since their last grant go first; ties rotate over sources each slot.
    /// Returned grants have no Agg yet.
    pub fn allocate_timeslot(&mut self, slot: u64) -> TimeslotAllocation {
        let n = self.n_hosts as u64;
        let rot = slot % n;
        let rank = |h: HostId| (h.0 as u64 + n - rot) % n;
        let mut order: Vec<Candidate> = self.book.candidates().collect();
        order.sort_by_key(|c| (c.ready_since, rank(c.src), c.dst));

        let mut src_busy = vec![false; self.n_hosts];
        let mut dst_busy = vec![false; self.n_hosts];
        let mut grants = Vec::new();
        for c in order {
            if src_busy[c.src.idx()] || dst_busy[c.dst.idx()] {
                continue;
            }
            let Some(draw) = self.book.draw(c.src, c.dst, self.max_cells, slot) else {
                continue;
            };
            src_busy[c.src.idx()] = true;
            dst_busy[c.dst.idx()] = true;
            grants.push(Grant {
                slot,
                src: c.src,
                dst: c.dst,
                agg: u32::MAX,
                cells: draw.cells,
                demand: draw.demand,
            });
        }
        TimeslotAllocation { slot, grants }
    }

    pub fn assign_paths(
        &self,
        alloc: &mut TimeslotAllocation,
        topo: &PodTopology,
    ) -> Result<(), SimError> {
        assign_paths(&mut alloc.grants, topo)
    }

    /// Stores a finished allocation; old slots are pruned.
    pub fn commit(&mut self, alloc: TimeslotAllocation) {
        let slot = alloc.slot;
        self.history.insert(slot, alloc);
        while let Some((&first, _)) = self.history.first_key_value() {
            if first + HISTORY_SLOTS < slot {
                self.history.pop_first();
            } else {
                break;
            }
        }
    }

    /// Convenience: match, color and commit in one step.
    pub fn schedule_slot(
        &mut self,
        slot: u64,
        topo: &PodTopology,
    ) -> Result<TimeslotAllocation, SimError> {
        let mut alloc = self.allocate_timeslot(slot);
        self.assign_paths(&mut alloc, topo)?;
        self.commit(alloc.clone());
        Ok(alloc)
    }

    /// One SCHD per host, each timed into the gap of the stream that host
    /// receives in `emit_slot`. `grants` supplies the grant payloads.
    pub fn emit_schds(
        &self,
        emit_slot: u64,
        grants: &TimeslotAllocation,
        topo: &PodTopology,
        layout: &FrameLayout,
        timing: &PodTiming,
    ) -> Vec<SchdSend> {
        let streams = self.history.get(&emit_slot);
        let slot_start = timing.host_slot_start(emit_slot);
        let mut out: Vec<SchdSend> = topo
            .hosts()
            .map(|h| {
                let incoming = streams.and_then(|a| a.grant_to(h));
                let depart = schd_injection_time(
                    layout,
                    topo,
                    timing.cut_through_ps,
                    slot_start,
                    incoming.map(|g| g.src),
                    h,
                );
                SchdSend {
                    host: h,
                    depart,
                    info: SchdInfo {
                        slot: emit_slot,
                        timestamp: depart,
                        grant: grants.grant_from(h).copied(),
                        expected_cells: incoming.map_or(0, |g| g.cells),
                    },
                }
            })
            .collect();
        out.sort_by_key(|s| (s.depart, s.host));
        out
    }

    /// SCHDs sent immediately, only to hosts holding a grant (baseline mode).
    pub fn emit_on_demand(&self, grants: &TimeslotAllocation, now: SimTime) -> Vec<SchdSend> {
        grants
            .grants
            .iter()
            .map(|g| SchdSend {
                host: g.src,
                depart: now,
                info: SchdInfo {
                    slot: g.slot,
                    timestamp: now,
                    grant: Some(*g),
                    expected_cells: 0,
                },
            })
            .collect()
    }

    /// Heartbeat check for `slot` plus localization of any pending receive
    /// reports. Returns what was newly suspected.
    pub fn detect_failures(&mut self, slot: u64, topo: &PodTopology) -> Vec<Suspect> {
        let mut out: Vec<Suspect> = self
            .monitor
            .check_heartbeats(slot)
            .into_iter()
            .map(|h| Suspect::Host(h.0))
            .collect();
        out.extend(
            self.monitor
                .localize(topo, &self.history)
                .into_iter()
                .map(|l| Suspect::Link(l.0)),
        );
        out
    }
}
