use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::framing::FlowId;
use crate::topology::HostId;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PendingDemand {
    pub id: FlowId,
    pub requested_bytes: u64,
    pub remaining_bytes: u64,
    pub arrival_slot: u64,
}

#[derive(Clone, Debug, Default)]
struct PairQueue {
    demands: VecDeque<PendingDemand>,
    /// Slot at which this pair last got a grant, or when its current backlog
    /// started if it has not been served since.
    ready_since: u64,
}

/// Granted bytes for a demand the book has fully drained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DemandLedger {
    pub demand: FlowId,
    pub requested_bytes: u64,
    pub granted_bytes: u64,
}

/// Which of a pair's demands a grant drains.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairService {
    /// Arrival order.
    Fifo,
    /// Fewest remaining bytes, arrival order among equals.
    #[default]
    ShortestRemaining,
}

/// Outstanding demand per (src, dst), kept in arrival order within a pair.
#[derive(Clone, Debug)]
pub struct DemandBook {
    cell_bytes: u64,
    service: PairService,
    pairs: BTreeMap<(HostId, HostId), PairQueue>,
    granted: BTreeMap<FlowId, u64>,
    completed: Vec<DemandLedger>,
}

/// One grant's worth of cells taken from the head of a pair's queue.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Draw {
    pub demand: FlowId,
    pub cells: u32,
    pub bytes: u64,
}

/// A pair with pending bytes and its service priority key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub src: HostId,
    pub dst: HostId,
    pub ready_since: u64,
}

impl DemandBook {
    pub fn new(cell_bytes: u32) -> Self {
        DemandBook {
            cell_bytes: cell_bytes as u64,
            service: PairService::Fifo,
            pairs: BTreeMap::new(),
            granted: BTreeMap::new(),
            completed: Vec::new(),
        }
    }

    pub fn with_service(mut self, service: PairService) -> Self {
        self.service = service;
        self
    }

    /// Appends a demand. Zero-byte demands are heartbeats and leave the book
    /// untouched.
    pub fn add(&mut self, src: HostId, dst: HostId, id: FlowId, bytes: u64, slot: u64) {
        if bytes == 0 {
            return;
        }
        let q = self.pairs.entry((src, dst)).or_default();
        if q.demands.is_empty() {
            q.ready_since = slot;
        }
        q.demands.push_back(PendingDemand {
            id,
            requested_bytes: bytes,
            remaining_bytes: bytes,
            arrival_slot: slot,
        });
        self.granted.insert(id, 0);
    }

    pub fn pending_bytes(&self, src: HostId, dst: HostId) -> u64 {
        self.pairs
            .get(&(src, dst))
            .map_or(0, |q| q.demands.iter().map(|d| d.remaining_bytes).sum())
    }

    pub fn demands(&self, src: HostId, dst: HostId) -> Vec<PendingDemand> {
        self.pairs
            .get(&(src, dst))
            .map(|q| q.demands.iter().cloned().collect())
            .unwrap_or_default()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn candidates(&self) -> impl Iterator<Item = Candidate> + '_ {
        self.pairs.iter().map(|(&(src, dst), q)| Candidate {
            src,
            dst,
            ready_since: q.ready_since,
        })
    }

    /// Takes up to `max_cells` cells from one demand of (src, dst), chosen
    /// by the book's service order. A draw never spans two demands.
    pub fn draw(&mut self, src: HostId, dst: HostId, max_cells: u32, slot: u64) -> Option<Draw> {
        let q = self.pairs.get_mut(&(src, dst))?;
        let at = match self.service {
            PairService::Fifo => 0,
            PairService::ShortestRemaining => q
                .demands
                .iter()
                .enumerate()
                .min_by_key(|(i, d)| (d.remaining_bytes, *i))
                .map(|(i, _)| i)?,
        };
        let head = q.demands.get_mut(at)?;
        let cells_left = head.remaining_bytes.div_ceil(self.cell_bytes);
        let cells = cells_left.min(max_cells as u64) as u32;
        let bytes = (cells as u64 * self.cell_bytes).min(head.remaining_bytes);
        head.remaining_bytes -= bytes;
        let id = head.id;
        *self.granted.entry(id).or_insert(0) += bytes;
        if head.remaining_bytes == 0 {
            let done = q.demands.remove(at).expect("drawn demand exists");
            self.completed.push(DemandLedger {
                demand: done.id,
                requested_bytes: done.requested_bytes,
                granted_bytes: self.granted.remove(&done.id).unwrap_or(0),
            });
        }
        q.ready_since = slot;
        if q.demands.is_empty() {
            self.pairs.remove(&(src, dst));
        }
        Some(Draw {
            demand: id,
            cells,
            bytes,
        })
    }

    pub fn completed(&self) -> &[DemandLedger] {
        &self.completed
    }
}
