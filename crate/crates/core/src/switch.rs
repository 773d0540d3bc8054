//! Switch models.
//!
//! `ZeroBufferSwitch` stores nothing: a cell leaves its output port exactly
//! `cut_through_ps` after its head arrives, or it is destroyed. Unscheduled
//! data yields to everything; scheduled data and control cells are
//! protected, and a collision between two protected cells is a protocol
//! violation. `BufferedSwitch` is a drop-tail FIFO per output port used by
//! the buffered baseline.

use std::collections::VecDeque;

use serde::Serialize;

use crate::engine::SimTime;
use crate::error::SimError;
use crate::framing::{Cell, CellKind};
use crate::topology::{LinkId, NodeId, PodTopology};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SwitchCounters {
    pub cells_in: u64,
    pub forwarded: u64,
    /// Unscheduled cells that found their output busy.
    pub dropped_unscheduled: u64,
    /// Unscheduled cells cut off by a protected cell mid-transmission.
    pub preempted: u64,
    /// Protected cells that overlapped another protected cell.
    pub violations: u64,
    pub droptail: u64,
    pub fault_losses: u64,
    /// Drops by kind, indexed like `CellKind as usize`.
    pub dropped_by_kind: [u64; 4],
}

impl SwitchCounters {
    pub fn dropped(&self) -> u64 {
        self.dropped_unscheduled + self.preempted + self.droptail + self.fault_losses
    }

    fn drop_kind(&mut self, kind: CellKind) {
        self.dropped_by_kind[kind as usize] += 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropCause {
    OutputBusy,
    DropTail,
    LinkDown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZbOutcome {
    Forward {
        link: LinkId,
        start: SimTime,
        end: SimTime,
        /// An unscheduled cell truncated to make room: id and start time.
        preempted: Option<(u64, SimTime)>,
    },
    Drop(DropCause),
    /// Forwarded anyway, overlapping `with`.
    Violation {
        link: LinkId,
        start: SimTime,
        end: SimTime,
        with: u64,
    },
}

#[derive(Clone, Copy, Debug)]
struct ZbPort {
    busy_until: SimTime,
    occupant: u64,
    occupant_start: SimTime,
    occupant_kind: CellKind,
}

/// Pops the next hop off `cell`'s route and checks it leaves `node`.
fn next_hop(node: NodeId, cell: &mut Cell, topo: &PodTopology) -> Result<LinkId, SimError> {
    let link = cell.next_link().ok_or_else(|| {
        SimError::Routing(format!("cell {} reached {node} with an exhausted route", cell.id))
    })?;
    if topo.link(link).from != node {
        return Err(SimError::Routing(format!(
            "cell {} at {node} routed onto link leaving {}",
            cell.id,
            topo.link(link).from
        )));
    }
    cell.hop += 1;
    Ok(link)
}

#[derive(Clone, Debug)]
pub struct ZeroBufferSwitch {
    node: NodeId,
    cut_through_ps: u64,
    ports: Vec<ZbPort>,
    counters: SwitchCounters,
}

impl ZeroBufferSwitch {
    pub fn new(node: NodeId, topo: &PodTopology, cut_through_ps: u64) -> Self {
        let n_ports = topo.links().iter().filter(|l| l.from == node).count();
        ZeroBufferSwitch {
            node,
            cut_through_ps,
            ports: vec![
                ZbPort {
                    busy_until: SimTime::ZERO,
                    occupant: u64::MAX,
                    occupant_start: SimTime::ZERO,
                    occupant_kind: CellKind::DataUnscheduled,
                };
                n_ports
            ],
            counters: SwitchCounters::default(),
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn counters(&self) -> &SwitchCounters {
        &self.counters
    }

    /// Handles a cell whose head reaches this switch at `now`.
    pub fn on_cell(
        &mut self,
        cell: &mut Cell,
        topo: &PodTopology,
        now: SimTime,
        link_down: impl Fn(LinkId, SimTime) -> bool,
    ) -> Result<ZbOutcome, SimError> {
        let link = next_hop(self.node, cell, topo)?;
        self.counters.cells_in += 1;
        let start = now + self.cut_through_ps;
        let end = start + topo.serialization_ps(cell.size_bytes as u64);
        if link_down(link, start) {
            self.counters.fault_losses += 1;
            self.counters.drop_kind(cell.kind);
            return Ok(ZbOutcome::Drop(DropCause::LinkDown));
        }
        let port = &mut self.ports[topo.link(link).port as usize];
        let busy = port.busy_until > start;
        let take = |port: &mut ZbPort| {
            port.busy_until = end;
            port.occupant = cell.id;
            port.occupant_start = start;
            port.occupant_kind = cell.kind;
        };
        if !busy {
            take(port);
            self.counters.forwarded += 1;
            return Ok(ZbOutcome::Forward {
                link,
                start,
                end,
                preempted: None,
            });
        }
        if !cell.kind.is_protected() {
            self.counters.dropped_unscheduled += 1;
            self.counters.drop_kind(cell.kind);
            return Ok(ZbOutcome::Drop(DropCause::OutputBusy));
        }
        if !port.occupant_kind.is_protected() {
            let victim = (port.occupant, port.occupant_start);
            take(port);
            // The victim was counted as forwarded when it started.
            self.counters.forwarded -= 1;
            self.counters.preempted += 1;
            self.counters.drop_kind(CellKind::DataUnscheduled);
            self.counters.forwarded += 1;
            return Ok(ZbOutcome::Forward {
                link,
                start,
                end,
                preempted: Some(victim),
            });
        }
        let with = port.occupant;
        take(port);
        self.counters.violations += 1;
        self.counters.forwarded += 1;
        Ok(ZbOutcome::Violation {
            link,
            start,
            end,
            with,
        })
    }
}

/// A FIFO output port that drains at line rate. Waiting bytes exclude the
/// cell currently on the wire.
#[derive(Clone, Debug, Default)]
pub struct BufferedPort {
    busy_until: SimTime,
    waiting: VecDeque<(SimTime, u64)>,
    waiting_bytes: u64,
    max_waiting_bytes: u64,
}

impl BufferedPort {
    /// Offers a cell ready to start at `ready`. Returns its start time, or
    /// `None` if the queue would exceed `capacity_bytes`.
    pub fn offer(&mut self, ready: SimTime, bytes: u64, ser_ps: u64, capacity_bytes: u64) -> Option<SimTime> {
        while let Some(&(s, b)) = self.waiting.front() {
            if s <= ready {
                self.waiting.pop_front();
                self.waiting_bytes -= b;
            } else {
                break;
            }
        }
        let start = if self.busy_until <= ready {
            ready
        } else {
            if self.waiting_bytes + bytes > capacity_bytes {
                return None;
            }
            self.waiting.push_back((self.busy_until, bytes));
            self.waiting_bytes += bytes;
            self.max_waiting_bytes = self.max_waiting_bytes.max(self.waiting_bytes);
            self.busy_until
        };
        self.busy_until = start + ser_ps;
        Some(start)
    }

    pub fn waiting_bytes(&self) -> u64 {
        self.waiting_bytes
    }

    pub fn max_waiting_bytes(&self) -> u64 {
        self.max_waiting_bytes
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BufOutcome {
    Forward {
        link: LinkId,
        start: SimTime,
        end: SimTime,
    },
    Drop(DropCause),
}

#[derive(Clone, Debug)]
pub struct BufferedSwitch {
    node: NodeId,
    cut_through_ps: u64,
    capacity_bytes: u64,
    ports: Vec<BufferedPort>,
    counters: SwitchCounters,
}

impl BufferedSwitch {
    pub fn new(node: NodeId, topo: &PodTopology, cut_through_ps: u64, capacity_bytes: u64) -> Self {
        let n_ports = topo.links().iter().filter(|l| l.from == node).count();
        BufferedSwitch {
            node,
            cut_through_ps,
            capacity_bytes,
            ports: vec![BufferedPort::default(); n_ports],
            counters: SwitchCounters::default(),
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn counters(&self) -> &SwitchCounters {
        &self.counters
    }

    pub fn max_queue_bytes(&self) -> u64 {
        self.ports.iter().map(|p| p.max_waiting_bytes()).max().unwrap_or(0)
    }

    pub fn on_cell(
        &mut self,
        cell: &mut Cell,
        topo: &PodTopology,
        now: SimTime,
        link_down: impl Fn(LinkId, SimTime) -> bool,
    ) -> Result<BufOutcome, SimError> {
        let link = next_hop(self.node, cell, topo)?;
        self.counters.cells_in += 1;
        let ser = topo.serialization_ps(cell.size_bytes as u64);
        let port = &mut self.ports[topo.link(link).port as usize];
        let Some(start) = port.offer(
            now + self.cut_through_ps,
            cell.size_bytes as u64,
            ser,
            self.capacity_bytes,
        ) else {
            self.counters.droptail += 1;
            self.counters.drop_kind(cell.kind);
            return Ok(BufOutcome::Drop(DropCause::DropTail));
        };
        if link_down(link, start) {
            self.counters.fault_losses += 1;
            self.counters.drop_kind(cell.kind);
            return Ok(BufOutcome::Drop(DropCause::LinkDown));
        }
        self.counters.forwarded += 1;
        Ok(BufOutcome::Forward {
            link,
            start,
            end: start + ser,
        })
    }
}
