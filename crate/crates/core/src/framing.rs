//! Slotted frame layout and the cells that ride in it.
//!
//! A slot holds `N - 1` data cells and `N` gap positions. Gap `p` sits
//! immediately before data slot `p`; position `N - 1` follows the last data
//! slot. Of the `N` positions only two are materialized per frame: the
//! sender's RTS at its own relative index `i`, and an empty gap at the
//! receiver's relative index `j` that the arbiter fills with an SCHD. When
//! `i == j` both widths sit back to back, RTS first. Each materialized width
//! is one control cell plus `guard_ctrl`; the slot ends with `guard_slot`.

use serde::Serialize;

use crate::engine::SimTime;
use crate::error::SimError;
use crate::topology::{HostId, PodTopology, SourceRoute};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FrameLayout {
    pub n_positions: u32,
    pub data_cell_bytes: u32,
    pub ctrl_cell_bytes: u32,
    pub data_cell_ps: u64,
    pub ctrl_cell_ps: u64,
    pub guard_slot_ps: u64,
    pub guard_ctrl_ps: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Rts,
    SchdGap,
    Data(u32),
    /// A data slot left empty so later positions keep their offsets.
    Idle(u32),
    Guard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FrameElement {
    pub kind: ElementKind,
    pub start: u64,
    pub width: u64,
}

impl FrameLayout {
    pub fn new(
        n_positions: u32,
        data_cell_bytes: u32,
        ctrl_cell_bytes: u32,
        ps_per_byte: u64,
        guard_slot_ps: u64,
        guard_ctrl_ps: u64,
    ) -> Result<Self, SimError> {
        if n_positions < 2 {
            return Err(SimError::Layout(format!(
                "need at least 2 gap positions, got {n_positions}"
            )));
        }
        if ctrl_cell_bytes == 0 || 2 * ctrl_cell_bytes >= data_cell_bytes {
            return Err(SimError::Layout(format!(
                "two control cells ({ctrl_cell_bytes} B each) must be smaller than one data cell ({data_cell_bytes} B)"
            )));
        }
        Ok(FrameLayout {
            n_positions,
            data_cell_bytes,
            ctrl_cell_bytes,
            data_cell_ps: data_cell_bytes as u64 * ps_per_byte,
            ctrl_cell_ps: ctrl_cell_bytes as u64 * ps_per_byte,
            guard_slot_ps,
            guard_ctrl_ps,
        })
    }

    pub fn data_slots(&self) -> u32 {
        self.n_positions - 1
    }

    /// Width of one materialized control position.
    pub fn ctrl_width(&self) -> u64 {
        self.ctrl_cell_ps + self.guard_ctrl_ps
    }

    /// Offset of a control cell inside its width; the guard is split evenly
    /// on both sides.
    pub fn ctrl_margin(&self) -> u64 {
        self.guard_ctrl_ps / 2
    }

    pub fn slot_duration(&self) -> u64 {
        self.data_slots() as u64 * self.data_cell_ps + 2 * self.ctrl_width() + self.guard_slot_ps
    }

    fn check(&self, i: u32, j: u32) -> Result<(), SimError> {
        if i >= self.n_positions || j >= self.n_positions {
            return Err(SimError::Layout(format!(
                "gap positions ({i}, {j}) out of range 0..{}",
                self.n_positions
            )));
        }
        Ok(())
    }

    /// Start of the RTS width.
    pub fn rts_offset(&self, i: u32, j: u32) -> u64 {
        i as u64 * self.data_cell_ps + if j < i { self.ctrl_width() } else { 0 }
    }

    /// Start of the reserved SCHD gap.
    pub fn gap_offset(&self, i: u32, j: u32) -> u64 {
        j as u64 * self.data_cell_ps + if i <= j { self.ctrl_width() } else { 0 }
    }

    /// Start of data slot `p`.
    pub fn data_offset(&self, i: u32, j: u32, p: u32) -> u64 {
        let before = (i <= p) as u64 + (j <= p) as u64;
        p as u64 * self.data_cell_ps + before * self.ctrl_width()
    }

    /// The full element sequence of one frame, in time order.
    pub fn frame_offsets(&self, i: u32, j: u32, n_data: u32) -> Result<Vec<FrameElement>, SimError> {
        self.check(i, j)?;
        if n_data > self.data_slots() {
            return Err(SimError::Layout(format!(
                "{n_data} data cells exceed {} data slots",
                self.data_slots()
            )));
        }
        let mut out = Vec::with_capacity(self.n_positions as usize * 2 + 1);
        let mut t = 0;
        let mut push = |kind, width| {
            out.push(FrameElement { kind, start: t, width });
            t += width;
        };
        for p in 0..self.n_positions {
            if p == i {
                push(ElementKind::Rts, self.ctrl_width());
            }
            if p == j {
                push(ElementKind::SchdGap, self.ctrl_width());
            }
            if p < self.data_slots() {
                let kind = if p < n_data {
                    ElementKind::Data(p)
                } else {
                    ElementKind::Idle(p)
                };
                push(kind, self.data_cell_ps);
            }
        }
        push(ElementKind::Guard, self.guard_slot_ps);
        Ok(out)
    }
}

/// Time at which the arbiter must start transmitting an SCHD so that it lands
/// in the reserved gap of the stream arriving at `receiver` in the slot that
/// left the senders at `slot_start`. `sender` is `None` when no stream is
/// scheduled toward `receiver`; the SCHD then takes the gap position an idle
/// frame would have (`i == j`).
pub fn schd_injection_time(
    layout: &FrameLayout,
    topo: &PodTopology,
    cut_through_ps: u64,
    slot_start: SimTime,
    sender: Option<HostId>,
    receiver: HostId,
) -> SimTime {
    let j = topo.relative_index(receiver);
    let i = sender.map_or(j, |s| topo.relative_index(s));
    let prop = topo.prop_ps();
    // host -> ToR -> Agg -> ToR: three links, three cut-through switches.
    let stream_at_port = slot_start + 3 * prop + 3 * cut_through_ps;
    let gap_start = stream_at_port + layout.gap_offset(i, j) + layout.ctrl_margin();
    // arbiter -> ToR: one link, one cut-through switch.
    SimTime(gap_start.0 - prop - cut_through_ps)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CellKind {
    DataScheduled,
    DataUnscheduled,
    Rts,
    Schd,
}

impl CellKind {
    /// Scheduled data and control cells must never be harmed at a switch.
    pub fn is_protected(self) -> bool {
        !matches!(self, CellKind::DataUnscheduled)
    }

    pub fn is_data(self) -> bool {
        matches!(self, CellKind::DataScheduled | CellKind::DataUnscheduled)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::DataScheduled => "DATA_SCHEDULED",
            CellKind::DataUnscheduled => "DATA_UNSCHEDULED",
            CellKind::Rts => "RTS",
            CellKind::Schd => "SCHD",
        }
    }
}

pub type FlowId = u32;

/// A new demand announced in an RTS.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DemandAnnounce {
    pub demand: FlowId,
    pub dst: HostId,
    pub bytes: u64,
}

/// Receive status of one slot with scheduled inbound cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RxReport {
    pub slot: u64,
    pub missing: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RtsInfo {
    pub src: HostId,
    pub slot: u64,
    pub demand: Option<DemandAnnounce>,
    pub report: Option<RxReport>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Grant {
    pub slot: u64,
    pub src: HostId,
    pub dst: HostId,
    pub agg: u32,
    pub cells: u32,
    pub demand: FlowId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SchdInfo {
    /// Slot whose downlink stream this SCHD rides in.
    pub slot: u64,
    pub timestamp: SimTime,
    pub grant: Option<Grant>,
    /// Scheduled cells the addressee should receive in `slot`.
    pub expected_cells: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Payload {
    Data { slot: u64, bytes: u32 },
    Rts(RtsInfo),
    Schd(SchdInfo),
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub id: u64,
    pub kind: CellKind,
    pub flow: FlowId,
    pub seq: u32,
    pub size_bytes: u32,
    pub route: SourceRoute,
    pub hop: u8,
    pub sent_at: SimTime,
    pub payload: Payload,
}

impl Cell {
    pub fn next_link(&self) -> Option<crate::topology::LinkId> {
        self.route.hops().get(self.hop as usize).copied()
    }
}
