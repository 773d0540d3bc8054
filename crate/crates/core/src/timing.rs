//! Absolute pipeline timing shared by hosts and the arbiter.
//!
//! Every host starts slot `s` at `epoch + s * slot_ps` on the true clock.
//! Because all links have the same length and every switch forwards with the
//! same cut-through latency, each hop sees the whole pod's slot boundaries at
//! a fixed offset from that instant, which is what lets the arbiter and the
//! hosts agree on gap positions without talking to each other.

use serde::Serialize;

use crate::engine::SimTime;
use crate::framing::FrameLayout;
use crate::topology::PodTopology;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PodTiming {
    pub slot_ps: u64,
    pub epoch: SimTime,
    pub prop_ps: u64,
    pub cut_through_ps: u64,
    /// Upper bound on any host's residual clock error.
    pub skew_bound_ps: u64,
    pub processing_slots: u64,
    /// Slots between closing RTS collection for slot `a` and the downlink
    /// slot whose gaps carry the resulting SCHDs.
    pub emit_delay: u64,
    /// Slots between that downlink slot and the granted transmission slot.
    pub grant_lead: u64,
    pub ctrl_cell_ps: u64,
}

impl PodTiming {
    pub fn new(
        topo: &PodTopology,
        layout: &FrameLayout,
        cut_through_ps: u64,
        processing_slots: u64,
        skew_bound_ps: u64,
    ) -> Self {
        let slot = layout.slot_duration();
        let p = topo.prop_ps();
        let c = cut_through_ps;
        let extra = skew_bound_ps.saturating_sub(c).div_ceil(slot);
        let emit_delay = 1 + processing_slots + extra;
        // The last SCHD of downlink slot e is fully received before
        // slot_start(e + 1) + 4P + 3C; the host must hold it before it
        // builds the granted frame.
        let grant_lead = (4 * p + 3 * c + slot + skew_bound_ps) / slot + 1;
        PodTiming {
            slot_ps: slot,
            epoch: SimTime(skew_bound_ps),
            prop_ps: p,
            cut_through_ps: c,
            skew_bound_ps,
            processing_slots,
            emit_delay,
            grant_lead,
            ctrl_cell_ps: layout.ctrl_cell_ps,
        }
    }

    pub fn host_slot_start(&self, s: u64) -> SimTime {
        self.epoch + s * self.slot_ps
    }

    /// When hosts lay out the frame for slot `s`.
    pub fn frame_build_time(&self, s: u64) -> SimTime {
        SimTime(self.host_slot_start(s).0 - self.skew_bound_ps)
    }

    /// The last RTS of slot `a` is fully received by this instant; the
    /// arbiter closes collection once everything due then has arrived.
    pub fn rts_close_time(&self, a: u64) -> SimTime {
        self.host_slot_start(a + 1) + (2 * self.prop_ps + self.cut_through_ps + self.skew_bound_ps)
    }

    pub fn emit_slot(&self, a: u64) -> u64 {
        a + self.emit_delay
    }

    pub fn grant_slot(&self, a: u64) -> u64 {
        a + self.emit_delay + self.grant_lead
    }

    /// Host-to-host pipeline: first bit out of the sender to first bit in at
    /// the receiver.
    pub fn host_to_host_ps(&self) -> u64 {
        4 * self.prop_ps + 3 * self.cut_through_ps
    }

    /// All scheduled cells of slot `e` have been received by this time.
    pub fn rx_window_end(&self, e: u64) -> SimTime {
        self.host_slot_start(e + 1) + self.host_to_host_ps() + self.skew_bound_ps
    }

    /// Earliest reception of an SCHD that can reflect an RTS sent in
    /// `rts_slot`. Every SCHD of an earlier downlink slot is fully received
    /// before it.
    pub fn optimistic_deadline(&self, rts_slot: u64) -> SimTime {
        self.host_slot_start(rts_slot + self.emit_delay) + self.host_to_host_ps() + self.ctrl_cell_ps
    }

    /// Host slot index containing `t` (slots before the epoch map to 0).
    pub fn slot_at(&self, t: SimTime) -> u64 {
        t.0.saturating_sub(self.epoch.0) / self.slot_ps
    }

    /// First slot whose boundary is at or after `t`.
    pub fn next_slot_at_or_after(&self, t: SimTime) -> u64 {
        t.0.saturating_sub(self.epoch.0).div_ceil(self.slot_ps)
    }
}
