//! Sender and receiver state of one end host.
//!
//! Each flow is one demand. Bytes leave a destination's queue only through
//! scheduled grants; optimistic copies are sent on the side and the whole
//! flow is resent from the first cell once scheduling starts.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::Serialize;

use crate::config::ClockConfig;
use crate::engine::SimTime;
use crate::framing::{
    CellKind, DemandAnnounce, FlowId, FrameLayout, Grant, RtsInfo, RxReport, SchdInfo,
};
use crate::timing::PodTiming;
use crate::topology::{HostId, PodTopology};
use crate::workload::FlowSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    OptimisticEligible,
    Awaiting,
    Scheduled,
    Done,
}

#[derive(Clone, Debug)]
pub struct TxFlow {
    pub spec: FlowSpec,
    pub cells: u32,
    pub phase: Phase,
    pub rts_slot: Option<u64>,
    pub deadline: Option<SimTime>,
    pub opt_next: u32,
    pub sched_next: u32,
    opt_agg: Option<u32>,
}

/// One data cell a frame will carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DataPlan {
    /// Start of the cell relative to the slot start.
    pub offset: u64,
    pub kind: CellKind,
    pub flow: FlowId,
    pub seq: u32,
    pub dst: HostId,
    pub agg: u32,
    /// Flow bytes carried (the last cell may be partly padding).
    pub bytes: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FramePlan {
    pub slot: u64,
    pub data: Vec<DataPlan>,
    pub rts: RtsInfo,
    pub rts_offset: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct HostCounters {
    pub rts_sent: u64,
    pub scheduled_cells: u64,
    pub unscheduled_cells: u64,
    pub schd_received: u64,
    /// Grants naming a demand this host does not know.
    pub unknown_grants: u64,
    pub reports_sent: u64,
}

/// Residual error of a host clock against true time.
#[derive(Clone, Debug)]
pub struct HostClock {
    offset_ps: f64,
    drift: f64,
    correction: bool,
    last_sync: Option<SimTime>,
}

impl HostClock {
    pub fn perfect() -> Self {
        HostClock {
            offset_ps: 0.0,
            drift: 0.0,
            correction: false,
            last_sync: None,
        }
    }

    pub fn random(cfg: &ClockConfig, rng: &mut impl Rng) -> Self {
        let m = cfg.max_offset_ps as f64;
        let d = cfg.drift_ppm * 1e-6;
        HostClock {
            offset_ps: if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 },
            drift: if d > 0.0 { rng.random_range(-d..=d) } else { 0.0 },
            correction: cfg.owd_correction,
            last_sync: None,
        }
    }

    /// Local reading minus true time at true time `t`.
    pub fn error_at(&self, t: SimTime) -> f64 {
        match (self.correction, self.last_sync) {
            (true, Some(s)) => self.drift * (t.0 as f64 - s.0 as f64),
            _ => self.offset_ps + self.drift * t.0 as f64,
        }
    }

    /// True time at which the local clock reads `nominal`.
    pub fn true_time(&self, nominal: SimTime) -> SimTime {
        SimTime((nominal.0 as f64 - self.error_at(nominal)).round().max(0.0) as u64)
    }

    /// An SCHD carries the arbiter's send time; with the one-way delay known
    /// the host can cancel its offset.
    pub fn sync(&mut self, now: SimTime) {
        if self.correction {
            self.last_sync = Some(now);
        }
    }
}

/// Worst-case residual clock error over a run of length `horizon_ps`.
pub fn skew_bound_ps(cfg: &ClockConfig, horizon_ps: u64) -> u64 {
    let d = cfg.drift_ppm * 1e-6;
    (cfg.max_offset_ps as f64 + d * horizon_ps as f64).ceil() as u64
}

#[derive(Clone, Debug)]
pub struct Host {
    id: HostId,
    rel: u32,
    cell_bytes: u32,
    flows: BTreeMap<FlowId, TxFlow>,
    /// Flows per destination not yet fully sent under schedule.
    voq: Vec<u32>,
    unannounced: VecDeque<FlowId>,
    eligible: VecDeque<FlowId>,
    grants: BTreeMap<u64, Grant>,
    rx_expected: BTreeMap<u64, u32>,
    rx_got: BTreeMap<u64, u32>,
    reports: VecDeque<RxReport>,
    counters: HostCounters,
    pub clock: HostClock,
}

impl Host {
    pub fn new(id: HostId, topo: &PodTopology, layout: &FrameLayout) -> Self {
        Host {
            id,
            rel: topo.relative_index(id),
            cell_bytes: layout.data_cell_bytes,
            flows: BTreeMap::new(),
            voq: vec![0; topo.n_hosts()],
            unannounced: VecDeque::new(),
            eligible: VecDeque::new(),
            grants: BTreeMap::new(),
            rx_expected: BTreeMap::new(),
            rx_got: BTreeMap::new(),
            reports: VecDeque::new(),
            counters: HostCounters::default(),
            clock: HostClock::perfect(),
        }
    }

    pub fn id(&self) -> HostId {
        self.id
    }

    pub fn counters(&self) -> &HostCounters {
        &self.counters
    }

    pub fn flow(&self, id: FlowId) -> Option<&TxFlow> {
        self.flows.get(&id)
    }

    pub fn voq_len(&self, dst: HostId) -> u32 {
        self.voq[dst.idx()]
    }

    pub fn active_flows(&self) -> usize {
        self.flows.len()
    }

    pub fn on_flow_arrival(&mut self, spec: &FlowSpec, optimistic: bool) {
        debug_assert_eq!(spec.src, self.id);
        let eligible = optimistic && self.voq[spec.dst.idx()] == 0;
        self.voq[spec.dst.idx()] += 1;
        self.flows.insert(
            spec.id,
            TxFlow {
                spec: *spec,
                cells: spec.size_bytes.div_ceil(self.cell_bytes as u64) as u32,
                phase: if eligible {
                    Phase::OptimisticEligible
                } else {
                    Phase::Awaiting
                },
                rts_slot: None,
                deadline: None,
                opt_next: 0,
                sched_next: 0,
                opt_agg: None,
            },
        );
        self.unannounced.push_back(spec.id);
        if eligible {
            self.eligible.push_back(spec.id);
        }
    }

    /// Next new demand for an RTS, marking it announced in `slot`.
    fn announce(&mut self, slot: u64, timing: Option<&PodTiming>) -> Option<DemandAnnounce> {
        let (id, f) = loop {
            let id = self.unannounced.pop_front()?;
            if let Some(f) = self.flows.get_mut(&id) {
                break (id, f);
            }
        };
        f.rts_slot = Some(slot);
        f.deadline = timing.map(|t| t.optimistic_deadline(slot));
        Some(DemandAnnounce {
            demand: id,
            dst: f.spec.dst,
            bytes: f.spec.size_bytes,
        })
    }

    fn payload_bytes(&self, f: &TxFlow, seq: u32) -> u32 {
        let sent = seq as u64 * self.cell_bytes as u64;
        (f.spec.size_bytes - sent).min(self.cell_bytes as u64) as u32
    }

    /// Emits up to `cells` scheduled cells of `grant`'s flow.
    fn scheduled_cells(&mut self, g: &Grant, j: u32, layout: &FrameLayout) -> Vec<DataPlan> {
        let Some(f) = self.flows.get(&g.demand) else {
            self.counters.unknown_grants += 1;
            return Vec::new();
        };
        let mut f = f.clone();
        let mut out = Vec::with_capacity(g.cells as usize);
        for p in 0..g.cells {
            if f.sched_next >= f.cells {
                break;
            }
            let seq = f.sched_next;
            out.push(DataPlan {
                offset: layout.data_offset(self.rel, j, p),
                kind: CellKind::DataScheduled,
                flow: g.demand,
                seq,
                dst: g.dst,
                agg: g.agg,
                bytes: self.payload_bytes(&f, seq),
            });
            f.sched_next += 1;
        }
        self.counters.scheduled_cells += out.len() as u64;
        if f.sched_next >= f.cells {
            self.voq[f.spec.dst.idx()] -= 1;
            self.flows.remove(&g.demand);
        } else {
            self.flows.insert(g.demand, f);
        }
        out
    }

    /// Earliest-arrived flow still in its optimistic pass.
    fn optimistic_head(&mut self) -> Option<FlowId> {
        while let Some(&id) = self.eligible.front() {
            match self.flows.get(&id) {
                Some(f) if f.phase == Phase::OptimisticEligible && f.opt_next < f.cells => {
                    return Some(id)
                }
                _ => {
                    self.eligible.pop_front();
                }
            }
        }
        None
    }

    fn queue_reports(&mut self, now: SimTime, timing: &PodTiming) {
        while let Some((&e, &exp)) = self.rx_expected.first_key_value() {
            if timing.rx_window_end(e) > now {
                break;
            }
            self.rx_expected.pop_first();
            let got = self.rx_got.remove(&e).unwrap_or(0);
            self.reports.push_back(RxReport {
                slot: e,
                missing: got < exp,
            });
        }
        while let Some((&e, _)) = self.rx_got.first_key_value() {
            if timing.rx_window_end(e) > now {
                break;
            }
            self.rx_got.pop_first();
        }
    }

    /// Lays out this host's frame for `slot`: scheduled cells if granted,
    /// otherwise optimistic cells if allowed, and always one RTS.
    pub fn build_frame(
        &mut self,
        slot: u64,
        now: SimTime,
        layout: &FrameLayout,
        timing: &PodTiming,
        topo: &PodTopology,
        optimistic: bool,
        reroute_per_slot: bool,
        rng: &mut impl Rng,
    ) -> FramePlan {
        self.queue_reports(now, timing);
        let mut j = self.rel;
        let mut data = Vec::new();
        while let Some((&s, _)) = self.grants.first_key_value() {
            if s >= slot {
                break;
            }
            // A grant for a slot already gone; cannot happen with a
            // consistent pipeline, but never send it late.
            self.grants.pop_first();
            self.counters.unknown_grants += 1;
        }
        if let Some(g) = self.grants.remove(&slot) {
            j = topo.relative_index(g.dst);
            data = self.scheduled_cells(&g, j, layout);
        } else if optimistic {
            if let Some(id) = self.optimistic_head() {
                let n_aggs = topo.n_aggs() as u32;
                let f = self.flows.get_mut(&id).expect("head is live");
                let agg = match (reroute_per_slot, f.opt_agg) {
                    (false, Some(a)) => a,
                    _ => {
                        let a = rng.random_range(0..n_aggs);
                        f.opt_agg = Some(a);
                        a
                    }
                };
                j = topo.relative_index(f.spec.dst);
                let n = (f.cells - f.opt_next).min(layout.data_slots());
                let f = f.clone();
                for p in 0..n {
                    let seq = f.opt_next + p;
                    data.push(DataPlan {
                        offset: layout.data_offset(self.rel, j, p),
                        kind: CellKind::DataUnscheduled,
                        flow: id,
                        seq,
                        dst: f.spec.dst,
                        agg,
                        bytes: self.payload_bytes(&f, seq),
                    });
                }
                self.flows.get_mut(&id).unwrap().opt_next += n;
                self.counters.unscheduled_cells += n as u64;
            }
        }
        let report = self.reports.pop_front();
        if report.is_some() {
            self.counters.reports_sent += 1;
        }
        self.counters.rts_sent += 1;
        FramePlan {
            slot,
            data,
            rts: RtsInfo {
                src: self.id,
                slot,
                demand: self.announce(slot, Some(timing)),
                report,
            },
            rts_offset: layout.rts_offset(self.rel, j) + layout.ctrl_margin(),
        }
    }

    /// An on-demand RTS for the buffered baseline.
    pub fn immediate_rts(&mut self, slot: u64) -> RtsInfo {
        self.counters.rts_sent += 1;
        RtsInfo {
            src: self.id,
            slot,
            demand: self.announce(slot, None),
            report: None,
        }
    }

    /// Handles an SCHD fully received at `now`. Returns the grant if it names
    /// one of this host's demands.
    pub fn on_schd(&mut self, info: &SchdInfo, now: SimTime) -> Option<Grant> {
        self.counters.schd_received += 1;
        self.clock.sync(now);
        if info.expected_cells > 0 {
            self.rx_expected.insert(info.slot, info.expected_cells);
        }
        // The first SCHD at or after a demand's deadline ends its optimistic
        // phase, whatever it carries.
        for id in &self.eligible {
            if let Some(f) = self.flows.get_mut(id) {
                if f.phase == Phase::OptimisticEligible && f.deadline.is_some_and(|d| now >= d) {
                    f.phase = Phase::Awaiting;
                }
            }
        }
        let g = info.grant?;
        match self.flows.get_mut(&g.demand) {
            Some(f) if g.src == self.id => {
                if f.phase != Phase::Scheduled {
                    f.phase = Phase::Scheduled;
                    f.sched_next = 0;
                }
                self.grants.insert(g.slot, g);
                Some(g)
            }
            _ => {
                self.counters.unknown_grants += 1;
                None
            }
        }
    }

    /// Cells of a grant laid back to back from the slot start (buffered
    /// baseline, no control gaps).
    pub fn take_grant_contiguous(&mut self, slot: u64, layout: &FrameLayout) -> Vec<DataPlan> {
        let Some(g) = self.grants.remove(&slot) else {
            return Vec::new();
        };
        let mut cells = self.scheduled_cells(&g, 0, layout);
        for (p, c) in cells.iter_mut().enumerate() {
            c.offset = p as u64 * layout.data_cell_ps;
        }
        cells
    }

    pub fn on_scheduled_cell(&mut self, slot: u64) {
        *self.rx_got.entry(slot).or_default() += 1;
    }
}
