//! The pod simulation: wires hosts, switches and the arbiter to the event
//! queue for one scheme and produces the run's metrics.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::arbiter::{Arbiter, Suspect};
use crate::audit::{AuditReport, CollisionAudit, Interval, OnlineAudit};
use crate::config::{RunConfig, Scheme};
use crate::engine::{Scheduler, SimTime, TraceLabel};
use crate::error::SimError;
use crate::framing::{Cell, CellKind, FrameLayout, Grant, Payload, RtsInfo, SchdInfo};
use crate::host::{skew_bound_ps, DataPlan, Host, HostClock, HostCounters};
use crate::metrics::{
    class_stats, goodput, ideal_fct, write_fct_csv, write_latency_csv, ClassStats, FlowRecord,
    Goodput, LatencyBook, LatencyStats, SizeClass,
};
use crate::switch::{BufOutcome, BufferedPort, BufferedSwitch, SwitchCounters, ZbOutcome, ZeroBufferSwitch};
use crate::timing::PodTiming;
use crate::topology::{HostId, LinkId, NodeId, PodTopology};
use crate::workload::{self, FlowSpec, SizeDistribution};

const CLOCK_STREAM: u64 = 0x636c6f636b;
const PATH_STREAM: u64 = 0x70617468;

#[derive(Debug)]
pub enum Ev {
    FlowArrival(u32),
    HostFrame(u64),
    ArbiterClose { slot: u64, deferred: bool },
    Arrive { node: NodeId, cell: Box<Cell> },
    /// Buffered baseline: a host starts sending a granted slot.
    GrantTx { host: HostId, slot: u64 },
}

impl TraceLabel for Ev {
    fn entity(&self) -> String {
        match self {
            Ev::FlowArrival(_) => "workload".into(),
            Ev::HostFrame(_) => "hosts".into(),
            Ev::ArbiterClose { .. } => "arbiter".into(),
            Ev::Arrive { node, .. } => node.to_string(),
            Ev::GrantTx { host, .. } => host.to_string(),
        }
    }

    fn action(&self) -> String {
        match self {
            Ev::FlowArrival(f) => format!("flow_arrival {f}"),
            Ev::HostFrame(s) => format!("frame {s}"),
            Ev::ArbiterClose { slot, .. } => format!("close {slot}"),
            Ev::Arrive { cell, .. } => format!("arrive {} {} {}", cell.kind.as_str(), cell.id, cell.hop),
            Ev::GrantTx { slot, .. } => format!("grant_tx {slot}"),
        }
    }
}

/// Placement of SCHDs against the gaps reserved for them, and ordering of
/// RTS cells toward the arbiter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct GapStats {
    pub schd_checked: u64,
    pub schd_outside_gap: u64,
    /// Inside with room to spare at both ends (needs a control guard).
    pub schd_strictly_inside: u64,
    pub rts_checked: u64,
    pub rts_overlaps: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DetectionOut {
    pub suspect: String,
    pub kind: &'static str,
    /// Slot attributed to the detection: the boundary at which a missing
    /// heartbeat was noticed, or the data slot a failed report covers.
    pub slot: u64,
    /// When the arbiter concluded it.
    pub time_ps: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Overhead {
    pub unique_bytes: u64,
    pub redundant_bytes: u64,
    pub optimistic_bytes: u64,
    pub control_bytes: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub scheme: Scheme,
    pub seed: u64,
    pub load: f64,
    pub config_hash: String,
    pub status: &'static str,
    pub n_flows: usize,
    pub completed: usize,
    pub end_time_ps: u64,
    pub events_dispatched: u64,
    pub slowdown: BTreeMap<&'static str, ClassStats>,
    pub goodput: Goodput,
    pub latency: BTreeMap<&'static str, LatencyStats>,
    pub cells_sent: BTreeMap<&'static str, u64>,
    pub cells_dropped: BTreeMap<&'static str, u64>,
    pub overhead: Overhead,
    pub switch_totals: SwitchCounters,
    pub switches: BTreeMap<String, SwitchCounters>,
    pub host_totals: HostCounters,
    pub endpoint_fault_losses: u64,
    pub max_queue_bytes: u64,
    pub audit: AuditReport,
    pub gap_filling: GapStats,
    pub failures: Vec<DetectionOut>,
    pub timing: PodTiming,
}

pub struct RunOutput {
    pub config: RunConfig,
    pub flows: Vec<FlowSpec>,
    pub records: Vec<FlowRecord>,
    pub latency: LatencyBook,
    pub summary: Summary,
    pub occupancy: Option<CollisionAudit>,
    pub alloc_log: Vec<Grant>,
}

impl RunOutput {
    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        s.push('\n');
        s
    }
}

struct RxFlow {
    bits: Vec<u64>,
    unique: u32,
}

fn kind_index(k: CellKind) -> usize {
    k as usize
}

const KINDS: [CellKind; 4] = [
    CellKind::DataScheduled,
    CellKind::DataUnscheduled,
    CellKind::Rts,
    CellKind::Schd,
];

/// Resolves `h3` or `from->to` to a link.
pub fn resolve_link(topo: &PodTopology, element: &str) -> Result<LinkId, SimError> {
    let parse = |s: &str| {
        s.trim()
            .parse::<NodeId>()
            .map_err(|_| SimError::Config(format!("unknown element {element:?}")))
    };
    if let Some((a, b)) = element.split_once("->") {
        let (a, b) = (parse(a)?, parse(b)?);
        return topo
            .find_link(a, b)
            .ok_or_else(|| SimError::Config(format!("no link {element}")));
    }
    match parse(element)? {
        NodeId::Host(h) if (h as usize) < topo.n_hosts() => Ok(topo.host_uplink(HostId(h))),
        _ => Err(SimError::Config(format!("fault element {element:?} is not a host or link"))),
    }
}

/// Hop depth (in link traversals from the sending host) at which a slot's
/// cells start on `link`.
fn link_depth(topo: &PodTopology, link: LinkId) -> u64 {
    let l = topo.link(link);
    match (l.from, l.to) {
        (NodeId::Host(_), _) => 0,
        (NodeId::Tor(_), NodeId::Agg(_)) | (NodeId::Tor(_), NodeId::Arbiter) => 1,
        (NodeId::Agg(_), _) | (NodeId::Arbiter, _) => 2,
        _ => 3,
    }
}

pub struct World {
    cfg: RunConfig,
    topo: PodTopology,
    layout: FrameLayout,
    timing: PodTiming,
    flows: Vec<FlowSpec>,
    hosts: Vec<Host>,
    arbiter: Arbiter,
    zb: Vec<ZeroBufferSwitch>,
    buf: Vec<BufferedSwitch>,
    nic: Vec<BufferedPort>,
    arb_nic: Vec<BufferedPort>,
    dead_at: Vec<Option<SimTime>>,
    killed: HashSet<u64>,
    next_cell: u64,
    records: Vec<FlowRecord>,
    rx: Vec<RxFlow>,
    completed: usize,
    latency: LatencyBook,
    audit: OnlineAudit,
    occupancy: Option<CollisionAudit>,
    alloc_log: Vec<Grant>,
    detections: Vec<(Suspect, u64)>,
    sent: [u64; 4],
    sent_bytes: [u64; 4],
    endpoint_losses: u64,
    endpoint_drops: [u64; 4],
    gap: GapStats,
    last_rts_end: BTreeMap<u32, SimTime>,
    path_rng: ChaCha12Rng,
}

impl World {
    pub fn new(cfg: &RunConfig, flows: Vec<FlowSpec>) -> Result<Self, SimError> {
        cfg.validate()?;
        for (i, f) in flows.iter().enumerate() {
            if f.id as usize != i {
                return Err(SimError::Workload(format!(
                    "flow ids must be 0..n in list order; found {} at {i}",
                    f.id
                )));
            }
        }
        if flows.windows(2).any(|w| w[1].arrival < w[0].arrival) {
            return Err(SimError::Workload("flows must be sorted by arrival".into()));
        }
        let topo = PodTopology::build(cfg.k, cfg.link_rate_bps, cfg.prop_ps)?;
        if let Some(f) = flows
            .iter()
            .find(|f| f.src.idx() >= topo.n_hosts() || f.dst.idx() >= topo.n_hosts() || f.src == f.dst)
        {
            return Err(SimError::Workload(format!("flow {} has invalid endpoints", f.id)));
        }
        let layout = FrameLayout::new(
            cfg.k / 2,
            cfg.data_cell_bytes,
            cfg.ctrl_cell_bytes,
            topo.ps_per_byte(),
            cfg.guard_slot_ps,
            cfg.guard_ctrl_ps,
        )?;
        let slot = layout.slot_duration();
        let max_size = flows.iter().map(|f| f.size_bytes).max().unwrap_or(0);
        let last_arrival = flows.last().map_or(0, |f| f.arrival.0);
        let expected =
            last_arrival + ideal_fct(max_size, &topo, &layout, cfg.cut_through_ps) + 64 * slot;
        let cap = cfg.run_cap_ps.unwrap_or(50 * expected);

        let mut clock_rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ CLOCK_STREAM);
        let skew = match (&cfg.clock, cfg.scheme.zero_buffer()) {
            (Some(c), true) => {
                let p = topo.prop_ps();
                let horizon = if c.owd_correction {
                    // until the first SCHD, and between later ones
                    4 * p + 3 * cfg.cut_through_ps + (8 + cfg.processing_slots) * slot + c.max_offset_ps
                } else {
                    cap
                };
                skew_bound_ps(c, horizon)
            }
            _ => 0,
        };
        let timing = PodTiming::new(&topo, &layout, cfg.cut_through_ps, cfg.processing_slots, skew);

        let mut hosts: Vec<Host> = topo.hosts().map(|h| Host::new(h, &topo, &layout)).collect();
        if let (Some(c), true) = (&cfg.clock, cfg.scheme.zero_buffer()) {
            for h in &mut hosts {
                h.clock = HostClock::random(c, &mut clock_rng);
            }
        }

        let switch_nodes: Vec<NodeId> = (0..topo.n_tors() as u32)
            .map(NodeId::Tor)
            .chain((0..topo.n_aggs() as u32).map(NodeId::Agg))
            .collect();
        let (zb, buf) = if cfg.scheme.zero_buffer() {
            (
                switch_nodes
                    .iter()
                    .map(|&n| ZeroBufferSwitch::new(n, &topo, cfg.cut_through_ps))
                    .collect(),
                Vec::new(),
            )
        } else {
            (
                Vec::new(),
                switch_nodes
                    .iter()
                    .map(|&n| BufferedSwitch::new(n, &topo, cfg.cut_through_ps, cfg.buffer_bytes))
                    .collect(),
            )
        };

        let mut dead_at = vec![None; topo.links().len()];
        for f in &cfg.faults {
            let link = resolve_link(&topo, &f.element)?;
            let at = match (f.at_ps, f.at_slot) {
                (Some(t), _) => SimTime(t),
                (None, Some(s)) => {
                    timing.host_slot_start(s)
                        + link_depth(&topo, link) * (topo.prop_ps() + cfg.cut_through_ps)
                }
                (None, None) => unreachable!("validated"),
            };
            dead_at[link.0 as usize] = Some(at);
        }

        let records = flows
            .iter()
            .map(|f| {
                FlowRecord::new(
                    f.id,
                    f.src,
                    f.dst,
                    f.size_bytes,
                    f.arrival,
                    ideal_fct(f.size_bytes, &topo, &layout, cfg.cut_through_ps),
                )
            })
            .collect();
        let rx = flows
            .iter()
            .map(|f| {
                let cells = f.size_bytes.div_ceil(layout.data_cell_bytes as u64);
                RxFlow {
                    bits: vec![0; cells.div_ceil(64) as usize],
                    unique: 0,
                }
            })
            .collect();

        let mut cfg = cfg.clone();
        cfg.run_cap_ps = Some(cap);
        Ok(World {
            arbiter: Arbiter::new(&topo, &layout).with_pair_service(cfg.pair_service),
            zb,
            buf,
            nic: vec![BufferedPort::default(); topo.n_hosts()],
            arb_nic: vec![BufferedPort::default(); topo.n_tors()],
            dead_at,
            killed: HashSet::new(),
            next_cell: 0,
            records,
            rx,
            completed: 0,
            latency: LatencyBook::default(),
            audit: OnlineAudit::new(topo.links().len()),
            occupancy: cfg.trace.occupancy.then(CollisionAudit::new),
            alloc_log: Vec::new(),
            detections: Vec::new(),
            sent: [0; 4],
            sent_bytes: [0; 4],
            endpoint_losses: 0,
            endpoint_drops: [0; 4],
            gap: GapStats::default(),
            last_rts_end: BTreeMap::new(),
            path_rng: ChaCha12Rng::seed_from_u64(cfg.seed ^ PATH_STREAM),
            hosts,
            flows,
            timing,
            layout,
            topo,
            cfg,
        })
    }

    pub fn topology(&self) -> &PodTopology {
        &self.topo
    }

    pub fn layout(&self) -> &FrameLayout {
        &self.layout
    }

    pub fn timing(&self) -> &PodTiming {
        &self.timing
    }

    fn switch_index(&self, node: NodeId) -> usize {
        match node {
            NodeId::Tor(t) => t as usize,
            NodeId::Agg(a) => self.topo.n_tors() + a as usize,
            _ => unreachable!("not a switch"),
        }
    }

    fn is_dead(&self, link: LinkId, t: SimTime) -> bool {
        self.dead_at[link.0 as usize].is_some_and(|d| t >= d)
    }

    fn new_cell(&mut self, kind: CellKind, flow: u32, seq: u32, route: crate::topology::SourceRoute, payload: Payload) -> Box<Cell> {
        let id = self.next_cell;
        self.next_cell += 1;
        let size_bytes = if kind.is_data() {
            self.layout.data_cell_bytes
        } else {
            self.layout.ctrl_cell_bytes
        };
        Box::new(Cell {
            id,
            kind,
            flow,
            seq,
            size_bytes,
            route,
            hop: 0,
            sent_at: SimTime::ZERO,
            payload,
        })
    }

    /// Puts a cell on `link` starting at `start`; the link is known alive.
    fn emit(&mut self, sched: &mut Scheduler<Ev>, link: LinkId, start: SimTime, cell: Box<Cell>) -> Result<(), SimError> {
        let ser = self.topo.serialization_ps(cell.size_bytes as u64);
        let iv = Interval {
            start,
            end: start + ser,
            cell: cell.id,
            kind: cell.kind,
        };
        self.audit.record(link, iv, sched.now());
        if let Some(o) = self.occupancy.as_mut() {
            o.record(link, iv);
        }
        let to = self.topo.link(link).to;
        let at = if to.is_switch() {
            start + self.topo.prop_ps()
        } else {
            start + self.topo.prop_ps() + ser
        };
        sched.schedule(at, Ev::Arrive { node: to, cell })?;
        Ok(())
    }

    /// First hop from a host or the arbiter.
    fn send_endpoint(&mut self, sched: &mut Scheduler<Ev>, start: SimTime, mut cell: Box<Cell>) -> Result<(), SimError> {
        let link = cell.route.hops()[0];
        cell.hop = 1;
        cell.sent_at = start;
        let k = kind_index(cell.kind);
        self.sent[k] += 1;
        self.sent_bytes[k] += cell.size_bytes as u64;
        if self.is_dead(link, start) {
            self.endpoint_losses += 1;
            self.endpoint_drops[k] += 1;
            return Ok(());
        }
        self.emit(sched, link, start, cell)
    }

    /// Buffered baseline: queue at the host NIC, then send.
    fn send_via_nic(&mut self, sched: &mut Scheduler<Ev>, host: HostId, ready: SimTime, cell: Box<Cell>) -> Result<(), SimError> {
        let ser = self.topo.serialization_ps(cell.size_bytes as u64);
        let start = self.nic[host.idx()]
            .offer(ready, cell.size_bytes as u64, ser, u64::MAX)
            .expect("host queue is unbounded");
        self.send_endpoint(sched, start, cell)
    }

    fn data_cell(&mut self, host: HostId, d: &DataPlan) -> Result<Box<Cell>, SimError> {
        let route = self.topo.route(host, d.dst, d.agg)?;
        if d.kind == CellKind::DataUnscheduled {
            self.records[d.flow as usize].optimistic_bytes += d.bytes as u64;
        }
        Ok(self.new_cell(d.kind, d.flow, d.seq, route, Payload::Data { slot: 0, bytes: d.bytes }))
    }

    fn on_flow_arrival(&mut self, sched: &mut Scheduler<Ev>, idx: u32) -> Result<(), SimError> {
        let f = self.flows[idx as usize];
        let optimistic = self.cfg.scheme.optimistic();
        self.hosts[f.src.idx()].on_flow_arrival(&f, optimistic);
        if self.cfg.scheme == Scheme::FastpassMode {
            let now = sched.now();
            let slot = self.timing.slot_at(now);
            let rts = self.hosts[f.src.idx()].immediate_rts(slot);
            let route = self.topo.route_to_arbiter(f.src);
            let cell = self.new_cell(CellKind::Rts, u32::MAX, 0, route, Payload::Rts(rts));
            self.send_via_nic(sched, f.src, now, cell)?;
        }
        if let Some(next) = self.flows.get(idx as usize + 1) {
            sched.schedule(next.arrival, Ev::FlowArrival(idx + 1))?;
        }
        Ok(())
    }

    fn on_host_frame(&mut self, sched: &mut Scheduler<Ev>, slot: u64) -> Result<(), SimError> {
        let now = sched.now();
        let optimistic = self.cfg.scheme.optimistic();
        let reroute = self.cfg.optimistic_reroute_per_slot;
        for h in 0..self.hosts.len() {
            let host = HostId(h as u32);
            let plan = self.hosts[h].build_frame(
                slot,
                now,
                &self.layout,
                &self.timing,
                &self.topo,
                optimistic,
                reroute,
                &mut self.path_rng,
            );
            let base = self.hosts[h].clock.true_time(self.timing.host_slot_start(slot));
            for d in &plan.data {
                let mut cell = self.data_cell(host, d)?;
                cell.payload = Payload::Data { slot, bytes: d.bytes };
                self.send_endpoint(sched, base + d.offset, cell)?;
            }
            let route = self.topo.route_to_arbiter(host);
            let cell = self.new_cell(CellKind::Rts, u32::MAX, 0, route, Payload::Rts(plan.rts));
            self.send_endpoint(sched, base + plan.rts_offset, cell)?;
        }
        sched.schedule(self.timing.frame_build_time(slot + 1), Ev::HostFrame(slot + 1))?;
        Ok(())
    }

    fn send_schd(&mut self, sched: &mut Scheduler<Ev>, host: HostId, depart: SimTime, info: SchdInfo, queued: bool) -> Result<(), SimError> {
        let route = self.topo.route_from_arbiter(host);
        let cell = self.new_cell(CellKind::Schd, u32::MAX, 0, route, Payload::Schd(info));
        if queued {
            let tor = self.topo.tor_of(host) as usize;
            let ser = self.topo.serialization_ps(cell.size_bytes as u64);
            let start = self.arb_nic[tor]
                .offer(depart, cell.size_bytes as u64, ser, u64::MAX)
                .expect("arbiter queue is unbounded");
            self.send_endpoint(sched, start, cell)
        } else {
            self.send_endpoint(sched, depart, cell)
        }
    }

    fn on_arbiter_close(&mut self, sched: &mut Scheduler<Ev>, a: u64, deferred: bool) -> Result<(), SimError> {
        let now = sched.now();
        // RTS cells completing at this very instant are still in time.
        if !deferred && sched.peek_time() == Some(now) {
            sched.schedule(now, Ev::ArbiterClose { slot: a, deferred: true })?;
            return Ok(());
        }
        let fastpass = self.cfg.scheme == Scheme::FastpassMode;
        if !fastpass {
            for s in self.arbiter.detect_failures(a, &self.topo) {
                self.detections.push((s, now.0));
            }
        }
        let g = self.timing.grant_slot(a);
        let alloc = self.arbiter.schedule_slot(g, &self.topo)?;
        if self.cfg.trace.alloc {
            self.alloc_log.extend(alloc.grants.iter().copied());
        }
        if fastpass {
            let depart = now + self.timing.processing_slots * self.timing.slot_ps;
            for s in self.arbiter.emit_on_demand(&alloc, depart) {
                self.send_schd(sched, s.host, s.depart, s.info, true)?;
            }
        } else {
            let sends = self.arbiter.emit_schds(
                self.timing.emit_slot(a),
                &alloc,
                &self.topo,
                &self.layout,
                &self.timing,
            );
            for s in sends {
                self.send_schd(sched, s.host, s.depart, s.info, false)?;
            }
        }
        sched.schedule(
            self.timing.rts_close_time(a + 1),
            Ev::ArbiterClose {
                slot: a + 1,
                deferred: false,
            },
        )?;
        Ok(())
    }

    fn check_control_placement(&mut self, link: LinkId, start: SimTime, end: SimTime, cell: &Cell) {
        let l = self.topo.link(link);
        match (cell.kind, l.from, l.to, &cell.payload) {
            (CellKind::Schd, NodeId::Tor(_), NodeId::Host(h), Payload::Schd(info)) => {
                let rx = HostId(h);
                let j = self.topo.relative_index(rx);
                let i = self
                    .arbiter
                    .history()
                    .get(&info.slot)
                    .and_then(|a| a.grant_to(rx))
                    .map_or(j, |g| self.topo.relative_index(g.src));
                let gap_start = self.timing.host_slot_start(info.slot)
                    + 3 * (self.topo.prop_ps() + self.timing.cut_through_ps)
                    + self.layout.gap_offset(i, j);
                let gap_end = gap_start + self.layout.ctrl_width();
                self.gap.schd_checked += 1;
                if start < gap_start || end > gap_end {
                    self.gap.schd_outside_gap += 1;
                } else if start > gap_start && end < gap_end {
                    self.gap.schd_strictly_inside += 1;
                }
            }
            (CellKind::Rts, NodeId::Tor(t), NodeId::Arbiter, _) => {
                self.gap.rts_checked += 1;
                let last = self.last_rts_end.entry(t).or_insert(SimTime::ZERO);
                if start < *last {
                    self.gap.rts_overlaps += 1;
                }
                *last = (*last).max(end);
            }
            _ => {}
        }
    }

    fn on_switch(&mut self, sched: &mut Scheduler<Ev>, node: NodeId, mut cell: Box<Cell>) -> Result<(), SimError> {
        if !self.killed.is_empty() && self.killed.remove(&cell.id) {
            return Ok(());
        }
        let now = sched.now();
        let idx = self.switch_index(node);
        let dead = |l: LinkId, t: SimTime| self.dead_at[l.0 as usize].is_some_and(|d| t >= d);
        let forward = if self.zb.is_empty() {
            match self.buf[idx].on_cell(&mut cell, &self.topo, now, dead)? {
                BufOutcome::Forward { link, start, end } => Some((link, start, end)),
                BufOutcome::Drop(_) => None,
            }
        } else {
            match self.zb[idx].on_cell(&mut cell, &self.topo, now, dead)? {
                ZbOutcome::Forward {
                    link,
                    start,
                    end,
                    preempted,
                } => {
                    if let Some((victim, vstart)) = preempted {
                        self.killed.insert(victim);
                        self.audit.retract(link, vstart, victim);
                        if let Some(o) = self.occupancy.as_mut() {
                            o.retract(link, victim);
                        }
                    }
                    Some((link, start, end))
                }
                ZbOutcome::Violation {
                    link,
                    start,
                    end,
                    with,
                } => {
                    if self.cfg.strict {
                        return Err(SimError::ProtocolViolation {
                            at: now,
                            detail: format!(
                                "{} cell {} collided with cell {with} on link {} ({}->{})",
                                cell.kind.as_str(),
                                cell.id,
                                link.0,
                                self.topo.link(link).from,
                                self.topo.link(link).to
                            ),
                        });
                    }
                    Some((link, start, end))
                }
                ZbOutcome::Drop(_) => None,
            }
        };
        if let Some((link, start, end)) = forward {
            if !cell.kind.is_data() && !self.zb.is_empty() {
                self.check_control_placement(link, start, end, &cell);
            }
            self.emit(sched, link, start, cell)?;
        }
        Ok(())
    }

    fn on_host_receive(&mut self, sched: &mut Scheduler<Ev>, h: u32, cell: Box<Cell>) -> Result<(), SimError> {
        if !self.killed.is_empty() && self.killed.remove(&cell.id) {
            return Ok(());
        }
        let now = sched.now();
        self.latency.add(cell.kind, now - cell.sent_at);
        match cell.payload {
            Payload::Data { slot, bytes } => {
                if cell.kind == CellKind::DataScheduled {
                    self.hosts[h as usize].on_scheduled_cell(slot);
                }
                let fi = cell.flow as usize;
                let total = self.rx_cells(fi);
                let rx = &mut self.rx[fi];
                let (w, b) = (cell.seq as usize / 64, cell.seq % 64);
                if rx.bits[w] & (1 << b) != 0 {
                    self.records[fi].redundant_bytes += bytes as u64;
                    return Ok(());
                }
                rx.bits[w] |= 1 << b;
                rx.unique += 1;
                if rx.unique as usize == total {
                    self.records[fi].complete(now);
                    self.completed += 1;
                }
            }
            Payload::Schd(info) => {
                let host = HostId(h);
                let grant = self.hosts[h as usize].on_schd(&info, now);
                if let (Scheme::FastpassMode, Some(g)) = (self.cfg.scheme, grant) {
                    let at = now.max(self.timing.host_slot_start(g.slot));
                    sched.schedule(at, Ev::GrantTx { host, slot: g.slot })?;
                }
            }
            Payload::Rts(_) => {
                return Err(SimError::ProtocolViolation {
                    at: now,
                    detail: format!("RTS cell {} delivered to host {h}", cell.id),
                })
            }
        }
        Ok(())
    }

    fn rx_cells(&self, fi: usize) -> usize {
        self.flows[fi]
            .size_bytes
            .div_ceil(self.layout.data_cell_bytes as u64) as usize
    }

    fn on_arbiter_receive(&mut self, sched: &mut Scheduler<Ev>, cell: Box<Cell>) -> Result<(), SimError> {
        if !self.killed.is_empty() && self.killed.remove(&cell.id) {
            return Ok(());
        }
        let now = sched.now();
        self.latency.add(cell.kind, now - cell.sent_at);
        match cell.payload {
            Payload::Rts(info) => self.handle_rts(info, now),
            _ => Err(SimError::ProtocolViolation {
                at: now,
                detail: format!("{} cell {} delivered to the arbiter", cell.kind.as_str(), cell.id),
            }),
        }
    }

    fn handle_rts(&mut self, info: RtsInfo, now: SimTime) -> Result<(), SimError> {
        self.arbiter.handle_rts(&info, now)
    }

    fn on_grant_tx(&mut self, sched: &mut Scheduler<Ev>, host: HostId, slot: u64) -> Result<(), SimError> {
        let now = sched.now();
        let plans = self.hosts[host.idx()].take_grant_contiguous(slot, &self.layout);
        for d in plans {
            let mut cell = self.data_cell(host, &d)?;
            cell.payload = Payload::Data { slot, bytes: d.bytes };
            self.send_via_nic(sched, host, now + d.offset, cell)?;
        }
        Ok(())
    }

    fn dispatch(&mut self, sched: &mut Scheduler<Ev>, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::FlowArrival(i) => self.on_flow_arrival(sched, i),
            Ev::HostFrame(s) => self.on_host_frame(sched, s),
            Ev::ArbiterClose { slot, deferred } => self.on_arbiter_close(sched, slot, deferred),
            Ev::Arrive { node, cell } => match node {
                NodeId::Tor(_) | NodeId::Agg(_) => self.on_switch(sched, node, cell),
                NodeId::Host(h) => self.on_host_receive(sched, h, cell),
                NodeId::Arbiter => self.on_arbiter_receive(sched, cell),
            },
            Ev::GrantTx { host, slot } => self.on_grant_tx(sched, host, slot),
        }
    }

    /// Runs until every flow has completed or the run cap is reached.
    pub fn run(mut self, trace: Option<&Path>) -> Result<RunOutput, SimError> {
        let mut sched: Scheduler<Ev> = Scheduler::new();
        if let Some(p) = trace {
            let f = File::create(p).map_err(|e| SimError::io(p, e))?;
            sched.set_trace(Box::new(BufWriter::new(f)));
        }
        if let Some(f) = self.flows.first() {
            sched.schedule(f.arrival, Ev::FlowArrival(0))?;
        }
        if self.cfg.scheme.zero_buffer() {
            sched.schedule(self.timing.frame_build_time(0), Ev::HostFrame(0))?;
        }
        sched.schedule(
            self.timing.rts_close_time(0),
            Ev::ArbiterClose {
                slot: 0,
                deferred: false,
            },
        )?;
        let cap = SimTime(self.cfg.run_cap_ps.expect("set in new"));
        let n = self.flows.len();
        while self.completed < n {
            let Some(ev) = sched.pop_until(cap) else {
                break;
            };
            self.dispatch(&mut sched, ev.payload)?;
        }
        sched.flush_trace();
        let end = sched.now();
        Ok(self.finish(end, sched.dispatched()))
    }

    fn finish(self, end: SimTime, dispatched: u64) -> RunOutput {
        let mut switches = BTreeMap::new();
        let mut totals = SwitchCounters::default();
        let mut add = |name: String, c: &SwitchCounters| {
            totals.cells_in += c.cells_in;
            totals.forwarded += c.forwarded;
            totals.dropped_unscheduled += c.dropped_unscheduled;
            totals.preempted += c.preempted;
            totals.violations += c.violations;
            totals.droptail += c.droptail;
            totals.fault_losses += c.fault_losses;
            for k in 0..4 {
                totals.dropped_by_kind[k] += c.dropped_by_kind[k];
            }
            switches.insert(name, *c);
        };
        for s in &self.zb {
            add(s.node().to_string(), s.counters());
        }
        for s in &self.buf {
            add(s.node().to_string(), s.counters());
        }
        let max_queue_bytes = self.buf.iter().map(|s| s.max_queue_bytes()).max().unwrap_or(0);
        let mut host_totals = HostCounters::default();
        for h in &self.hosts {
            let c = h.counters();
            host_totals.rts_sent += c.rts_sent;
            host_totals.scheduled_cells += c.scheduled_cells;
            host_totals.unscheduled_cells += c.unscheduled_cells;
            host_totals.schd_received += c.schd_received;
            host_totals.unknown_grants += c.unknown_grants;
            host_totals.reports_sent += c.reports_sent;
        }
        let cells_sent = KINDS.iter().map(|k| (k.as_str(), self.sent[*k as usize])).collect();
        let cells_dropped = KINDS
            .iter()
            .map(|k| {
                let i = *k as usize;
                (k.as_str(), totals.dropped_by_kind[i] + self.endpoint_drops[i])
            })
            .collect();
        let g = goodput(&self.records, &self.topo);
        let overhead = Overhead {
            unique_bytes: g.unique_bytes,
            redundant_bytes: self.records.iter().map(|r| r.redundant_bytes).sum(),
            optimistic_bytes: self.records.iter().map(|r| r.optimistic_bytes).sum(),
            control_bytes: self.sent_bytes[CellKind::Rts as usize] + self.sent_bytes[CellKind::Schd as usize],
        };
        let detection_slots: BTreeMap<Suspect, u64> = self
            .arbiter
            .monitor()
            .suspects()
            .into_iter()
            .map(|d| (d.suspect, d.slot))
            .collect();
        let failures = self
            .detections
            .iter()
            .map(|&(s, t)| {
                let (suspect, kind) = match s {
                    Suspect::Host(h) => (HostId(h).to_string(), "host"),
                    Suspect::Link(l) => {
                        let link = self.topo.link(LinkId(l));
                        (format!("{}->{}", link.from, link.to), "link")
                    }
                };
                DetectionOut {
                    suspect,
                    kind,
                    slot: detection_slots[&s],
                    time_ps: t,
                }
            })
            .collect();
        let slowdown = SizeClass::ALL
            .iter()
            .map(|&c| (c.as_str(), class_stats(&self.records, c)))
            .collect();
        let summary = Summary {
            scheme: self.cfg.scheme,
            seed: self.cfg.seed,
            load: self.cfg.load,
            config_hash: self.cfg.hash12(),
            status: if self.completed == self.flows.len() {
                "complete"
            } else {
                "incomplete"
            },
            n_flows: self.flows.len(),
            completed: self.completed,
            end_time_ps: end.0,
            events_dispatched: dispatched,
            slowdown,
            goodput: g,
            latency: self.latency.stats(),
            cells_sent,
            cells_dropped,
            overhead,
            switch_totals: totals,
            switches,
            host_totals,
            endpoint_fault_losses: self.endpoint_losses,
            max_queue_bytes,
            audit: self.audit.report(),
            gap_filling: self.gap,
            failures,
            timing: self.timing,
        };
        RunOutput {
            config: self.cfg,
            flows: self.flows,
            records: self.records,
            latency: self.latency,
            summary,
            occupancy: self.occupancy,
            alloc_log: self.alloc_log,
        }
    }
}

/// Flows for `cfg`: loaded from its flows file or generated from its seed.
pub fn flows_for(cfg: &RunConfig) -> Result<Vec<FlowSpec>, SimError> {
    let topo = PodTopology::build(cfg.k, cfg.link_rate_bps, cfg.prop_ps)?;
    if let Some(p) = &cfg.flows_file {
        return workload::read_flows_csv(p, &topo);
    }
    let dist = match &cfg.cdf_file {
        Some(p) => SizeDistribution::from_csv_path(p)?,
        None => SizeDistribution::websearch(),
    };
    workload::generate(cfg.seed, cfg.load, cfg.n_flows, &topo, &dist)
}

/// Runs in memory without writing anything.
pub fn simulate(cfg: &RunConfig, flows: Vec<FlowSpec>) -> Result<RunOutput, SimError> {
    World::new(cfg, flows)?.run(None)
}

#[derive(Serialize)]
struct AllocRow {
    slot: u64,
    src: u32,
    dst: u32,
    agg: u32,
    cells: u32,
    demand: u32,
}

/// Runs `cfg` and writes its output directory. Returns the directory.
pub fn run_to_dir(cfg: &RunConfig, flows: Vec<FlowSpec>) -> Result<(PathBuf, RunOutput), SimError> {
    cfg.validate()?;
    let dir = cfg.run_dir();
    std::fs::create_dir_all(&dir).map_err(|e| SimError::io(&dir, e))?;
    let trace = cfg.trace.events.then(|| dir.join("events.csv"));
    let out = World::new(cfg, flows)?.run(trace.as_deref())?;
    write_outputs(&dir, &out)?;
    Ok((dir, out))
}

pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<(), SimError> {
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| SimError::io(&p, e))
    };
    let mut cfg = serde_json::to_string_pretty(&out.config)?;
    cfg.push('\n');
    write("config.json", cfg)?;
    write("summary.json", out.summary_json())?;
    write_fct_csv(&dir.join("fct.csv"), &out.records)?;
    write_latency_csv(&dir.join("latency.csv"), &out.latency)?;
    if let Some(o) = &out.occupancy {
        o.write_csv(&dir.join("occupancy.csv"))?;
    }
    if out.config.trace.alloc {
        let p = dir.join("alloc.csv");
        let mut w = csv::Writer::from_path(&p)?;
        for g in &out.alloc_log {
            w.serialize(AllocRow {
                slot: g.slot,
                src: g.src.0,
                dst: g.dst.0,
                agg: g.agg,
                cells: g.cells,
                demand: g.demand,
            })?;
        }
        w.flush().map_err(|e| SimError::io(&p, e))?;
    }
    Ok(())
}
