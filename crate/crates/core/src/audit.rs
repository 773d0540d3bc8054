//! Link occupancy bookkeeping and the collision-freedom check.
//!
//! `OnlineAudit` checks every transmission against its neighbours on the
//! same directed link as the run proceeds and keeps only intervals that can
//! still overlap something. `CollisionAudit` keeps everything and checks at
//! the end; it also backs the offline `occupancy.csv` audit.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::error::SimError;
use crate::framing::CellKind;
use crate::topology::LinkId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Interval {
    pub start: SimTime,
    pub end: SimTime,
    pub cell: u64,
    pub kind: CellKind,
}

impl Interval {
    fn overlaps(&self, o: &Interval) -> bool {
        self.start < o.end && o.start < self.end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Overlap {
    pub link: u32,
    pub first: Interval,
    pub second: Interval,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub pass: bool,
    pub links: usize,
    pub intervals: u64,
    pub overlaps: u64,
    pub first_overlap: Option<Overlap>,
}

#[derive(Clone, Debug)]
pub struct OnlineAudit {
    live: Vec<BTreeMap<(SimTime, u64), Interval>>,
    recorded: u64,
    retracted: u64,
    overlaps: u64,
    first_overlap: Option<Overlap>,
    links_used: Vec<bool>,
}

impl OnlineAudit {
    pub fn new(n_links: usize) -> Self {
        OnlineAudit {
            live: vec![BTreeMap::new(); n_links],
            recorded: 0,
            retracted: 0,
            overlaps: 0,
            first_overlap: None,
            links_used: vec![false; n_links],
        }
    }

    /// Records a transmission; `now` is the current clock, and nothing that
    /// ended before it can clash with anything recorded later.
    pub fn record(&mut self, link: LinkId, iv: Interval, now: SimTime) {
        self.recorded += 1;
        self.links_used[link.0 as usize] = true;
        let map = &mut self.live[link.0 as usize];
        while map.first_key_value().is_some_and(|(_, v)| v.end <= now) {
            map.pop_first();
        }
        let key = (iv.start, iv.cell);
        let mut clash = None;
        if let Some((_, prev)) = map.range(..key).next_back() {
            if prev.overlaps(&iv) {
                clash = Some(*prev);
            }
        }
        if clash.is_none() {
            if let Some((_, next)) = map.range(key..).next() {
                if next.overlaps(&iv) {
                    clash = Some(*next);
                }
            }
        }
        if let Some(other) = clash {
            self.overlaps += 1;
            self.first_overlap.get_or_insert(Overlap {
                link: link.0,
                first: other,
                second: iv,
            });
        }
        map.insert(key, iv);
    }

    /// Removes a transmission that was cut off before it finished.
    pub fn retract(&mut self, link: LinkId, start: SimTime, cell: u64) {
        if self.live[link.0 as usize].remove(&(start, cell)).is_some() {
            self.retracted += 1;
        }
    }

    pub fn report(&self) -> AuditReport {
        AuditReport {
            pass: self.overlaps == 0,
            links: self.links_used.iter().filter(|&&u| u).count(),
            intervals: self.recorded - self.retracted,
            overlaps: self.overlaps,
            first_overlap: self.first_overlap,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct OccupancyRow {
    link: u32,
    start_ps: u64,
    end_ps: u64,
    cell_id: u64,
    kind: String,
}

fn parse_kind(s: &str) -> Option<CellKind> {
    [
        CellKind::DataScheduled,
        CellKind::DataUnscheduled,
        CellKind::Rts,
        CellKind::Schd,
    ]
    .into_iter()
    .find(|k| k.as_str() == s)
}

/// Full occupancy record of a run.
#[derive(Clone, Debug, Default)]
pub struct CollisionAudit {
    links: BTreeMap<u32, Vec<Interval>>,
    retracted: HashSet<(u32, u64)>,
}

impl CollisionAudit {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, link: LinkId, iv: Interval) {
        self.links.entry(link.0).or_default().push(iv);
    }

    pub fn retract(&mut self, link: LinkId, cell: u64) {
        self.retracted.insert((link.0, cell));
    }

    fn kept(&self) -> impl Iterator<Item = (u32, &Interval)> {
        self.links.iter().flat_map(move |(&l, v)| {
            v.iter()
                .filter(move |iv| !self.retracted.contains(&(l, iv.cell)))
                .map(move |iv| (l, iv))
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), SimError> {
        let mut w = csv::Writer::from_path(path)?;
        for (link, iv) in self.kept() {
            w.serialize(OccupancyRow {
                link,
                start_ps: iv.start.0,
                end_ps: iv.end.0,
                cell_id: iv.cell,
                kind: iv.kind.as_str().to_string(),
            })?;
        }
        w.flush().map_err(|e| SimError::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self, SimError> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut a = CollisionAudit::new();
        for row in rdr.deserialize::<OccupancyRow>() {
            let r = row?;
            let kind = parse_kind(&r.kind)
                .ok_or_else(|| SimError::Config(format!("unknown cell kind {:?}", r.kind)))?;
            a.record(
                LinkId(r.link),
                Interval {
                    start: SimTime(r.start_ps),
                    end: SimTime(r.end_ps),
                    cell: r.cell_id,
                    kind,
                },
            );
        }
        Ok(a)
    }
}

/// Sorts each link's intervals and checks neighbours for overlap.
pub fn audit_collision_free(audit: &CollisionAudit) -> AuditReport {
    let mut per_link: BTreeMap<u32, Vec<Interval>> = BTreeMap::new();
    for (l, iv) in audit.kept() {
        per_link.entry(l).or_default().push(*iv);
    }
    let mut report = AuditReport {
        pass: true,
        links: per_link.len(),
        intervals: 0,
        overlaps: 0,
        first_overlap: None,
    };
    for (link, mut v) in per_link {
        report.intervals += v.len() as u64;
        v.sort_by_key(|iv| (iv.start, iv.end, iv.cell));
        // Track the interval reaching furthest so nested overlaps are caught.
        let mut reach = v[0];
        for iv in &v[1..] {
            if iv.start < reach.end {
                report.overlaps += 1;
                report.first_overlap.get_or_insert(Overlap {
                    link,
                    first: reach,
                    second: *iv,
                });
            }
            if iv.end > reach.end {
                reach = *iv;
            }
        }
    }
    report.pass = report.overlaps == 0;
    report
}
