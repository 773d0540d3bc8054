//! A single pod of a k-port Fattree: (k/2)^2 hosts, k/2 ToRs, k/2 Aggs and a
//! central arbiter wired to every ToR.

use std::fmt;
use std::str::FromStr;

use arrayvec::ArrayVec;
use serde::Serialize;

use crate::error::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct HostId(pub u32);

impl HostId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h{}", self.0)
    }
}

/// A directed link, identified by the egress port that feeds it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct LinkId(pub u32);

impl LinkId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Host(u32),
    Tor(u32),
    Agg(u32),
    Arbiter,
}

impl NodeId {
    pub fn is_switch(self) -> bool {
        matches!(self, NodeId::Tor(_) | NodeId::Agg(_))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Host(h) => write!(f, "h{h}"),
            NodeId::Tor(t) => write!(f, "tor{t}"),
            NodeId::Agg(a) => write!(f, "agg{a}"),
            NodeId::Arbiter => write!(f, "arbiter"),
        }
    }
}

impl Serialize for NodeId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl FromStr for NodeId {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        let bad = || SimError::Topology(format!("unknown node name {s:?}"));
        if s == "arbiter" {
            return Ok(NodeId::Arbiter);
        }
        let (ctor, rest): (fn(u32) -> NodeId, &str) = if let Some(r) = s.strip_prefix("tor") {
            (NodeId::Tor, r)
        } else if let Some(r) = s.strip_prefix("agg") {
            (NodeId::Agg, r)
        } else if let Some(r) = s.strip_prefix('h') {
            (NodeId::Host, r)
        } else {
            return Err(bad());
        };
        rest.parse().map(ctor).map_err(|_| bad())
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Link {
    pub id: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    /// Index of this link among the egress ports of `from`.
    pub port: u16,
}

/// Ordered egress ports, one per hop. Host-to-host routes are always 4 hops;
/// control routes to or from the arbiter are 2.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SourceRoute(pub ArrayVec<LinkId, 4>);

impl SourceRoute {
    pub fn hops(&self) -> &[LinkId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct PodTopology {
    k: u32,
    link_rate_bps: u64,
    prop_ps: u64,
    ps_per_byte: u64,
    links: Vec<Link>,
    host_up: Vec<LinkId>,
    host_down: Vec<LinkId>,
    tor_up: Vec<Vec<LinkId>>,
    agg_down: Vec<Vec<LinkId>>,
    tor_to_arbiter: Vec<LinkId>,
    arbiter_to_tor: Vec<LinkId>,
}

impl PodTopology {
    /// Builds the pod. `link_rate_bps` must make one byte an integer number
    /// of picoseconds so every serialization time is exact.
    pub fn build(k: u32, link_rate_bps: u64, prop_ps: u64) -> Result<Self, SimError> {
        if k < 4 || k % 2 != 0 {
            return Err(SimError::Topology(format!("k must be even and >= 4, got {k}")));
        }
        if link_rate_bps == 0 || 8_000_000_000_000 % link_rate_bps != 0 {
            return Err(SimError::Topology(format!(
                "link rate {link_rate_bps} b/s does not give an integer ps per byte"
            )));
        }
        let half = k / 2;
        let mut links = Vec::new();
        let mut ports_used: std::collections::BTreeMap<NodeId, u16> = Default::default();
        let mut add = |from: NodeId, to: NodeId| {
            let port = ports_used.entry(from).or_insert(0);
            let id = LinkId(links.len() as u32);
            links.push(Link {
                id,
                from,
                to,
                port: *port,
            });
            *port += 1;
            id
        };

        let n_hosts = half * half;
        let host_up = (0..n_hosts)
            .map(|h| add(NodeId::Host(h), NodeId::Tor(h / half)))
            .collect::<Vec<_>>();
        // ToR egress ports: hosts first (local index order), then Aggs, then the arbiter.
        let host_down = (0..n_hosts)
            .map(|h| add(NodeId::Tor(h / half), NodeId::Host(h)))
            .collect::<Vec<_>>();
        let tor_up = (0..half)
            .map(|t| (0..half).map(|a| add(NodeId::Tor(t), NodeId::Agg(a))).collect())
            .collect::<Vec<Vec<_>>>();
        let tor_to_arbiter = (0..half)
            .map(|t| add(NodeId::Tor(t), NodeId::Arbiter))
            .collect::<Vec<_>>();
        let agg_down = (0..half)
            .map(|a| (0..half).map(|t| add(NodeId::Agg(a), NodeId::Tor(t))).collect())
            .collect::<Vec<Vec<_>>>();
        let arbiter_to_tor = (0..half)
            .map(|t| add(NodeId::Arbiter, NodeId::Tor(t)))
            .collect::<Vec<_>>();

        Ok(PodTopology {
            k,
            link_rate_bps,
            prop_ps,
            ps_per_byte: 8_000_000_000_000 / link_rate_bps,
            links,
            host_up,
            host_down,
            tor_up,
            agg_down,
            tor_to_arbiter,
            arbiter_to_tor,
        })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    /// Hosts per ToR, ToRs and Aggs per pod.
    pub fn half(&self) -> u32 {
        self.k / 2
    }

    pub fn n_hosts(&self) -> usize {
        (self.half() * self.half()) as usize
    }

    pub fn n_tors(&self) -> usize {
        self.half() as usize
    }

    pub fn n_aggs(&self) -> usize {
        self.half() as usize
    }

    pub fn hosts(&self) -> impl Iterator<Item = HostId> {
        (0..self.n_hosts() as u32).map(HostId)
    }

    pub fn link_rate_bps(&self) -> u64 {
        self.link_rate_bps
    }

    pub fn prop_ps(&self) -> u64 {
        self.prop_ps
    }

    pub fn ps_per_byte(&self) -> u64 {
        self.ps_per_byte
    }

    pub fn serialization_ps(&self, bytes: u64) -> u64 {
        bytes * self.ps_per_byte
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.idx()]
    }

    pub fn find_link(&self, from: NodeId, to: NodeId) -> Option<LinkId> {
        self.links
            .iter()
            .find(|l| l.from == from && l.to == to)
            .map(|l| l.id)
    }

    pub fn tor_of(&self, h: HostId) -> u32 {
        h.0 / self.half()
    }

    /// Position of `h` among the hosts of its ToR.
    pub fn relative_index(&self, h: HostId) -> u32 {
        h.0 % self.half()
    }

    pub fn host_uplink(&self, h: HostId) -> LinkId {
        self.host_up[h.idx()]
    }

    pub fn host_downlink(&self, h: HostId) -> LinkId {
        self.host_down[h.idx()]
    }

    pub fn tor_uplink(&self, tor: u32, agg: u32) -> LinkId {
        self.tor_up[tor as usize][agg as usize]
    }

    pub fn agg_downlink(&self, agg: u32, tor: u32) -> LinkId {
        self.agg_down[agg as usize][tor as usize]
    }

    pub fn tor_to_arbiter(&self, tor: u32) -> LinkId {
        self.tor_to_arbiter[tor as usize]
    }

    pub fn arbiter_to_tor(&self, tor: u32) -> LinkId {
        self.arbiter_to_tor[tor as usize]
    }

    /// Host-to-host route through Agg `agg`. Same-ToR pairs still go up to
    /// the Agg and back down.
    pub fn route(&self, src: HostId, dst: HostId, agg: u32) -> Result<SourceRoute, SimError> {
        if src == dst {
            return Err(SimError::Routing(format!("route from {src} to itself")));
        }
        if src.idx() >= self.n_hosts() || dst.idx() >= self.n_hosts() {
            return Err(SimError::Routing(format!("unknown host in {src}->{dst}")));
        }
        if agg >= self.half() {
            return Err(SimError::Routing(format!("agg index {agg} out of range")));
        }
        let mut hops = ArrayVec::new();
        hops.push(self.host_uplink(src));
        hops.push(self.tor_uplink(self.tor_of(src), agg));
        hops.push(self.agg_downlink(agg, self.tor_of(dst)));
        hops.push(self.host_downlink(dst));
        Ok(SourceRoute(hops))
    }

    pub fn route_to_arbiter(&self, h: HostId) -> SourceRoute {
        let mut hops = ArrayVec::new();
        hops.push(self.host_uplink(h));
        hops.push(self.tor_to_arbiter(self.tor_of(h)));
        SourceRoute(hops)
    }

    pub fn route_from_arbiter(&self, h: HostId) -> SourceRoute {
        let mut hops = ArrayVec::new();
        hops.push(self.arbiter_to_tor(self.tor_of(h)));
        hops.push(self.host_downlink(h));
        SourceRoute(hops)
    }

    /// The links a host-to-host grant occupies.
    pub fn path_links(&self, src: HostId, dst: HostId, agg: u32) -> [LinkId; 4] {
        [
            self.host_uplink(src),
            self.tor_uplink(self.tor_of(src), agg),
            self.agg_downlink(agg, self.tor_of(dst)),
            self.host_downlink(dst),
        ]
    }

    pub fn summary(&self) -> TopologySummary {
        TopologySummary {
            k: self.k,
            hosts: self.hosts().map(|h| NodeId::Host(h.0)).collect(),
            tors: (0..self.half()).map(NodeId::Tor).collect(),
            aggs: (0..self.half()).map(NodeId::Agg).collect(),
            arbiter: NodeId::Arbiter,
            links: self
                .links
                .iter()
                .map(|l| LinkSummary {
                    id: l.id.0,
                    from: l.from,
                    to: l.to,
                    rate_bps: self.link_rate_bps,
                    prop_ps: self.prop_ps,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct TopologySummary {
    pub k: u32,
    pub hosts: Vec<NodeId>,
    pub tors: Vec<NodeId>,
    pub aggs: Vec<NodeId>,
    pub arbiter: NodeId,
    pub links: Vec<LinkSummary>,
}

#[derive(Debug, Serialize)]
pub struct LinkSummary {
    pub id: u32,
    pub from: NodeId,
    pub to: NodeId,
    pub rate_bps: u64,
    pub prop_ps: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    const G100: u64 = 100_000_000_000;

    #[test]
    fn k8_pod_sizes() {
        let t = PodTopology::build(8, G100, 1_000_000).unwrap();
        assert_eq!(t.n_hosts(), 16);
        assert_eq!(t.n_tors(), 4);
        assert_eq!(t.n_aggs(), 4);
        assert_eq!(t.ps_per_byte(), 80);
        // 16 host links x2, 16 ToR-Agg links x2, 4 arbiter links x2
        assert_eq!(t.links().len(), 72);
    }

    #[test]
    fn k4_pod_sizes() {
        let t = PodTopology::build(4, G100, 1_000_000).unwrap();
        assert_eq!((t.n_hosts(), t.n_tors(), t.n_aggs()), (4, 2, 2));
    }

    #[test]
    fn rejects_bad_k() {
        assert!(PodTopology::build(7, G100, 1).is_err());
        assert!(PodTopology::build(2, G100, 1).is_err());
    }

    #[test]
    fn rejects_inexact_rate() {
        assert!(PodTopology::build(8, 3_000_000_000, 1).is_err());
    }

    #[test]
    fn route_shape() {
        let t = PodTopology::build(8, G100, 1_000_000).unwrap();
        let r = t.route(HostId(0), HostId(5), 2).unwrap();
        let nodes: Vec<_> = r.hops().iter().map(|&l| (t.link(l).from, t.link(l).to)).collect();
        assert_eq!(
            nodes,
            vec![
                (NodeId::Host(0), NodeId::Tor(0)),
                (NodeId::Tor(0), NodeId::Agg(2)),
                (NodeId::Agg(2), NodeId::Tor(1)),
                (NodeId::Tor(1), NodeId::Host(5)),
            ]
        );
        // h5 is local port 1 of ToR1
        assert_eq!(t.link(r.hops()[3]).port, 1);
    }

    #[test]
    fn same_tor_route_goes_through_agg() {
        let t = PodTopology::build(8, G100, 1_000_000).unwrap();
        let r = t.route(HostId(0), HostId(1), 0).unwrap();
        assert_eq!(r.len(), 4);
        assert_eq!(t.link(r.hops()[1]).to, NodeId::Agg(0));
    }

    #[test]
    fn self_route_rejected() {
        let t = PodTopology::build(8, G100, 1_000_000).unwrap();
        assert!(t.route(HostId(3), HostId(3), 0).is_err());
    }

    #[test]
    fn every_k4_route_is_valid_and_loop_free() {
        let t = PodTopology::build(4, G100, 1_000).unwrap();
        for s in t.hosts() {
            for d in t.hosts() {
                if s == d {
                    continue;
                }
                for a in 0..t.half() {
                    let r = t.route(s, d, a).unwrap();
                    assert_eq!(r.len(), 4);
                    let hops = r.hops();
                    assert_eq!(t.link(hops[0]).from, NodeId::Host(s.0));
                    assert_eq!(t.link(hops[3]).to, NodeId::Host(d.0));
                    for w in hops.windows(2) {
                        assert_eq!(t.link(w[0]).to, t.link(w[1]).from, "contiguous");
                    }
                    // No directed link repeats; the Agg is the single turning point.
                    let uniq: BTreeSet<_> = hops.iter().collect();
                    assert_eq!(uniq.len(), 4);
                    let aggs = hops.iter().filter(|&&l| matches!(t.link(l).from, NodeId::Agg(_)));
                    assert_eq!(aggs.count(), 1);
                    assert_eq!(t.link(hops[1]).to, NodeId::Agg(a));
                }
            }
        }
    }

    #[test]
    fn control_routes_have_two_hops() {
        let t = PodTopology::build(8, G100, 1_000_000).unwrap();
        for h in t.hosts() {
            let up = t.route_to_arbiter(h);
            let down = t.route_from_arbiter(h);
            assert_eq!(up.len(), 2);
            assert_eq!(down.len(), 2);
            assert_eq!(t.link(up.hops()[1]).to, NodeId::Arbiter);
            assert_eq!(t.link(down.hops()[1]).to, NodeId::Host(h.0));
        }
    }

    #[test]
    fn relative_index_examples() {
        let t = PodTopology::build(8, G100, 1_000_000).unwrap();
        assert_eq!(t.relative_index(HostId(0)), 0);
        assert_eq!(t.relative_index(HostId(5)), 1);
        for tor in 0..4 {
            let idx: BTreeSet<u32> = t
                .hosts()
                .filter(|&h| t.tor_of(h) == tor)
                .map(|h| t.relative_index(h))
                .collect();
            assert_eq!(idx, (0..4).collect());
        }
    }

    #[test]
    fn node_names_round_trip() {
        for n in [NodeId::Host(12), NodeId::Tor(3), NodeId::Agg(0), NodeId::Arbiter] {
            assert_eq!(n.to_string().parse::<NodeId>().unwrap(), n);
        }
        assert!("switch9".parse::<NodeId>().is_err());
    }

    #[test]
    fn summary_serializes() {
        let t = PodTopology::build(4, G100, 1_000).unwrap();
        let json = serde_json::to_value(t.summary()).unwrap();
        assert_eq!(json["hosts"].as_array().unwrap().len(), 4);
        assert_eq!(json["links"][0]["from"], "h0");
    }
}
