//! Path assignment as bipartite edge coloring.
//!
//! Each grant is an edge from its source ToR (uplink side) to its destination
//! ToR (downlink side); each color is an Agg. A proper coloring means no
//! ToR uplink and no Agg downlink carries two grants in the same slot. With
//! every ToR degree at most k/2 (one grant per host) a k/2-coloring always
//! exists; first-fit plus alternating-path recoloring finds one.

use crate::error::SimError;
use crate::framing::Grant;
use crate::topology::PodTopology;

const FREE: usize = usize::MAX;

struct Coloring {
    colors: usize,
    /// up[tor * colors + c] = edge using color c at source ToR `tor`
    up: Vec<usize>,
    down: Vec<usize>,
    edges: Vec<(usize, usize)>,
    color_of: Vec<usize>,
}

impl Coloring {
    fn new(tors: usize, colors: usize, edges: Vec<(usize, usize)>) -> Self {
        let n = edges.len();
        Coloring {
            colors,
            up: vec![FREE; tors * colors],
            down: vec![FREE; tors * colors],
            edges,
            color_of: vec![FREE; n],
        }
    }

    fn free_up(&self, u: usize, c: usize) -> bool {
        self.up[u * self.colors + c] == FREE
    }

    fn free_down(&self, v: usize, c: usize) -> bool {
        self.down[v * self.colors + c] == FREE
    }

    fn set(&mut self, e: usize, c: usize) {
        let (u, v) = self.edges[e];
        self.up[u * self.colors + c] = e;
        self.down[v * self.colors + c] = e;
        self.color_of[e] = c;
    }

    fn unset(&mut self, e: usize) {
        let (u, v) = self.edges[e];
        let c = self.color_of[e];
        self.up[u * self.colors + c] = FREE;
        self.down[v * self.colors + c] = FREE;
        self.color_of[e] = FREE;
    }

    fn color(&mut self, e: usize) -> Result<(), SimError> {
        let (u, v) = self.edges[e];
        if let Some(c) = (0..self.colors).find(|&c| self.free_up(u, c) && self.free_down(v, c)) {
            self.set(e, c);
            return Ok(());
        }
        let alpha = (0..self.colors).find(|&c| self.free_up(u, c));
        let beta = (0..self.colors).find(|&c| self.free_down(v, c));
        let (Some(alpha), Some(beta)) = (alpha, beta) else {
            return Err(SimError::Routing(format!(
                "ToR degree exceeds {} in path assignment",
                self.colors
            )));
        };
        // alpha is busy at v. Walk the alpha/beta alternating path from v and
        // swap the two colors along it; it cannot reach u.
        let mut path = Vec::new();
        let mut at_down = true;
        let mut node = v;
        let mut want = alpha;
        loop {
            let slot = if at_down {
                self.down[node * self.colors + want]
            } else {
                self.up[node * self.colors + want]
            };
            if slot == FREE {
                break;
            }
            path.push(slot);
            let (pu, pv) = self.edges[slot];
            node = if at_down { pu } else { pv };
            at_down = !at_down;
            want = if want == alpha { beta } else { alpha };
        }
        for &p in &path {
            self.unset(p);
        }
        // Colors alternate along the path starting with alpha.
        for (idx, &p) in path.iter().enumerate() {
            self.set(p, if idx % 2 == 0 { beta } else { alpha });
        }
        if !(self.free_up(u, alpha) && self.free_down(v, alpha)) {
            return Err(SimError::Routing("alternating-path recoloring failed".into()));
        }
        self.set(e, alpha);
        Ok(())
    }
}

/// Fills in `agg` for every grant so that no pod link is used twice.
pub fn assign_paths(grants: &mut [Grant], topo: &PodTopology) -> Result<(), SimError> {
    let colors = topo.n_aggs();
    let edges = grants
        .iter()
        .map(|g| (topo.tor_of(g.src) as usize, topo.tor_of(g.dst) as usize))
        .collect();
    let mut col = Coloring::new(topo.n_tors(), colors, edges);
    for e in 0..grants.len() {
        col.color(e)?;
    }
    for (g, &c) in grants.iter_mut().zip(&col.color_of) {
        g.agg = c as u32;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::HostId;
    use std::collections::BTreeMap;

    fn g(src: u32, dst: u32) -> Grant {
        Grant {
            slot: 0,
            src: HostId(src),
            dst: HostId(dst),
            agg: u32::MAX,
            cells: 3,
            demand: 0,
        }
    }

    fn topo() -> PodTopology {
        PodTopology::build(8, 100_000_000_000, 1_000_000).unwrap()
    }

    fn link_use(grants: &[Grant], t: &PodTopology) -> BTreeMap<u32, u32> {
        let mut m = BTreeMap::new();
        for x in grants {
            for l in t.path_links(x.src, x.dst, x.agg) {
                *m.entry(l.0).or_insert(0) += 1;
            }
        }
        m
    }

    #[test]
    fn single_grant_takes_first_agg() {
        let mut v = vec![g(0, 5)];
        assign_paths(&mut v, &topo()).unwrap();
        assert_eq!(v[0].agg, 0);
    }

    #[test]
    fn four_grants_between_two_tors_use_all_aggs() {
        let t = topo();
        let mut v = vec![g(0, 4), g(1, 5), g(2, 6), g(3, 7)];
        assign_paths(&mut v, &t).unwrap();
        let mut aggs: Vec<_> = v.iter().map(|x| x.agg).collect();
        aggs.sort();
        assert_eq!(aggs, vec![0, 1, 2, 3]);
    }

    #[test]
    fn recoloring_needed_case() {
        // First-fit alone paints (0->4) and (4->8) with agg 0, and (1->9) with agg 1.
        // Then (5->5') style conflicts force a Kempe swap somewhere.
        let t = topo();
        let mut v = vec![g(0, 4), g(5, 8), g(1, 9), g(9, 5), g(4, 1), g(8, 0), g(2, 10), g(10, 2)];
        assign_paths(&mut v, &t).unwrap();
        assert!(link_use(&v, &t).values().all(|&n| n == 1));
    }

    #[test]
    fn full_permutation_is_link_disjoint() {
        let t = topo();
        for shift in 1..16u32 {
            let mut v: Vec<_> = (0..16).map(|s| g(s, (s + shift) % 16)).collect();
            assign_paths(&mut v, &t).unwrap();
            assert!(link_use(&v, &t).values().all(|&n| n == 1), "shift {shift}");
        }
    }
}
