mod common;

use fastpod_sim::arbiter::PairService;
use fastpod_sim::framing::{Cell, CellKind, ElementKind, FrameLayout, Payload};
use fastpod_sim::switch::{BufferedSwitch, ZeroBufferSwitch};
use fastpod_sim::timing::PodTiming;
use fastpod_sim::topology::SourceRoute;
use fastpod_sim::{HostId, LinkId, NodeId, PodTopology, SimTime};
use proptest::prelude::*;

fn service() -> impl Strategy<Value = PairService> {
    prop_oneof![Just(PairService::Fifo), Just(PairService::ShortestRemaining)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn allocations_are_matchings_on_disjoint_paths(seed in any::<u64>(), svc in service()) {
        if let Err(e) = common::check_random_book(seed, svc) {
            prop_assert!(false, "{}", e);
        }
    }

    #[test]
    fn frame_elements_tile_the_slot(
        n in 2u32..9,
        data in 200u32..3000,
        ctrl in 16u32..90,
        gs in 0u64..20_000,
        gc in 0u64..20_000,
    ) {
        prop_assume!(2 * ctrl < data);
        let l = FrameLayout::new(n, data, ctrl, 80, gs, gc).unwrap();
        for i in 0..n {
            for j in 0..n {
                let els = l.frame_offsets(i, j, n - 1).unwrap();
                let mut t = 0;
                for e in &els {
                    prop_assert_eq!(e.start, t);
                    t += e.width;
                    match e.kind {
                        ElementKind::Rts => prop_assert_eq!(e.start, l.rts_offset(i, j)),
                        ElementKind::SchdGap => prop_assert_eq!(e.start, l.gap_offset(i, j)),
                        ElementKind::Data(p) => prop_assert_eq!(e.start, l.data_offset(i, j, p)),
                        _ => {}
                    }
                }
                prop_assert_eq!(t, l.slot_duration());
            }
        }
    }

    #[test]
    fn rts_windows_of_co_tor_hosts_are_disjoint(
        n in 2u32..9,
        ctrl in 16u32..90,
        gc in 0u64..20_000,
        js in proptest::collection::vec(0u32..8, 8),
    ) {
        let l = FrameLayout::new(n, 1500, ctrl, 80, 0, gc).unwrap();
        prop_assume!(l.ctrl_width() <= l.data_cell_ps);
        // Host i sends its RTS at rts_offset(i, j_i), whatever its own j_i.
        let win: Vec<(u64, u64)> = (0..n)
            .map(|i| {
                let s = l.rts_offset(i, js[i as usize] % n);
                (s, s + l.ctrl_width())
            })
            .collect();
        for a in 0..win.len() {
            for b in a + 1..win.len() {
                prop_assert!(win[a].1 <= win[b].0 || win[b].1 <= win[a].0,
                    "hosts {} and {} overlap: {:?} {:?}", a, b, win[a], win[b]);
            }
        }
    }

    #[test]
    fn schds_precede_the_frames_they_grant(
        prop_us in 1u64..20,
        cut in 0u64..2_000_000,
        skew in 0u64..3_000_000,
        processing in 1u64..4,
    ) {
        let topo = PodTopology::build(8, 100_000_000_000, prop_us * 1_000_000).unwrap();
        let (_, layout) = common::pod();
        let t = PodTiming::new(&topo, &layout, cut, processing, skew);
        for a in [0u64, 1, 17, 1000] {
            // Arbiter work starts after collection closes and SCHDs leave no
            // earlier than processing allows.
            let depart = t.host_slot_start(t.emit_slot(a)) + 2 * topo.prop_ps() + 2 * cut;
            prop_assert!(depart >= t.rts_close_time(a) + t.processing_slots * t.slot_ps);
            // The last SCHD of the emit slot is received before the grant's
            // frame is laid out.
            let last_rx = t.host_slot_start(t.emit_slot(a) + 1) + 4 * topo.prop_ps() + 3 * cut;
            prop_assert!(last_rx <= t.frame_build_time(t.grant_slot(a)));
            // The optimistic deadline is no earlier than any SCHD of earlier slots.
            let prev_last = t.host_slot_start(t.emit_slot(a)) + 4 * topo.prop_ps() + 3 * cut;
            prop_assert!(t.optimistic_deadline(a) >= prev_last);
        }
    }
}

fn mk_cell(id: u64, kind: CellKind, route: SourceRoute) -> Cell {
    Cell {
        id,
        kind,
        flow: 0,
        seq: 0,
        size_bytes: if kind.is_data() { 1500 } else { 64 },
        route,
        hop: 1,
        sent_at: SimTime::ZERO,
        payload: Payload::Data { slot: 0, bytes: 1500 },
    }
}

fn kind_strategy() -> impl Strategy<Value = CellKind> {
    prop_oneof![
        Just(CellKind::DataScheduled),
        Just(CellKind::DataUnscheduled),
        Just(CellKind::Rts),
        Just(CellKind::Schd),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn switches_account_for_every_cell(
        arrivals in proptest::collection::vec((0u64..200_000, kind_strategy(), 0u32..4, 4u32..8, 0u64..2), 1..60),
        dead_link in proptest::option::of(0u32..72),
    ) {
        let topo = PodTopology::build(8, 100_000_000_000, 1_000_000).unwrap();
        let mut zb = ZeroBufferSwitch::new(NodeId::Tor(0), &topo, 0);
        let mut buf = BufferedSwitch::new(NodeId::Tor(0), &topo, 0, 3000);
        let down = |l: LinkId, _t: SimTime| Some(l.0) == dead_link;
        let mut now = 0;
        for (k, (gap, kind, src, dst, up)) in arrivals.into_iter().enumerate() {
            now += gap;
            // Host-sourced cells reach tor0 from one of its hosts; either go
            // up to an Agg or toward the arbiter.
            let route = match (kind, up) {
                (CellKind::Rts, _) => topo.route_to_arbiter(HostId(src)),
                (CellKind::Schd, _) => topo.route_from_arbiter(HostId(src)),
                (_, _) => topo.route(HostId(src), HostId(dst), (k as u32) % 4).unwrap(),
            };
            let mut c = mk_cell(k as u64, kind, route.clone());
            let mut d = mk_cell(k as u64, kind, route);
            let _ = zb.on_cell(&mut c, &topo, SimTime(now), down).unwrap();
            let _ = buf.on_cell(&mut d, &topo, SimTime(now), down).unwrap();
        }
        for c in [zb.counters(), buf.counters()] {
            prop_assert_eq!(c.cells_in, c.forwarded + c.dropped());
            let by_kind: u64 = c.dropped_by_kind.iter().sum();
            prop_assert_eq!(by_kind, c.dropped());
        }
        // The zero-buffer switch never discards protected cells on its own.
        let z = zb.counters();
        let protected = z.dropped_by_kind[CellKind::DataScheduled as usize]
            + z.dropped_by_kind[CellKind::Rts as usize]
            + z.dropped_by_kind[CellKind::Schd as usize];
        prop_assert!(protected <= z.fault_losses);
    }
}
