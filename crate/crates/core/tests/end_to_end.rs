use fastpod_sim::config::{FaultSpec, RunConfig, Scheme};
use fastpod_sim::sim::{flows_for, run_to_dir, simulate};
use fastpod_sim::workload::{write_flows_csv, FlowSpec};
use fastpod_sim::{HostId, SimError, SimTime};

const T: u64 = 370_240;
const D: u64 = 120_000;
const W: u64 = 5_120;
const P: u64 = 1_000_000;

fn flow(id: u32, src: u32, dst: u32, size: u64, at: u64) -> FlowSpec {
    FlowSpec {
        id,
        src: HostId(src),
        dst: HostId(dst),
        size_bytes: size,
        arrival: SimTime(at),
    }
}

fn small(scheme: Scheme, n: usize, load: f64) -> RunConfig {
    RunConfig {
        scheme,
        n_flows: n,
        load,
        ..RunConfig::default()
    }
}

/// Every host sends a large flow to every host under another ToR at t=0.
fn dense_flows(size: u64) -> Vec<FlowSpec> {
    let mut v = Vec::new();
    for s in 0..16u32 {
        for d in 0..16u32 {
            if s / 4 != d / 4 {
                v.push(flow(v.len() as u32, s, d, size, 0));
            }
        }
    }
    v
}

#[test]
fn lone_flow_waits_for_its_grant_without_optimism() {
    let cfg = small(Scheme::FastpodNoOpt, 1, 0.5);
    let out = simulate(&cfg, vec![flow(0, 0, 5, 15_000, 0)]).unwrap();
    let r = out.records[0];
    // Announced in slot 0, granted from slot 14 on, 3+3+3+1 cells; the last
    // cell leads slot 17 behind one control width.
    assert_eq!(r.fct_ps, Some(17 * T + W + 4 * P + D));
    assert_eq!(r.ideal_fct_ps, 10 * D + 4 * P);
    assert_eq!(r.redundant_bytes, 0);
}

#[test]
fn lone_flow_finishes_optimistically() {
    let cfg = small(Scheme::Fastpod, 1, 0.5);
    let out = simulate(&cfg, vec![flow(0, 0, 5, 15_000, 0)]).unwrap();
    let r = out.records[0];
    assert_eq!(r.fct_ps, Some(3 * T + W + 4 * P + D));
    assert_eq!(r.optimistic_bytes, 15_000);
    // The run ends at the last completion, before the scheduled copies land.
    assert_eq!(r.redundant_bytes, 0);
}

#[test]
fn per_kind_latencies_are_fixed_by_the_path() {
    for cut in [0, 250_000] {
        let mut cfg = small(Scheme::FastpodNoOpt, 300, 0.7);
        cfg.cut_through_ps = cut;
        let out = simulate(&cfg, flows_for(&cfg).unwrap()).unwrap();
        let lat = &out.summary.latency;
        let only = |k: &str| {
            let s = lat[k];
            assert_eq!(s.distinct, 1, "{k} with cut-through {cut}");
            s.min_ps.unwrap()
        };
        assert_eq!(only("DATA_SCHEDULED"), 4 * P + 3 * cut + D);
        assert_eq!(only("RTS"), 2 * P + cut + 5120);
        assert_eq!(only("SCHD"), 2 * P + cut + 5120);
        assert!(out.summary.audit.pass);
    }
}

#[test]
fn reruns_are_byte_identical() {
    for scheme in Scheme::ALL {
        let cfg = small(scheme, 150, 0.6);
        let a = simulate(&cfg, flows_for(&cfg).unwrap()).unwrap().summary_json();
        let b = simulate(&cfg, flows_for(&cfg).unwrap()).unwrap().summary_json();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.seed = 2;
        let c = simulate(&other, flows_for(&other).unwrap()).unwrap().summary_json();
        assert_ne!(a, c);
    }
}

#[test]
fn flows_file_matches_generated_flows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Scheme::Fastpod, 100, 0.5);
    let flows = flows_for(&cfg).unwrap();
    let p = dir.path().join("flows.csv");
    write_flows_csv(&p, &flows).unwrap();
    let mut from_file = cfg.clone();
    from_file.flows_file = Some(p);
    assert_eq!(flows_for(&from_file).unwrap(), flows);
    let a = simulate(&cfg, flows.clone()).unwrap();
    let b = simulate(&from_file, flows_for(&from_file).unwrap()).unwrap();
    assert_eq!(a.records, b.records);
}

#[test]
fn output_directory_has_stable_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Scheme::Fastpod, 50, 0.5);
    cfg.output_root = dir.path().to_path_buf();
    cfg.trace.events = true;
    cfg.trace.occupancy = true;
    cfg.trace.alloc = true;
    let (run_dir, _) = run_to_dir(&cfg, flows_for(&cfg).unwrap()).unwrap();
    assert_eq!(run_dir, cfg.run_dir());
    let header = |f: &str| {
        let text = std::fs::read_to_string(run_dir.join(f)).unwrap();
        text.lines().next().unwrap().to_string()
    };
    assert_eq!(
        header("fct.csv"),
        "flow_id,src,dst,size_bytes,arrival_ps,completion_ps,fct_ps,ideal_fct_ps,slowdown,optimistic_bytes,redundant_bytes"
    );
    assert_eq!(header("latency.csv"), "kind,latency_ps,count,cdf");
    assert_eq!(header("occupancy.csv"), "link,start_ps,end_ps,cell_id,kind");
    assert_eq!(header("alloc.csv"), "slot,src,dst,agg,cells,demand");
    assert!(header("events.csv").split(',').count() >= 4);
    let echoed = RunConfig::from_path(&run_dir.join("config.json")).unwrap();
    assert_eq!(echoed.seed, cfg.seed);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "complete");
    assert_eq!(summary["audit"]["pass"], true);
}

#[test]
fn dead_host_uplink_is_flagged_next_slot() {
    let mut cfg = small(Scheme::Fastpod, 1, 0.5);
    cfg.run_cap_ps = Some(200 * T);
    cfg.faults = vec![FaultSpec {
        element: "h3".into(),
        at_ps: None,
        at_slot: Some(100),
    }];
    let out = simulate(&cfg, dense_flows(2_000_000)).unwrap();
    let f = &out.summary.failures;
    assert_eq!(f.len(), 1, "{f:?}");
    assert_eq!((f[0].suspect.as_str(), f[0].kind, f[0].slot), ("h3", "host", 101));
    assert_eq!(out.summary.status, "incomplete");
}

#[test]
fn dead_agg_downlink_is_localized() {
    let mut cfg = small(Scheme::FastpodNoOpt, 1, 0.5);
    cfg.run_cap_ps = Some(200 * T);
    cfg.faults = vec![FaultSpec {
        element: "agg2->tor1".into(),
        at_ps: None,
        at_slot: Some(100),
    }];
    let out = simulate(&cfg, dense_flows(2_000_000)).unwrap();
    let links: Vec<_> = out
        .summary
        .failures
        .iter()
        .filter(|d| d.kind == "link")
        .collect();
    let hit = links.iter().find(|d| d.suspect == "agg2->tor1").expect("true link suspected");
    assert!(hit.slot >= 100 && hit.slot <= 102);
    // Only links on the failed paths are ever suspected.
    for d in &links {
        assert!(d.suspect.contains("agg2"), "{d:?}");
    }
    assert!(out.summary.failures.iter().all(|d| d.kind == "link"));
}

#[test]
fn healthy_run_suspects_nothing() {
    let mut cfg = small(Scheme::Fastpod, 1, 0.5);
    cfg.run_cap_ps = Some(300 * T);
    let out = simulate(&cfg, dense_flows(500_000)).unwrap();
    assert!(out.summary.failures.is_empty());
    assert!(out.summary.host_totals.reports_sent > 0);
}

#[test]
fn guards_absorb_clock_offsets() {
    let skewed = |guard: u64, strict: bool| {
        let mut cfg = small(Scheme::FastpodNoOpt, 200, 0.8);
        cfg.clock = Some(fastpod_sim::config::ClockConfig {
            max_offset_ps: 1000,
            drift_ppm: 0.0,
            owd_correction: false,
        });
        cfg.guard_slot_ps = guard;
        cfg.guard_ctrl_ps = guard;
        cfg.strict = strict;
        simulate(&cfg, flows_for(&cfg).unwrap())
    };
    let ok = skewed(2000, true).unwrap();
    assert_eq!(ok.summary.timing.skew_bound_ps, 1000);
    assert!(ok.summary.audit.pass);
    assert_eq!(ok.summary.gap_filling.schd_outside_gap, 0);

    let loose = skewed(0, false).unwrap();
    assert!(!loose.summary.audit.pass);
    assert!(loose.summary.switch_totals.violations > 0);
    assert!(matches!(skewed(0, true), Err(SimError::ProtocolViolation { .. })));
}

#[test]
fn resync_keeps_drifting_clocks_aligned() {
    let mut cfg = small(Scheme::Fastpod, 200, 0.8);
    cfg.clock = Some(fastpod_sim::config::ClockConfig {
        max_offset_ps: 500,
        drift_ppm: 5.0,
        owd_correction: true,
    });
    let b = cfg.clock.as_ref().unwrap();
    let bound = fastpod_sim::host::skew_bound_ps(b, 0);
    cfg.guard_slot_ps = 4 * bound;
    cfg.guard_ctrl_ps = 4 * bound;
    let out = simulate(&cfg, flows_for(&cfg).unwrap()).unwrap();
    assert!(out.summary.audit.pass);
    assert_eq!(out.summary.status, "complete");
}

#[test]
fn buffered_baseline_queues() {
    let cfg = small(Scheme::FastpassMode, 400, 1.0);
    let out = simulate(&cfg, flows_for(&cfg).unwrap()).unwrap();
    let s = &out.summary;
    assert_eq!(s.status, "complete");
    assert!(s.latency["DATA_SCHEDULED"].variance_ps2 > 0.0);
    assert!(s.max_queue_bytes > 0);
    assert_eq!(s.cells_sent["DATA_UNSCHEDULED"], 0);
    assert_eq!(s.gap_filling.schd_checked, 0);
}

#[test]
fn invalid_inputs_are_rejected() {
    let cfg = small(Scheme::Fastpod, 1, 0.5);
    assert!(simulate(&cfg, vec![flow(0, 2, 2, 100, 0)]).is_err());
    assert!(simulate(&cfg, vec![flow(0, 0, 16, 100, 0)]).is_err());
    assert!(simulate(&cfg, vec![flow(1, 0, 1, 100, 0)]).is_err());
    assert!(simulate(&cfg, vec![flow(0, 0, 1, 100, 5), flow(1, 0, 1, 100, 4)]).is_err());
    let mut bad = cfg.clone();
    bad.faults = vec![FaultSpec {
        element: "agg9->tor1".into(),
        at_ps: Some(0),
        at_slot: None,
    }];
    assert!(simulate(&bad, vec![flow(0, 0, 1, 100, 0)]).is_err());
}
