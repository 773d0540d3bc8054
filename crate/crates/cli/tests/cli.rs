use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fastpod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fastpod"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn rows(path: &Path) -> (Vec<String>, Vec<csv::StringRecord>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    (header, r.records().map(Result::unwrap).collect())
}

fn run_small(out: &Path, extra: &[&str]) -> (Output, PathBuf) {
    let root = format!("output_root={}", out.display());
    let mut args = vec!["run", "--set", "n_flows=40", "--set", "load=0.6", "--set", &root];
    for e in extra {
        args.extend(["--set", e]);
    }
    let o = fastpod(&args);
    let dir = PathBuf::from(stdout(&o).lines().next().unwrap_or_default());
    (o, dir)
}

#[test]
fn run_writes_a_complete_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, dir) = run_small(tmp.path(), &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("status=complete"));
    for f in ["config.json", "summary.json", "fct.csv", "latency.csv"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let (_, fct) = rows(&dir.join("fct.csv"));
    assert_eq!(fct.len(), 40);
}

#[test]
fn audit_passes_on_a_recorded_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, dir) = run_small(tmp.path(), &["trace.occupancy=true"]);
    assert!(o.status.success());
    let a = fastpod(&["audit", "--trace", dir.to_str().unwrap()]);
    assert!(a.status.success(), "{}", stdout(&a));
    assert!(stdout(&a).contains("\"pass\": true"));
}

#[test]
fn audit_flags_overlapping_transmissions() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, dir) = run_small(tmp.path(), &["trace.occupancy=true"]);
    let path = dir.join("occupancy.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    // Duplicating a transmission makes it overlap itself.
    let dup = text.lines().nth(1).unwrap().to_string();
    std::fs::write(&path, format!("{text}{dup}\n")).unwrap();
    let a = fastpod(&["audit", "--trace", path.to_str().unwrap()]);
    assert_eq!(a.status.code(), Some(1), "{}", stdout(&a));
}

#[test]
fn bad_override_is_an_error() {
    let o = fastpod(&["run", "--set", "no_such_key=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn sweep_aggregates_every_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("agg");
    let o = fastpod(&[
        "sweep",
        "--set",
        "n_flows=60",
        "--loads",
        "0.3,0.8",
        "--seeds",
        "1,2",
        "--out",
        out.to_str().unwrap(),
        "--jobs",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cells = 3 * 2 * 2;

    let (h, r) = rows(&out.join("slowdown.csv"));
    assert_eq!(
        h,
        ["scheme", "load", "seed", "size_class", "count", "p50", "p99", "mean_slowdown", "mean_fct_ps"]
    );
    assert_eq!(r.len(), cells * 3);

    let (h, r) = rows(&out.join("goodput.csv"));
    assert_eq!(
        h,
        ["scheme", "load", "seed", "offered_load", "goodput", "makespan_ps", "completed", "n_flows"]
    );
    assert_eq!(r.len(), cells);
    // Schemes at the same load and seed see the same flows.
    let offered: std::collections::BTreeSet<(String, String, String)> = r
        .iter()
        .map(|x| (x[1].to_string(), x[2].to_string(), x[3].to_string()))
        .collect();
    assert_eq!(offered.len(), 4);

    let (h, r) = rows(&out.join("latency.csv"));
    assert_eq!(h, ["scheme", "load", "seed", "kind", "latency_ps", "count", "cdf"]);
    assert!(!r.is_empty());

    let (h, r) = rows(&out.join("overhead.csv"));
    assert_eq!(
        h,
        [
            "scheme",
            "load",
            "seed",
            "unique_bytes",
            "redundant_bytes",
            "optimistic_bytes",
            "control_bytes",
            "dropped_unscheduled"
        ]
    );
    assert_eq!(r.len(), cells);

    let (_, r) = rows(&out.join("sweep_status.csv"));
    assert!(r.iter().all(|x| &x[4] == "complete"));
}
