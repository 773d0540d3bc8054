//! Statistical checks of the flow generator at 10^5 samples.

use fastpod_sim::workload::{generate, realized_load, SizeDistribution};
use fastpod_sim::PodTopology;

const N: usize = 100_000;

fn topo() -> PodTopology {
    PodTopology::build(8, 100_000_000_000, 1_000_000).unwrap()
}

#[test]
fn fixed_size_inter_arrival_mean() {
    let t = topo();
    let size = 15_000u64;
    let load = 0.6;
    let flows = generate(11, load, N, &t, &SizeDistribution::fixed(size)).unwrap();
    // Expected gap in ps: S_bits / (L * hosts * rate), independent oracle.
    let expected = (size * 8) as f64 / (load * 16.0 * 100e9) * 1e12;
    let measured = flows.last().unwrap().arrival.0 as f64 / N as f64;
    let err = (measured - expected).abs() / expected;
    assert!(err < 0.02, "mean gap {measured} vs {expected}");
}

#[test]
fn offered_load_converges() {
    let t = topo();
    let d = SizeDistribution::new(vec![(1000.0, 0.0), (10_000.0, 0.5), (100_000.0, 1.0)]).unwrap();
    for load in [0.3, 0.9] {
        let flows = generate(5, load, N, &t, &d).unwrap();
        let got = realized_load(&flows, &t);
        assert!((got - load).abs() / load < 0.03, "load {got} vs {load}");
    }
}

#[test]
fn shipped_distribution_offered_load() {
    // Heavy tail: the sample mean converges slowly, so only a loose check at
    // the same sample count.
    let t = topo();
    let flows = generate(2, 0.5, N, &t, &SizeDistribution::websearch()).unwrap();
    let got = realized_load(&flows, &t);
    assert!((got - 0.5).abs() < 0.05, "{got}");
}

#[test]
fn size_samples_match_cdf() {
    let t = topo();
    let d = SizeDistribution::websearch();
    let flows = generate(9, 0.5, N, &t, &d).unwrap();
    let mut sizes: Vec<u64> = flows.iter().map(|f| f.size_bytes).collect();
    sizes.sort_unstable();
    let mut worst = 0.0f64;
    for (i, &s) in sizes.iter().enumerate() {
        // Empirical CDF just after s, and just before it.
        let hi = (i + 1) as f64 / N as f64;
        let lo = i as f64 / N as f64;
        let f = d.cdf(s as f64);
        worst = worst.max((hi - f).abs()).max((f - lo).abs());
    }
    assert!(worst < 0.02, "max CDF deviation {worst}");
}

#[test]
fn endpoints_uniform() {
    let t = topo();
    let flows = generate(4, 0.5, N, &t, &SizeDistribution::fixed(1500)).unwrap();
    let mut src = [0usize; 16];
    let mut dst = [0usize; 16];
    for f in &flows {
        assert_ne!(f.src, f.dst);
        src[f.src.idx()] += 1;
        dst[f.dst.idx()] += 1;
    }
    let e = N as f64 / 16.0;
    for c in src.iter().chain(dst.iter()) {
        assert!((*c as f64 - e).abs() / e < 0.05);
    }
}
