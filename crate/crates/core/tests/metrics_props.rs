use std::collections::HashMap;

use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};
use proptest::prelude::*;

use uip_core::metrics::{sample_pairs, state_stats, Summary};
use uip_core::routing::ProtocolConfig;
use uip_core::scenario::{self, ScenarioConfig, TopologyInput, Workload};
use uip_core::underlay::{TopologyKind, TopologySpec};

fn config(kind: TopologyKind, seed: u64, pairs: usize) -> ScenarioConfig {
    ScenarioConfig {
        topology: TopologyInput::Generated(TopologySpec::new(kind, seed)),
        protocol: ProtocolConfig { id_bits: 16, direct_upgrade: false, ..ProtocolConfig::default() },
        workload: Workload { stretch_pairs: pairs, ..Workload::default() },
        seed,
        output: "unused".into(),
    }
}

fn kind() -> impl Strategy<Value = TopologyKind> {
    prop_oneof![
        (3usize..50, 0.08f64..0.3).prop_map(|(n, p)| TopologyKind::RandomGnp { n, p, connected: true }),
        (3usize..50, 1usize..3).prop_map(|(n, m)| TopologyKind::PreferentialAttachment { n, m }),
    ]
}

/// Smallest value with at least 95% of the sample at or below it.
fn p95(v: &[f64]) -> f64 {
    let n = v.len();
    *v.iter()
        .filter(|&&x| v.iter().filter(|&&y| y <= x).count() * 20 >= n * 19)
        .min_by(|a, b| a.total_cmp(b))
        .unwrap()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let mid = s.len() / 2;
    if s.len() % 2 == 0 {
        (s[mid - 1] + s[mid]) / 2.0
    } else {
        s[mid]
    }
}

fn check_summary(s: &Summary, v: &[f64]) -> Result<(), TestCaseError> {
    prop_assert_eq!(s.count, v.len());
    if v.is_empty() {
        return Ok(());
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    prop_assert!((s.mean - mean).abs() < 1e-9);
    prop_assert_eq!(s.median, median(v));
    prop_assert_eq!(s.p95, p95(v));
    prop_assert_eq!(s.max, v.iter().copied().fold(f64::MIN, f64::max));
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn samples_agree_with_an_independent_shortest_path(kind in kind(), seed in 0u64..1000) {
        let cfg = config(kind, seed, 60);
        let out = scenario::run(&cfg).unwrap();
        let snap = out.world.underlay().snapshot();
        let mut g = UnGraph::<(), ()>::default();
        let ix: Vec<_> = snap.nodes.iter().map(|_| g.add_node(())).collect();
        for c in &snap.channels {
            g.add_edge(ix[c.a as usize], ix[c.b as usize], ());
        }
        let hex: HashMap<String, usize> =
            out.world.active_nodes().into_iter().map(|h| (out.world.id(h).to_hex(), h.index())).collect();
        for s in &out.report.stretch_samples {
            let (a, b) = (hex[&s.src], hex[&s.dst]);
            let truth = dijkstra(&g, NodeIndex::new(a), Some(NodeIndex::new(b)), |_| 1u32)[&NodeIndex::new(b)];
            prop_assert_eq!(s.oracle_hops, truth);
            prop_assert!(s.uip_hops >= s.oracle_hops);
            prop_assert!(s.stretch >= 1.0);
            prop_assert!((s.stretch - s.uip_hops as f64 / s.oracle_hops as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn report_aggregates_match_their_rows(kind in kind(), seed in 0u64..1000) {
        let out = scenario::run(&config(kind, seed, 80)).unwrap();
        let r = &out.report;
        let stretch: Vec<f64> = r.stretch_samples.iter().map(|s| s.stretch).collect();
        check_summary(&r.stretch_summary, &stretch)?;
        let entries: Vec<f64> = r.state.iter().map(|n| n.entries_total as f64).collect();
        check_summary(&r.state_summary.entries_total, &entries)?;
        let buckets: Vec<f64> = r.state.iter().map(|n| n.nonempty_buckets as f64).collect();
        check_summary(&r.state_summary.nonempty_buckets, &buckets)?;
        for n in &r.state {
            prop_assert_eq!(n.entries_total, n.entries_physical + n.entries_virtual);
        }
        prop_assert_eq!(r.state_summary.nodes, out.world.active_nodes().len());
        prop_assert_eq!(out.exit_code() == 0, r.failures.is_empty());
    }

    #[test]
    fn every_frame_is_counted_once(kind in kind(), seed in 0u64..1000) {
        let out = scenario::run(&config(kind, seed, 40)).unwrap();
        prop_assert_eq!(out.world.counters().total_frames(), out.world.underlay().frames_delivered());
    }

    #[test]
    fn sampled_pairs_are_distinct_ordered_pairs(n in 0usize..40, count in 0usize..300, seed in any::<u64>()) {
        let nodes: Vec<_> = (0..n as u32).map(uip_core::underlay::NodeHandle).collect();
        let pairs = sample_pairs(&nodes, count, seed);
        prop_assert_eq!(&pairs, &sample_pairs(&nodes, count, seed));
        for &(a, b) in &pairs {
            prop_assert!(a != b);
            prop_assert!(a.index() < n && b.index() < n);
        }
        prop_assert_eq!(pairs.len(), count.min(n * n.saturating_sub(1)));
        let mut uniq = pairs.clone();
        uniq.dedup();
        prop_assert_eq!(uniq.len(), pairs.len());
    }

    #[test]
    fn state_census_is_a_pure_read(kind in kind(), seed in 0u64..1000) {
        let w = scenario::prepare(&config(kind, seed, 0)).unwrap().world;
        let a = state_stats(&w);
        prop_assert_eq!(&a, &state_stats(&w));
        for (row, h) in a.nodes.iter().zip(w.active_nodes()) {
            prop_assert_eq!(row.entries_total, w.table(h).len());
        }
    }
}
