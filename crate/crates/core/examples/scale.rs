//! Prints stretch, state and cost for one generated world.
//!
//! cargo run --release -p uip-core --example scale -- pa 1000 1

use std::time::Instant;

use uip_core::scenario::{run, ScenarioConfig, TopologyInput, Workload};
use uip_core::underlay::{TopologyKind, TopologySpec};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let kind = args.first().map(String::as_str).unwrap_or("pa");
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let topo = match kind {
        "pa" => TopologyKind::PreferentialAttachment { n, m: 2 },
        "gnp" => TopologyKind::RandomGnp { n, p: 6.0 / (n as f64 - 1.0), connected: true },
        "nat" => TopologyKind::NatClusters { n, clusters: 4, gateways: 4 },
        other => panic!("unknown kind {other}"),
    };
    let cfg = ScenarioConfig {
        topology: TopologyInput::Generated(TopologySpec::new(topo, seed)),
        protocol: Default::default(),
        workload: Workload { frozen_chunks: 8, ..Workload::default() },
        seed,
        output: "unused".into(),
    };
    let t = Instant::now();
    let out = run(&cfg).expect("run");
    let r = &out.report;
    println!("elapsed {:?} timing {:?}", t.elapsed(), out.timing);
    println!("stretch {:?}", r.stretch_summary);
    println!("stretch without upgrade {:?}", r.stretch_summary_without_upgrade);
    println!("state {:?}", r.state_summary);
    println!(
        "overflows {} maintenance/node/round {:.1} failures {}",
        r.bucket_overflows,
        r.maintenance_messages_per_node_round,
        r.failures.len()
    );
    for f in r.failures.iter().take(8) {
        println!("  {f}");
    }
    let p = uip_core::scenario::prepare(&cfg).unwrap();
    let a = uip_core::routing::audit(&p.world);
    println!("audit violations {} deficit {}", a.violations.len(), a.redundancy_deficit);
    for v in a.violations.iter().take(12) { println!("  {v:?}"); }
    for (p, c) in &r.counters.by_phase {
        println!("{p:?}: {c:?}");
    }
}
