//! Scenario files and the run pipeline behind them.
//!
//! A run builds the underlay, derives one identity per node, joins every
//! node not scheduled by a `node-join` event at tick 0, plays the event
//! list with a repair round at every multiple of `repair_period`, runs the
//! closing repair rounds and finally measures.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::{generate_identity, NodeId};
use crate::metrics::{
    export_report, measure_stretch, measure_stretch_frozen, sample_pairs, state_stats, ExperimentReport,
    ExportFormat, MetricsError, StretchRun,
};
use crate::routing::{Phase, ProtocolConfig, RoutingError, World};
use crate::underlay::{
    build_topology, order_events, EventAction, NodeHandle, TopologySpec, Underlay, UnderlaySnapshot, WorldEvent,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub topology: TopologyInput,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub workload: Workload,
    pub seed: u64,
    /// Where reports go; not part of the report's config echo.
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("uipsim-out")
}

/// A generated topology, or `{"kind": "file", "path": ...}` naming an
/// underlay snapshot.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum TopologyInput {
    File(TopologyFile),
    Generated(TopologySpec),
}

// Dispatch on `kind` by hand so that errors from the chosen shape survive.
impl<'de> Deserialize<'de> for TopologyInput {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let v = serde_json::Value::deserialize(d)?;
        if v.get("kind").and_then(|k| k.as_str()) == Some("file") {
            serde_json::from_value(v).map(TopologyInput::File).map_err(D::Error::custom)
        } else {
            serde_json::from_value(v).map(TopologyInput::Generated).map_err(D::Error::custom)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyFile {
    kind: FileKind,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum FileKind {
    File,
}

impl TopologyFile {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        TopologyFile { kind: FileKind::File, path: path.into() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JoinOrder {
    #[default]
    Sequential,
    SeededShuffle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Workload {
    pub join_order: JoinOrder,
    pub events: Vec<WorldEvent>,
    pub stretch_pairs: usize,
    pub repair_rounds: u32,
    /// An oracle-unreachable pair counts as a failure.
    pub assert_connected: bool,
    /// Sample on this many private copies of the world in parallel; 0 keeps
    /// sampling sequential on the world itself.
    pub frozen_chunks: usize,
}

impl Default for Workload {
    fn default() -> Self {
        Workload {
            join_order: JoinOrder::Sequential,
            events: Vec::new(),
            stretch_pairs: 2000,
            repair_rounds: 1,
            assert_connected: true,
            frozen_chunks: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{0}")]
    Config(String),
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("protocol failure: {0}")]
    Protocol(#[from] RoutingError),
}

impl ScenarioError {
    /// 2 for configuration errors, 3 for I/O, 1 for protocol failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Config(_) => 2,
            ScenarioError::Io { .. } => 3,
            ScenarioError::Protocol(_) => 1,
        }
    }
}

impl From<MetricsError> for ScenarioError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Io { path, source } => ScenarioError::Io { path, source },
            other => ScenarioError::Io { path: PathBuf::new(), source: std::io::Error::other(other.to_string()) },
        }
    }
}

impl ScenarioConfig {
    /// Strict parse; errors name the offending key.
    pub fn from_json(s: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." || path.is_empty() {
                ScenarioError::Config(inner.to_string())
            } else {
                ScenarioError::Config(format!("{path}: {inner}"))
            }
        })?;
        Ok(cfg)
    }

    /// Reads and validates a config file. A relative topology path is taken
    /// relative to the file.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.into(), source })?;
        let mut cfg = Self::from_json(&text)?;
        if let TopologyInput::File(f) = &mut cfg.topology {
            if f.path.is_relative() {
                if let Some(dir) = path.parent() {
                    f.path = dir.join(&f.path);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks that the parser cannot express. Does not read the
    /// topology file.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Config(m));
        if let TopologyInput::Generated(spec) = &self.topology {
            if let Err(e) = spec.validate() {
                let m = e.to_string();
                let m = m.strip_prefix("invalid topology configuration: ").unwrap_or(&m);
                return bad(format!("topology.{m}"));
            }
        }
        self.protocol.validate().map_err(ScenarioError::Config)?;
        if let Some(n) = self.generated_node_count() {
            self.validate_events(n)?;
        }
        Ok(())
    }

    fn generated_node_count(&self) -> Option<usize> {
        match &self.topology {
            TopologyInput::Generated(spec) => Some(spec.kind.node_count()),
            TopologyInput::File(_) => None,
        }
    }

    fn validate_events(&self, n: usize) -> Result<(), ScenarioError> {
        for (i, ev) in self.workload.events.iter().enumerate() {
            let check = |key: &str, v: u32| {
                if v as usize >= n {
                    Err(ScenarioError::Config(format!("workload.events[{i}].{key}: node {v} outside 0..{n}")))
                } else {
                    Ok(())
                }
            };
            match &ev.action {
                EventAction::NodeJoin { node } | EventAction::NodeFail { node } => check("node", *node)?,
                EventAction::ChannelFail { a, b } => {
                    check("a", *a)?;
                    check("b", *b)?;
                }
                EventAction::Partition { groups } => {
                    for g in groups {
                        for &v in g {
                            check("groups", v)?;
                        }
                    }
                }
                EventAction::Heal => {}
            }
        }
        Ok(())
    }

    /// The config as echoed into reports.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config is plain data");
        if let Some(m) = v.as_object_mut() {
            m.remove("output");
        }
        v
    }
}

/// Seed of node `i`'s key pair.
pub fn identity_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (i as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// One identity per node. A collision draws the next key for the later
/// node.
pub fn derive_ids(seed: u64, n: usize, bits: u16) -> Result<Vec<NodeId>, ScenarioError> {
    let mut seen = BTreeSet::new();
    let mut ids = Vec::with_capacity(n);
    for i in 0..n {
        let mut s = identity_seed(seed, i);
        loop {
            let kp = generate_identity(s, bits).map_err(|e| ScenarioError::Config(format!("protocol.id_bits: {e}")))?;
            if seen.insert(kp.node_id) {
                ids.push(kp.node_id);
                break;
            }
            s = s.wrapping_add(0x5851_F42D_4C95_7F2D);
        }
    }
    Ok(ids)
}

pub fn build_underlay(cfg: &ScenarioConfig) -> Result<Underlay, ScenarioError> {
    match &cfg.topology {
        TopologyInput::Generated(spec) => build_topology(spec).map_err(|e| ScenarioError::Config(format!("topology: {e}"))),
        TopologyInput::File(f) => {
            let text =
                fs::read_to_string(&f.path).map_err(|source| ScenarioError::Io { path: f.path.clone(), source })?;
            let snap = UnderlaySnapshot::from_json(&text)
                .map_err(|e| ScenarioError::Config(format!("topology.path: {e}")))?;
            Underlay::from_snapshot(&snap).map_err(|e| ScenarioError::Config(format!("topology.path: {e}")))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub build_ms: u128,
    pub join_ms: u128,
    pub events_ms: u128,
    pub repair_ms: u128,
    pub measure_ms: u128,
    pub total_ms: u128,
}

/// A world after joins, events and closing repairs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub world: World,
    pub repair_rounds_run: u64,
    pub timing: Timing,
}

/// Builds the world and runs everything before measurement.
pub fn prepare(cfg: &ScenarioConfig) -> Result<Prepared, ScenarioError> {
    cfg.validate()?;
    let t0 = Instant::now();
    let underlay = build_underlay(cfg)?;
    cfg.validate_events(underlay.len())?;
    let ids = derive_ids(cfg.seed, underlay.len(), cfg.protocol.id_bits)?;
    let mut world = World::new(underlay, ids, cfg.protocol.clone(), cfg.seed).map_err(|e| match e {
        RoutingError::Config(m) => ScenarioError::Config(m),
        other => ScenarioError::Protocol(other),
    })?;
    let mut timing = Timing { build_ms: t0.elapsed().as_millis(), ..Timing::default() };

    let t = Instant::now();
    world.set_phase(Phase::Join);
    let late: BTreeSet<u32> = cfg
        .workload
        .events
        .iter()
        .filter_map(|e| match e.action {
            EventAction::NodeJoin { node } => Some(node),
            _ => None,
        })
        .collect();
    let mut order: Vec<NodeHandle> = world.underlay().handles().filter(|h| !late.contains(&h.0)).collect();
    if cfg.workload.join_order == JoinOrder::SeededShuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6A6F_696E));
    }
    for h in attached_order(world.underlay(), &order) {
        world.join(h, None)?;
    }
    timing.join_ms = t.elapsed().as_millis();

    let t = Instant::now();
    let period = cfg.protocol.repair_period;
    let mut rounds = 0u64;
    let mut events = cfg.workload.events.clone();
    order_events(&mut events);
    let mut next_repair = period;
    for ev in &events {
        while next_repair <= ev.at {
            world.set_tick(next_repair);
            world.set_phase(Phase::Repair);
            world.repair_round();
            rounds += 1;
            next_repair += period;
        }
        world.set_phase(Phase::Events);
        world.apply_event(ev)?;
    }
    timing.events_ms = t.elapsed().as_millis();

    let t = Instant::now();
    world.set_phase(Phase::Repair);
    for _ in 0..cfg.workload.repair_rounds {
        world.set_tick(next_repair);
        world.repair_round();
        rounds += 1;
        next_repair += period;
    }
    timing.repair_ms = t.elapsed().as_millis();
    timing.total_ms = t0.elapsed().as_millis();
    Ok(Prepared { world, repair_rounds_run: rounds, timing })
}

/// `order` rearranged so that every node but the first of each component
/// has a physical neighbor that joined before it. Among nodes that qualify
/// the earliest in `order` goes first.
pub fn attached_order(u: &Underlay, order: &[NodeHandle]) -> Vec<NodeHandle> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    let mut pos = vec![usize::MAX; u.len()];
    for (i, h) in order.iter().enumerate() {
        if u.is_alive(*h) {
            pos[h.index()] = i;
        }
    }
    let mut done = vec![false; u.len()];
    let mut ready = BinaryHeap::new();
    let mut out = Vec::with_capacity(order.len());
    let mut next = 0;
    loop {
        let h = match ready.pop() {
            Some(Reverse((_, h))) => h,
            None => {
                while next < order.len() && (done[order[next].index()] || pos[order[next].index()] == usize::MAX) {
                    next += 1;
                }
                match order.get(next) {
                    Some(&h) => h,
                    None => break,
                }
            }
        };
        if done[h.index()] {
            continue;
        }
        done[h.index()] = true;
        out.push(h);
        for m in u.up_neighbors(h) {
            if !done[m.index()] && pos[m.index()] != usize::MAX {
                ready.push(Reverse((pos[m.index()], m)));
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: ExperimentReport,
    pub timing: Timing,
    pub world: World,
}

impl RunOutcome {
    /// 0 when the report lists no failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.report.failures.is_empty() {
            0
        } else {
            1
        }
    }
}

fn sample(world: &mut World, cfg: &Workload, pairs: &[(NodeHandle, NodeHandle)]) -> StretchRun {
    if cfg.frozen_chunks > 0 {
        measure_stretch_frozen(world, pairs, cfg.assert_connected, cfg.frozen_chunks)
    } else {
        measure_stretch(world, pairs, cfg.assert_connected)
    }
}

/// The whole pipeline, without touching the output directory.
pub fn run(cfg: &ScenarioConfig) -> Result<RunOutcome, ScenarioError> {
    let start = Instant::now();
    let Prepared { mut world, repair_rounds_run, mut timing } = prepare(cfg)?;

    let t = Instant::now();
    world.set_phase(Phase::Measure);
    let state = state_stats(&world);
    let overflows = world.overflow_count();
    let repair_messages = world.counters().phase_messages(Phase::Repair);
    let active = world.active_nodes();
    let pairs = sample_pairs(&active, cfg.workload.stretch_pairs, cfg.seed ^ 0x7061_6972);

    let mut plain = world.clone();
    plain.set_direct_upgrade(false);
    let without = sample(&mut plain, &cfg.workload, &pairs);
    let with = sample(&mut world, &cfg.workload, &pairs);
    timing.measure_ms = t.elapsed().as_millis();

    let mut failures: Vec<String> =
        with.failures.iter().map(|f| format!("{} -> {}: {}", f.src, f.dst, f.reason)).collect();
    failures.extend(
        without.failures.iter().map(|f| format!("{} -> {} (without upgrade): {}", f.src, f.dst, f.reason)),
    );
    let node_rounds = active.len() as u64 * repair_rounds_run;
    let report = ExperimentReport {
        config: cfg.echo(),
        seed: cfg.seed,
        counters: world.counters().clone(),
        maintenance_messages_per_node_round: if node_rounds == 0 {
            0.0
        } else {
            repair_messages as f64 / node_rounds as f64
        },
        stretch_summary: with.summary(),
        stretch_summary_without_upgrade: without.summary(),
        state_summary: state.summary,
        bucket_overflows: overflows,
        failures,
        stretch_samples: with.samples,
        state: state.nodes,
    };
    timing.total_ms = start.elapsed().as_millis();
    Ok(RunOutcome { report, timing, world })
}

pub const TIMING_JSON: &str = "timing.json";

/// Writes the CSVs, `report.json` and `timing.json` into `dest`.
pub fn write_outputs(outcome: &RunOutcome, dest: &Path) -> Result<Vec<PathBuf>, ScenarioError> {
    let mut files = export_report(&outcome.report, ExportFormat::Csv, dest)?;
    files.extend(export_report(&outcome.report, ExportFormat::Json, dest)?);
    let p = dest.join(TIMING_JSON);
    let text = serde_json::to_string_pretty(&outcome.timing).expect("timing is plain data") + "\n";
    fs::write(&p, text).map_err(|source| ScenarioError::Io { path: p.clone(), source })?;
    files.push(p);
    Ok(files)
}
