//! Stretch against the underlay oracle, table census and report files.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::routing::{MessageCounters, SearchOutcome, World};
use crate::underlay::{Distance, NodeHandle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StretchSample {
    #[serde(rename = "src_id_hex")]
    pub src: String,
    #[serde(rename = "dst_id_hex")]
    pub dst: String,
    pub oracle_hops: u32,
    pub uip_hops: u32,
    pub stretch: f64,
    pub search_steps: usize,
    pub search_messages: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairFailure {
    pub src: String,
    pub dst: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StretchRun {
    pub samples: Vec<StretchSample>,
    pub failures: Vec<PairFailure>,
    /// Pairs the oracle could not connect; only counted, never sampled.
    pub unreachable: usize,
}

impl StretchRun {
    pub fn summary(&self) -> Summary {
        Summary::of(self.samples.iter().map(|s| s.stretch))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Summary {
        let mut v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Summary::default();
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Summary {
            count: n,
            mean: v.iter().sum::<f64>() / n as f64,
            median,
            p95: v[rank - 1],
            max: v[n - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeState {
    pub node_id_hex: String,
    pub entries_total: usize,
    pub entries_physical: usize,
    pub entries_virtual: usize,
    pub nonempty_buckets: usize,
    pub max_virtual_depth: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub nodes: usize,
    pub entries_total: Summary,
    pub nonempty_buckets: Summary,
    pub mean_physical: f64,
    pub mean_virtual: f64,
    pub max_virtual_depth: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub nodes: Vec<NodeState>,
    pub summary: StateSummary,
}

impl StateSnapshot {
    pub fn from_rows(nodes: Vec<NodeState>) -> Self {
        let n = nodes.len();
        let mean = |f: fn(&NodeState) -> usize| {
            if n == 0 {
                0.0
            } else {
                nodes.iter().map(f).sum::<usize>() as f64 / n as f64
            }
        };
        let summary = StateSummary {
            nodes: n,
            entries_total: Summary::of(nodes.iter().map(|r| r.entries_total as f64)),
            nonempty_buckets: Summary::of(nodes.iter().map(|r| r.nonempty_buckets as f64)),
            mean_physical: mean(|r| r.entries_physical),
            mean_virtual: mean(|r| r.entries_virtual),
            max_virtual_depth: nodes.iter().map(|r| r.max_virtual_depth).max().unwrap_or(0),
        };
        StateSnapshot { nodes, summary }
    }
}

/// Exact census of every active node's table.
pub fn state_stats(world: &World) -> StateSnapshot {
    let rows = world
        .active_nodes()
        .into_iter()
        .map(|h| {
            let t = world.table(h);
            let mut physical = 0;
            let mut depth = 0;
            for e in t.iter() {
                let rec = world.links().get(e.link).expect("entry without link");
                if rec.is_physical() {
                    physical += 1;
                } else {
                    depth = depth.max(rec.depth);
                }
            }
            NodeState {
                node_id_hex: world.id(h).to_hex(),
                entries_total: t.len(),
                entries_physical: physical,
                entries_virtual: t.len() - physical,
                nonempty_buckets: t.nonempty_buckets(),
                max_virtual_depth: depth,
            }
        })
        .collect();
    StateSnapshot::from_rows(rows)
}

/// `count` distinct ordered pairs of `nodes`, uniformly; every pair when
/// `count` reaches `n(n-1)`.
pub fn sample_pairs(nodes: &[NodeHandle], count: usize, seed: u64) -> Vec<(NodeHandle, NodeHandle)> {
    let n = nodes.len();
    let total = n * n.saturating_sub(1);
    if total == 0 || count == 0 {
        return Vec::new();
    }
    let pick = |i: usize| {
        let a = i / (n - 1);
        let mut b = i % (n - 1);
        if b >= a {
            b += 1;
        }
        (nodes[a], nodes[b])
    };
    if count >= total {
        return (0..total).map(pick).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, total, count).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(pick).collect()
}

/// Searches, then sends one data packet, for each pair. The oracle distance
/// is taken after the search so that any direct channel it opened counts.
///
/// With `expect_connected`, a pair the oracle cannot connect is a failure
/// rather than merely counted.
pub fn measure_stretch(world: &mut World, pairs: &[(NodeHandle, NodeHandle)], expect_connected: bool) -> StretchRun {
    let mut run = StretchRun::default();
    for &(a, b) in pairs {
        measure_pair(world, a, b, expect_connected, &mut run);
    }
    run
}

fn measure_pair(world: &mut World, a: NodeHandle, b: NodeHandle, expect_connected: bool, run: &mut StretchRun) {
    let (src, dst) = (*world.id(a), *world.id(b));
    let fail = |run: &mut StretchRun, reason: String| {
        run.failures.push(PairFailure { src: src.to_hex(), dst: dst.to_hex(), reason })
    };
    let result = world.search(a, &dst);
    let oracle = world.underlay().shortest_path_len(a, b);
    let hops = match oracle {
        Distance::Hops(h) => h,
        Distance::Unreachable => {
            if expect_connected {
                fail(run, "oracle reports the pair unreachable".into());
            } else {
                run.unreachable += 1;
            }
            return;
        }
    };
    let trace = match result {
        Ok(r) if r.trace.outcome == SearchOutcome::Found => r.trace,
        Ok(_) => return fail(run, "search found nothing".into()),
        Err(e) => return fail(run, format!("search failed: {e}")),
    };
    match world.forward_packet(a, &dst, &[]) {
        Ok(out) => run.samples.push(StretchSample {
            src: src.to_hex(),
            dst: dst.to_hex(),
            oracle_hops: hops,
            uip_hops: out.hops,
            stretch: out.hops as f64 / hops as f64,
            search_steps: trace.steps.len(),
            search_messages: trace.messages,
        }),
        Err(e) => fail(run, format!("delivery failed: {e}")),
    }
}

/// Like [`measure_stretch`], but each of `chunks` slices of `pairs` runs on
/// its own copy of the world, so what a search adopts stays private to its
/// slice and the shared world is left untouched. Results depend on
/// `chunks`, not on how many threads execute them.
pub fn measure_stretch_frozen(
    world: &World,
    pairs: &[(NodeHandle, NodeHandle)],
    expect_connected: bool,
    chunks: usize,
) -> StretchRun {
    let size = pairs.len().div_ceil(chunks.max(1)).max(1);
    let parts: Vec<StretchRun> = std::thread::scope(|s| {
        let handles: Vec<_> = pairs
            .chunks(size)
            .map(|part| {
                let mut w = world.clone();
                s.spawn(move || measure_stretch(&mut w, part, expect_connected))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sampling thread panicked")).collect()
    });
    let mut run = StretchRun::default();
    for p in parts {
        run.samples.extend(p.samples);
        run.failures.extend(p.failures);
        run.unreachable += p.unreachable;
    }
    run
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: serde_json::Value,
    pub seed: u64,
    pub counters: MessageCounters,
    /// Mean messages per active node per repair round.
    pub maintenance_messages_per_node_round: f64,
    pub stretch_summary: Summary,
    /// Same pairs, measured on a copy of the world with direct upgrades off.
    pub stretch_summary_without_upgrade: Summary,
    pub state_summary: StateSummary,
    pub bucket_overflows: u64,
    pub failures: Vec<String>,
    #[serde(skip)]
    pub stretch_samples: Vec<StretchSample>,
    #[serde(skip)]
    pub state: Vec<NodeState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot encode {path}: {source}")]
    Encode { path: PathBuf, source: Box<dyn std::error::Error + Send + Sync> },
}

pub const STRETCH_CSV: &str = "stretch.csv";
pub const STATE_CSV: &str = "state.csv";
pub const REPORT_JSON: &str = "report.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MetricsError + '_ {
    move |source| MetricsError::Io { path: path.to_path_buf(), source }
}

fn csv_bytes<T: Serialize>(rows: &[T], header: &[&str], path: &Path) -> Result<Vec<u8>, MetricsError> {
    let enc = |e: csv::Error| MetricsError::Encode { path: path.to_path_buf(), source: Box::new(e) };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(enc)?;
    for r in rows {
        w.serialize(r).map_err(enc)?;
    }
    w.into_inner().map_err(|e| MetricsError::Encode { path: path.to_path_buf(), source: Box::new(e.into_error()) })
}

pub const STRETCH_COLUMNS: [&str; 7] =
    ["src_id_hex", "dst_id_hex", "oracle_hops", "uip_hops", "stretch", "search_steps", "search_messages"];
pub const STATE_COLUMNS: [&str; 6] = [
    "node_id_hex",
    "entries_total",
    "entries_physical",
    "entries_virtual",
    "nonempty_buckets",
    "max_virtual_depth",
];

pub fn report_json(report: &ExperimentReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report is plain data");
    s.push('\n');
    s
}

/// Writes the report into directory `dest`: `stretch.csv` and `state.csv`
/// for CSV, `report.json` for JSON. Returns the files written.
pub fn export_report(report: &ExperimentReport, format: ExportFormat, dest: &Path) -> Result<Vec<PathBuf>, MetricsError> {
    fs::create_dir_all(dest).map_err(io_err(dest))?;
    let mut written = Vec::new();
    match format {
        ExportFormat::Csv => {
            let p = dest.join(STRETCH_CSV);
            let bytes = csv_bytes(&report.stretch_samples, &STRETCH_COLUMNS, &p)?;
            fs::write(&p, bytes).map_err(io_err(&p))?;
            written.push(p);
            let p = dest.join(STATE_CSV);
            let bytes = csv_bytes(&report.state, &STATE_COLUMNS, &p)?;
            fs::write(&p, bytes).map_err(io_err(&p))?;
            written.push(p);
        }
        ExportFormat::Json => {
            let p = dest.join(REPORT_JSON);
            fs::write(&p, report_json(report)).map_err(io_err(&p))?;
            written.push(p);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(samples: Vec<StretchSample>) -> ExperimentReport {
        ExperimentReport {
            config: serde_json::json!({"n": 1}),
            seed: 1,
            counters: MessageCounters::default(),
            maintenance_messages_per_node_round: 0.0,
            stretch_summary: Summary::of(samples.iter().map(|s| s.stretch)),
            stretch_summary_without_upgrade: Summary::default(),
            state_summary: StateSummary::default(),
            bucket_overflows: 0,
            failures: Vec::new(),
            stretch_samples: samples,
            state: Vec::new(),
        }
    }

    fn sample() -> StretchSample {
        StretchSample {
            src: "0a".into(),
            dst: "0b".into(),
            oracle_hops: 2,
            uip_hops: 3,
            stretch: 1.5,
            search_steps: 1,
            search_messages: 4,
        }
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::of([1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.max, 4.0);
        assert_eq!(s.p95, 4.0);
        let s = Summary::of((1..=100).map(f64::from));
        assert_eq!(s.p95, 95.0);
        assert_eq!(s.median, 50.5);
        assert_eq!(Summary::of([]), Summary::default());
    }

    #[test]
    fn empty_run_gives_header_only_csv() {
        let dir = tempfile::tempdir().unwrap();
        export_report(&report(vec![]), ExportFormat::Csv, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(STRETCH_CSV)).unwrap();
        assert_eq!(text, STRETCH_COLUMNS.join(",") + "\n");
    }

    #[test]
    fn one_sample_gives_two_lines() {
        let dir = tempfile::tempdir().unwrap();
        export_report(&report(vec![sample()]), ExportFormat::Csv, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(STRETCH_CSV)).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().nth(1).unwrap(), "0a,0b,2,3,1.5,1,4");
    }

    #[test]
    fn json_is_reproducible_and_has_the_documented_keys() {
        let dir = tempfile::tempdir().unwrap();
        let r = report(vec![sample()]);
        export_report(&r, ExportFormat::Json, dir.path()).unwrap();
        let a = fs::read(dir.path().join(REPORT_JSON)).unwrap();
        export_report(&r, ExportFormat::Json, dir.path()).unwrap();
        assert_eq!(a, fs::read(dir.path().join(REPORT_JSON)).unwrap());
        let v: serde_json::Value = serde_json::from_slice(&a).unwrap();
        for key in ["config", "seed", "counters", "stretch_summary", "state_summary", "failures"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        for key in ["mean", "median", "p95", "max"] {
            assert!(v["stretch_summary"].get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn unwritable_destination_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let err = export_report(&report(vec![]), ExportFormat::Json, &blocker.join("sub")).unwrap_err();
        assert!(err.to_string().contains("file"));
    }

    #[test]
    fn pair_sampling() {
        let nodes: Vec<NodeHandle> = (0..5).map(NodeHandle).collect();
        let all = sample_pairs(&nodes, 100, 1);
        assert_eq!(all.len(), 20);
        assert!(all.iter().all(|(a, b)| a != b));
        let some = sample_pairs(&nodes, 7, 1);
        assert_eq!(some.len(), 7);
        let mut dedup = some.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 7);
        assert_eq!(some, sample_pairs(&nodes, 7, 1));
        assert!(sample_pairs(&nodes[..1], 10, 1).is_empty());
    }

    #[test]
    fn state_rows_recompute() {
        let rows = vec![
            NodeState {
                node_id_hex: "00".into(),
                entries_total: 3,
                entries_physical: 1,
                entries_virtual: 2,
                nonempty_buckets: 2,
                max_virtual_depth: 1,
            },
            NodeState {
                node_id_hex: "01".into(),
                entries_total: 5,
                entries_physical: 2,
                entries_virtual: 3,
                nonempty_buckets: 3,
                max_virtual_depth: 4,
            },
        ];
        let s = StateSnapshot::from_rows(rows);
        assert_eq!(s.summary.entries_total.mean, 4.0);
        assert_eq!(s.summary.nonempty_buckets.max, 3.0);
        assert_eq!(s.summary.mean_physical, 1.5);
        assert_eq!(s.summary.max_virtual_depth, 4);
    }
}
