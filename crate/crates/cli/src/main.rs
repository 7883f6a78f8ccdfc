//! `uipsim`: builds a world from a scenario file, runs it and writes reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info};
use serde::Serialize;

use uip_core::metrics::{StateSummary, Summary};
use uip_core::routing::audit;
use uip_core::scenario::{self, ScenarioConfig, ScenarioError};
use uip_core::underlay::{build_topology, TopologyKind, TopologySpec};

#[derive(Parser)]
#[command(name = "uipsim", version, about = "Identity-routed overlay simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run one independent world per seed, concurrently.
        #[arg(long, value_delimiter = ',')]
        parallel_seeds: Option<Vec<u64>>,
        /// Overrides the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write an underlay snapshot without running the protocol.
    GenTopology {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        chords: Option<usize>,
        #[arg(long)]
        clusters: Option<usize>,
        #[arg(long)]
        gateways: Option<usize>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build and settle the world, then run every invariant audit.
    Audit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    #[value(alias = "gnp")]
    RandomGnp,
    #[value(alias = "ring")]
    RingWithChords,
    #[value(alias = "pa")]
    PreferentialAttachment,
    #[value(alias = "nat")]
    NatClusters,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("UIPSIM_LOG", "warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, parallel_seeds, output } => run(&config, parallel_seeds, output),
        Command::GenTopology { kind, n, p, m, chords, clusters, gateways, seed, out } => {
            gen_topology(kind, n, p, m, chords, clusters, gateways, seed, &out)
        }
        Command::Audit { config, output } => run_audit(&config, output),
    };
    ExitCode::from(code as u8)
}

fn fail(e: &ScenarioError) -> i32 {
    error!("{e}");
    e.exit_code()
}

fn create_dir(dir: &Path) -> Result<(), ScenarioError> {
    fs::create_dir_all(dir).map_err(|source| ScenarioError::Io { path: dir.into(), source })
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), ScenarioError> {
    let text = serde_json::to_string_pretty(v).expect("plain data") + "\n";
    fs::write(path, text).map_err(|source| ScenarioError::Io { path: path.into(), source })
}

fn load(path: &Path, output: Option<PathBuf>) -> Result<ScenarioConfig, ScenarioError> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(o) = output {
        cfg.output = o;
    }
    Ok(cfg)
}

fn run(path: &Path, seeds: Option<Vec<u64>>, output: Option<PathBuf>) -> i32 {
    let cfg = match load(path, output) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    match seeds {
        None => run_one(&cfg, &cfg.output).unwrap_or_else(|e| fail(&e)),
        Some(seeds) => run_many(&cfg, &seeds).unwrap_or_else(|e| fail(&e)),
    }
}

fn run_one(cfg: &ScenarioConfig, dest: &Path) -> Result<i32, ScenarioError> {
    let outcome = scenario::run(cfg)?;
    create_dir(dest)?;
    let files = scenario::write_outputs(&outcome, dest)?;
    let s = &outcome.report.stretch_summary;
    info!(
        "seed {}: {} pairs, mean stretch {:.3}, {} failures, {} ms",
        cfg.seed,
        s.count,
        s.mean,
        outcome.report.failures.len(),
        outcome.timing.total_ms
    );
    for f in &outcome.report.failures {
        error!("{f}");
    }
    for f in files {
        info!("wrote {}", f.display());
    }
    Ok(outcome.exit_code())
}

#[derive(Serialize)]
struct SeedSummary {
    seed: u64,
    exit_code: i32,
    error: Option<String>,
    failures: usize,
    stretch_summary: Option<Summary>,
    state_summary: Option<StateSummary>,
    maintenance_messages_per_node_round: Option<f64>,
}

#[derive(Serialize)]
struct Merged {
    seeds: Vec<SeedSummary>,
    mean_stretch: Option<f64>,
    mean_entries: Option<f64>,
    mean_nonempty_buckets: Option<f64>,
}

fn run_many(cfg: &ScenarioConfig, seeds: &[u64]) -> Result<i32, ScenarioError> {
    create_dir(&cfg.output)?;
    let results: Vec<(u64, Result<scenario::RunOutcome, ScenarioError>)> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let mut c = cfg.clone();
                c.seed = seed;
                s.spawn(move || (seed, scenario::run(&c)))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("seed worker panicked")).collect()
    });

    let mut code = 0;
    let mut rows = Vec::new();
    for (seed, res) in results {
        let row = match res {
            Ok(outcome) => {
                let dest = cfg.output.join(format!("seed-{seed}"));
                create_dir(&dest)?;
                scenario::write_outputs(&outcome, &dest)?;
                let r = &outcome.report;
                for f in &r.failures {
                    error!("seed {seed}: {f}");
                }
                SeedSummary {
                    seed,
                    exit_code: outcome.exit_code(),
                    error: None,
                    failures: r.failures.len(),
                    stretch_summary: Some(r.stretch_summary.clone()),
                    state_summary: Some(r.state_summary.clone()),
                    maintenance_messages_per_node_round: Some(r.maintenance_messages_per_node_round),
                }
            }
            Err(e) => {
                error!("seed {seed}: {e}");
                SeedSummary {
                    seed,
                    exit_code: e.exit_code(),
                    error: Some(e.to_string()),
                    failures: 0,
                    stretch_summary: None,
                    state_summary: None,
                    maintenance_messages_per_node_round: None,
                }
            }
        };
        if code == 0 {
            code = row.exit_code;
        }
        rows.push(row);
    }

    let mean = |f: &dyn Fn(&SeedSummary) -> Option<f64>| {
        let v: Vec<f64> = rows.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let merged = Merged {
        mean_stretch: mean(&|r| r.stretch_summary.as_ref().filter(|s| s.count > 0).map(|s| s.mean)),
        mean_entries: mean(&|r| r.state_summary.as_ref().map(|s| s.entries_total.mean)),
        mean_nonempty_buckets: mean(&|r| r.state_summary.as_ref().map(|s| s.nonempty_buckets.mean)),
        seeds: rows,
    };
    write_json(&cfg.output.join("summary.json"), &merged)?;
    Ok(code)
}

#[allow(clippy::too_many_arguments)]
fn gen_topology(
    kind: Kind,
    n: usize,
    p: Option<f64>,
    m: Option<usize>,
    chords: Option<usize>,
    clusters: Option<usize>,
    gateways: Option<usize>,
    seed: u64,
    out: &Path,
) -> i32 {
    let need = |v: Option<usize>, flag: &str, kind: &str| {
        v.ok_or_else(|| ScenarioError::Config(format!("--{flag} is required for {kind}")))
    };
    let kind = match kind {
        Kind::RandomGnp => p
            .map(|p| TopologyKind::RandomGnp { n, p, connected: true })
            .ok_or_else(|| ScenarioError::Config("--p is required for random-gnp".into())),
        Kind::RingWithChords => Ok(TopologyKind::RingWithChords { n, chords: chords.unwrap_or(0) }),
        Kind::PreferentialAttachment => {
            need(m, "m", "preferential-attachment").map(|m| TopologyKind::PreferentialAttachment { n, m })
        }
        Kind::NatClusters => need(clusters, "clusters", "nat-clusters").and_then(|clusters| {
            need(gateways, "gateways", "nat-clusters")
                .map(|gateways| TopologyKind::NatClusters { n, clusters, gateways })
        }),
    };
    let written = kind.and_then(|kind| {
        let spec = TopologySpec::new(kind, seed);
        let u = build_topology(&spec).map_err(|e| ScenarioError::Config(e.to_string()))?;
        let path = out.to_path_buf();
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            create_dir(dir)?;
        }
        fs::write(&path, u.snapshot().to_json()).map_err(|source| ScenarioError::Io { path, source })?;
        Ok(u.len())
    });
    match written {
        Ok(nodes) => {
            info!("wrote {} ({nodes} nodes)", out.display());
            0
        }
        Err(e) => fail(&e),
    }
}

fn run_audit(path: &Path, output: Option<PathBuf>) -> i32 {
    let res = load(path, output).and_then(|cfg| {
        let prepared = scenario::prepare(&cfg)?;
        let report = audit(&prepared.world);
        create_dir(&cfg.output)?;
        write_json(&cfg.output.join("audit.json"), &report)?;
        Ok(report)
    });
    match res {
        Ok(r) if r.is_clean() => {
            info!("{} nodes audited, no violations", r.nodes_checked);
            0
        }
        Ok(r) => {
            for v in &r.violations {
                error!("{:?} at {:?}: {}", v.kind, v.node, v.detail);
            }
            1
        }
        Err(e) => fail(&e),
    }
}
