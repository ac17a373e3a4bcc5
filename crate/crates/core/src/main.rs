use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ffmcast::failsim::{self, CutImpact, RecoveryKind, RecoveryModel};
use ffmcast::harness::{self, Preset, Scenario};
use ffmcast::netgraph::Network;
use ffmcast::protect::ProtectionConfig;
use ffmcast::treealg::Strategy;

#[derive(Parser)]
#[command(name = "ffmcast", version, about = "Fast-failover protected multicast simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Replay a scenario and write metrics, deliveries and a flow dump.
    Run(RunArgs),
    /// Check delivery under every set of at most F link failures.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        /// Refuse to run when more failure sets than this would be checked.
        #[arg(long, default_value_t = 1_000_000)]
        max_sets: u128,
    },
    /// Packet loss of a recovery scheme under link cuts.
    Recover(RecoverArgs),
    /// Summarise a metrics or deliveries CSV.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
    /// Join every switch in seeded random orders and average the results.
    Georeplay(GeoArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct TopologyArgs {
    /// Topology JSON: {"nodes": [...], "links": [[a, b], ...]}.
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Complete graph on N switches named n00, n01, ...
    #[arg(long)]
    complete: Option<usize>,
    /// Bundled GÉANT approximation.
    #[arg(long)]
    geant: bool,
}

impl TopologyArgs {
    fn load(&self) -> Result<Network> {
        if let Some(p) = &self.topology {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            return Ok(Network::load_topology(&text)?);
        }
        if let Some(n) = self.complete {
            return Ok(Network::complete_graph(n)?);
        }
        Ok(Network::geant())
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    topo: TopologyArgs,
    /// Scenario JSON: {"source": host, "events": [{"op": ..., "arg": ...}]}.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "spt")]
    tree: Strategy,
    /// Number of simultaneous link failures to protect against.
    #[arg(short = 'F', long = "fault-tolerance", default_value_t = 1)]
    f: usize,
    /// Output directory for CSV files.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<(Network, Scenario)> {
        let net = self.topo.load()?;
        let text = fs::read_to_string(&self.scenario).with_context(|| format!("reading {}", self.scenario.display()))?;
        Ok((net, Scenario::parse(&text)?))
    }

    fn config(&self) -> ProtectionConfig {
        ProtectionConfig::new(self.f, self.tree)
    }
}

#[derive(Args)]
struct RecoverArgs {
    #[arg(long)]
    model: RecoveryKind,
    #[arg(long, default_value_t = 0.0)]
    rtt_ms: f64,
    #[arg(long, default_value_t = 0.0)]
    detect_ms: f64,
    #[arg(long, default_value_t = 120.0)]
    rate_hz: f64,
    /// Time per flow or group modification.
    #[arg(long, default_value_t = 1.0)]
    flowmod_ms: f64,
    /// Path computation time for restoration.
    #[arg(long, default_value_t = 0.0)]
    compute_ms: f64,
    #[arg(long, default_value_t = 1)]
    cuts: usize,
    /// Groups rewritten per cut.
    #[arg(long, default_value_t = 1)]
    groups: usize,
    /// Entries reinstalled per cut.
    #[arg(long, default_value_t = 1)]
    entries: usize,
    #[arg(long, default_value_t = 1000.0)]
    spacing_ms: f64,
}

#[derive(Args)]
struct GeoArgs {
    /// `geant` or `complete:N`.
    #[arg(long, default_value = "geant")]
    preset: Preset,
    #[arg(long, default_value = "spt")]
    tree: Strategy,
    #[arg(short = 'F', long = "fault-tolerance", default_value_t = 1)]
    f: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    /// Report switches holding more groups than this.
    #[arg(long)]
    group_limit: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns false when an invariant violation was detected.
fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Run(args) => {
            let (net, scenario) = args.load()?;
            let out = harness::run_scenario(&net, &scenario, args.config())?;
            if let Some(dir) = &args.out {
                out.write_to(&net, dir)?;
            }
            let last = out.snapshots.last().expect("initial snapshot");
            println!(
                "subscribers {} flows {} groups {} tags {} injections {} violations {}",
                last.subscribers,
                last.total_flow_count(),
                last.total_groups,
                last.tags_in_use,
                out.injections.len(),
                out.violations
            );
            Ok(out.violations == 0)
        }
        Cmd::Verify { run, max_sets } => {
            let (net, scenario) = run.load()?;
            let mut r = harness::replay_membership(&net, &scenario, run.config())?;
            let gs = r.group().clone();
            let rep = failsim::verify_tolerance(&net, r.fabric_mut(), &gs, run.f, max_sets)?;
            if let Some(dir) = &run.out {
                fs::create_dir_all(dir)?;
                let mut buf = Vec::new();
                failsim::write_delivery_csv(&mut buf, &failsim::delivery_rows(&net, &rep.reports))?;
                fs::write(dir.join("verify.csv"), buf)?;
            }
            println!(
                "sets {} excused {} unexcused {} loops {} stray {}",
                rep.sets_checked,
                rep.excused,
                rep.unexcused.len(),
                rep.loops,
                rep.stray
            );
            for v in &rep.unexcused {
                println!(
                    "  missed {} under {}",
                    net.name(v.subscriber),
                    failsim::failure_set_label(&net, &v.failure_set)
                );
            }
            Ok(rep.is_clean())
        }
        Cmd::Recover(a) => {
            if a.rate_hz <= 0.0 {
                bail!("--rate-hz must be positive");
            }
            let model = RecoveryModel {
                kind: a.model,
                detection_ms: a.detect_ms,
                controller_rtt_ms: a.rtt_ms,
                per_flowmod_ms: a.flowmod_ms,
                compute_ms: a.compute_ms,
                packet_rate_hz: a.rate_hz,
            };
            let impact = CutImpact { affected_groups: a.groups, entries_to_restore: a.entries };
            let cuts = failsim::evenly_spaced_cuts(&model, a.cuts, a.spacing_ms, impact);
            let duration = a.spacing_ms * a.cuts.max(1) as f64;
            let out = failsim::simulate_recovery(&model, &cuts, duration);
            println!(
                "model {} outage_ms {:.3} sent {} lost {} per_cut {:?}",
                model.kind,
                model.outage_ms(&impact),
                out.sent,
                out.lost,
                out.lost_per_cut
            );
            Ok(true)
        }
        Cmd::Report { input } => {
            let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let header = text.lines().next().unwrap_or_default();
            let table = if header.split(',').any(|h| h == "metric") {
                harness::summarize_metrics(&text)?
            } else if header.split(',').any(|h| h == "delivered") {
                harness::summarize_deliveries(&text)?
            } else {
                bail!("{} is neither a metrics nor a deliveries CSV", input.display());
            };
            print!("{table}");
            Ok(true)
        }
        Cmd::Georeplay(a) => {
            let res = harness::georeplay(a.preset, a.tree, a.f, a.seed, a.reps)?;
            for (k, m) in res.depth_means.iter().enumerate() {
                println!("depth {k} hopcount {m:.4}");
            }
            if let Some(last) = res.steps.last() {
                println!(
                    "joined {} flows {:.2} groups {:.2} max_switch_flows {:.2} max_switch_groups {:.2} tags {:.2}",
                    last.joined,
                    last.total_flows,
                    last.total_groups,
                    last.max_switch_flows,
                    last.max_switch_groups,
                    last.tags_in_use
                );
            }
            let mut ok = true;
            if let Some(limit) = a.group_limit {
                for rep in &res.reps {
                    let over = harness::capacity_check(rep.snapshots.last().expect("snapshot"), limit);
                    for (sw, n) in &over {
                        println!("seed {} switch {sw} holds {n} groups (limit {limit})", rep.seed);
                    }
                    ok &= over.is_empty();
                }
            }
            if let Some(dir) = &a.out {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("georeplay.csv"), res.steps_csv()?)?;
            }
            Ok(ok)
        }
    }
}
