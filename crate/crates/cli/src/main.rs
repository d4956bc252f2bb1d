use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use leo_routing::agent::PolicyKind;
use leo_routing::constellation::{build_constellation, snapshot, write_edges_csv, write_positions_csv};
use leo_routing::harness::{self, ExperimentConfig, RunOutcome, DEFAULT_LOADS_MBPS};
use leo_routing::Error;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "leo-route",
    version,
    about = "LEO satellite routing simulator and DQN router"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy, evaluate it greedily and save a checkpoint.
    Train(RunArgs),
    /// Evaluate a policy without training (optionally from a checkpoint).
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run one experiment per offered load.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated loads in Mbps.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LOADS_MBPS.to_vec())]
        loads: Vec<f64>,
    },
    /// Energy and CO₂ estimate for a number of routing decisions.
    GreenReport {
        #[arg(long, default_value_t = 10_000)]
        decisions: u64,
        #[arg(long)]
        time_ms: f64,
        #[arg(long, default_value_t = 30.0)]
        tdp_w: f64,
        #[arg(long, default_value_t = 495.0)]
        intensity: f64,
    },
    /// Write satellite positions and ISL edges for one slot.
    DumpTopology {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        slot: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// proposed, dijkstra, mlp_dqn or random.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Error> {
    match path {
        Some(p) => ExperimentConfig::from_path(p),
        None => Ok(ExperimentConfig::default()),
    }
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut c = load_config(self.config.as_deref())?;
        if let Some(s) = self.seed {
            c.run.seed = Some(s);
        }
        if let Some(p) = &self.policy {
            c.run.policy = PolicyKind::parse(p)?;
        }
        if let Some(o) = &self.out {
            c.run.out_dir = Some(o.clone());
        }
        if let Some(e) = self.episodes {
            c.run.episodes = e;
        }
        c.validate()?;
        Ok(c)
    }
}

fn outcome_json(config: &ExperimentConfig, o: &RunOutcome) -> serde_json::Value {
    let m = &o.metrics;
    json!({
        "policy": config.run.policy.name(),
        "seed": o.summary.seed,
        "load_mbps": o.summary.load_mbps,
        "throughput_mbps": m.throughput_mbps,
        "offered_mbps": m.offered_mbps,
        "delay_ms": m.mean_delay_ms,
        "loss_rate": m.loss_rate,
        "mean_queue": m.mean_queue,
        "generated": m.generated,
        "delivered": m.delivered,
        "dropped": m.dropped,
        "disconnected_slots": m.disconnected_slots,
        "conservation_holds": m.conservation_holds,
        "eval_decisions": o.eval_decisions,
        "time_per_decision_ms": o.time_per_decision_ms,
        "training_updates": o.training_log.len(),
    })
}

fn run(cli: Cli) -> Result<serde_json::Value, Error> {
    match cli.command {
        Command::Train(args) => {
            let config = args.resolve()?;
            let outcome = harness::run_experiment(&config)?;
            Ok(outcome_json(&config, &outcome))
        }
        Command::Evaluate { run, checkpoint } => {
            let mut config = run.resolve()?;
            config.run.episodes = 0;
            if checkpoint.is_some() {
                config.run.checkpoint = checkpoint;
            }
            let outcome = harness::run_experiment(&config)?;
            Ok(outcome_json(&config, &outcome))
        }
        Command::Sweep { run, loads } => {
            let config = run.resolve()?;
            let rows = harness::load_sweep(&config, &loads)?;
            Ok(json!({ "rows": rows }))
        }
        Command::GreenReport {
            decisions,
            time_ms,
            tdp_w,
            intensity,
        } => Ok(
            serde_json::to_value(harness::green_report(decisions, time_ms, tdp_w, intensity)?)
                .expect("report serializes"),
        ),
        Command::DumpTopology { config, slot, out } => {
            let config = load_config(config.as_deref())?;
            let roster = build_constellation(&config.constellation)?;
            let positions = roster.propagate(if config.constellation.static_topology { 0 } else { slot });
            let snap = snapshot(slot, &positions, &config.constellation);
            std::fs::create_dir_all(&out)?;
            write_positions_csv(&out.join("positions.csv"), &positions)?;
            write_edges_csv(&out.join("edges.csv"), &snap)?;
            Ok(json!({
                "slot": slot,
                "satellites": positions.len(),
                "edges": snap.edges.len(),
                "connected": snap.is_connected(),
            }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(2)
        }
    }
}
