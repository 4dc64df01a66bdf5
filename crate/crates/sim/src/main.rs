use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use skyframe_sim::bench::{self, BenchConfig};
use skyframe_sim::metrics::MetricsWriter;
use skyframe_sim::scenario::Scenario;
use skyframe_sim::server::{ServeOptions, Server};
use skyframe_sim::trace::{replay, Trace, TraceWriter};
use skyframe_sim::{Sim, SimResult};

#[derive(Parser)]
#[command(name = "skyframe", version, about = "Cinematographic drone planning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario headless or behind the operator server.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Ticks to run. Unlimited when serving without this flag.
        #[arg(long)]
        ticks: Option<u64>,
        /// Write a replayable trace.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Serve the operator protocol on this TCP port.
        #[arg(long)]
        serve: Option<u16>,
        /// Write metrics files to this directory.
        #[arg(long)]
        metrics_out: Option<PathBuf>,
    },
    /// Re-run a trace and compare telemetry.
    Replay { trace: PathBuf },
    /// Planning latency on a generated pillar-grid scene.
    Bench {
        #[arg(long, default_value_t = 50)]
        queries: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Check a scenario file.
    Validate { scenario: PathBuf },
}

const DEFAULT_TICKS: u64 = 500;

fn run(cli: Cli) -> SimResult<ExitCode> {
    match cli.command {
        Cmd::Run {
            scenario,
            seed,
            ticks,
            record,
            serve,
            metrics_out,
        } => {
            let mut sc = Scenario::load(&scenario)?;
            if let Some(s) = seed {
                sc.params.seed = s;
            }
            let sim = Sim::new(sc.clone())?;
            let mut metrics = metrics_out.map(|d| MetricsWriter::create(&d, sim.intrinsics)).transpose()?;
            if let Some(port) = serve {
                let server = Server::bind(("127.0.0.1", port))?;
                eprintln!("serving {} on {}", sc.name, server.local_addr()?);
                let record = record.map(|p| TraceWriter::create(&p, &sc, ticks)).transpose()?;
                let summary = server.run(
                    sim,
                    ServeOptions {
                        ticks,
                        realtime: true,
                        record,
                        metrics,
                    },
                )?;
                eprintln!("{} ticks, {} commands", summary.ticks, summary.commands);
                return Ok(ExitCode::SUCCESS);
            }
            let ticks = ticks.unwrap_or(DEFAULT_TICKS);
            let mut record = record.map(|p| TraceWriter::create(&p, &sc, Some(ticks))).transpose()?;
            let mut sim = sim;
            let mut plans = 0;
            let mut failed = 0;
            for _ in 0..ticks {
                let Some(r) = sim.tick() else { break };
                if let Some(w) = record.as_mut() {
                    w.telemetry(&r)?;
                }
                if let Some(m) = metrics.as_mut() {
                    m.tick(&r)?;
                    m.plans(&sim.plan_log)?;
                }
                plans += sim.plan_log.len();
                failed += sim.plan_log.iter().filter(|p| !p.ok).count();
                sim.plan_log.clear();
            }
            if let Some(w) = record {
                w.finish()?;
            }
            if let Some(m) = metrics {
                m.finish()?;
            }
            println!(
                "{}: {} ticks ({:.2} s), {} plans, {} failed",
                sc.name, sim.state.tick, sim.state.time, plans, failed
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Replay { trace } => {
            let t = Trace::load(&trace)?;
            let report = replay(&t)?;
            match report.mismatch {
                None => {
                    println!("identical: {} ticks", report.ticks);
                    Ok(ExitCode::SUCCESS)
                }
                Some((tick, expected, actual)) => {
                    println!("mismatch at tick {tick}\nexpected {expected}\nactual   {actual}");
                    Ok(ExitCode::FAILURE)
                }
            }
        }
        Cmd::Bench { queries, seed } => {
            let report = bench::run(&BenchConfig {
                queries,
                seed,
                ..BenchConfig::default()
            })?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Validate { scenario } => {
            let sc = Scenario::load(&scenario)?;
            let problems = sc.lint();
            if problems.is_empty() {
                println!("{}: ok", sc.name);
                Ok(ExitCode::SUCCESS)
            } else {
                for p in &problems {
                    println!("{p}");
                }
                Ok(ExitCode::FAILURE)
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
