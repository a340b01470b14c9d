use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use qosim::qosim_core::app::enumerate_configurations;
use qosim::qosim_core::reference::generate_reference_scenario;
use qosim::qosim_core::runtime::{deploy_initial, Policy};
use qosim::{load_scenario, load_trace, run_scenario, scenario_to_json, FileError, RunOptions, RunSummary};

#[derive(Parser)]
#[command(name = "qosim", version, about = "QoS-driven reconfiguration simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Heuristic,
    Exhaustive,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Heuristic => Policy::Heuristic,
            PolicyArg::Exhaustive => Policy::Exhaustive,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write trace.jsonl, ticks.csv and summary.json.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "qosim-out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "heuristic")]
        policy: PolicyArg,
        /// Overrides the seed recorded in the scenario.
        #[arg(long)]
        seed: Option<u64>,
        /// Leave the generation time out of the trace header.
        #[arg(long)]
        no_header_timestamp: bool,
    },
    /// Parse and check a scenario file.
    Validate { scenario: PathBuf },
    /// Write a bundled scenario: surveillance135, surveillance135-oscillating, toy6 or scaling(n,v,s).
    Gen {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the summary of a trace file.
    Summary { trace: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("qosim: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), String> {
    match cmd {
        Command::Run { scenario, out, policy, seed, no_header_timestamp } => {
            let sc = load_scenario(&scenario).map_err(|e| e.to_string())?;
            let opts = RunOptions { policy: policy.into(), seed, timestamp: !no_header_timestamp };
            let (_, summary) = run_scenario(&sc, &out, &opts).map_err(|e| e.to_string())?;
            let s = &summary.summary;
            println!(
                "{}: {} reconfigurations, {} actions, QoS min {:.4} mean {:.4} final {:.4}; outputs in {}",
                sc.name,
                s.reconfigurations,
                s.total_actions,
                s.min_qos,
                s.mean_qos,
                s.final_qos,
                out.display()
            );
            Ok(())
        }
        Command::Validate { scenario } => {
            let sc = load_scenario(&scenario).map_err(|e| e.to_string())?;
            let sim = deploy_initial(&sc, Policy::Heuristic).map_err(|e| FileError::from(e).to_string())?;
            let bound = sim.app().space_size_bound();
            let count = if bound <= 1_000_000 {
                let n = enumerate_configurations(sim.app()).map_err(|e| e.to_string())?.count();
                format!("{n} configurations")
            } else {
                format!("at most {bound} configurations")
            };
            println!("{}: ok, {count}, default QoS {:.4}", sc.name, sim.latest().report.overall);
            Ok(())
        }
        Command::Gen { name, out } => {
            let sc = generate_reference_scenario(&name).map_err(|e| e.to_string())?;
            let json = scenario_to_json(&sc);
            match out {
                Some(path) => fs::write(&path, json).map_err(|e| format!("{}: {e}", path.display())),
                None => {
                    print!("{json}");
                    Ok(())
                }
            }
        }
        Command::Summary { trace } => {
            let (header, records) = load_trace(&trace).map_err(|e| e.to_string())?;
            print!("{}", RunSummary::from_trace(&header, &records).to_json());
            Ok(())
        }
    }
}
