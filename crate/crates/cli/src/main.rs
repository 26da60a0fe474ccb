//! Operator CLI: validate configs, run scenarios end to end, regenerate
//! reports, and emit traces. A thin shell over the library; anything this
//! binary does is one library call away.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use datahaul::scenario::{
    self, load_config, parse_metrics_csv, summarize_ledger, write_charts, Overrides,
    ScenarioError,
};
use datahaul::workload;

#[derive(Parser)]
#[command(name = "datahaul", version, about = "Desk-scale distributed data-handling grid simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Scenario config (JSON, schema 1).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for trace.csv, transfers.csv, mss.csv,
    /// metrics.csv, summary.txt.
    #[arg(long)]
    out: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the run length in days.
    #[arg(long)]
    until: Option<u32>,
    /// Suppress progress output.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a config; exit nonzero with a JSON error report
    /// on failure.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a scenario end to end and write all outputs.
    Run(RunArgs),
    /// Summarize an existing run directory from its metrics.csv.
    Report {
        /// Directory containing metrics.csv.
        #[arg(long)]
        out: PathBuf,
        /// Also write per-day gnuplot-ready chart files.
        #[arg(long)]
        charts: bool,
    },
    /// Generate the workload trace for a config without running it.
    TraceGen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        until: Option<u32>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            match e {
                ScenarioError::ConfigInvalid(_) => ExitCode::from(2),
                ScenarioError::Io { .. } => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), ScenarioError> {
    match cli.command {
        Command::Validate { config } => {
            let (cfg, _) = load_config(&config)?;
            let issues = cfg.validate();
            if issues.is_empty() {
                println!("ok");
                Ok(())
            } else {
                Err(ScenarioError::ConfigInvalid(issues))
            }
        }
        Command::Run(args) => {
            let (cfg, base) = load_config(&args.config)?;
            let ov = Overrides {
                seed: args.seed,
                until_days: args.until,
            };
            let started = std::time::Instant::now();
            let outcome = scenario::run_scenario(&cfg, &base, &args.out, &ov)?;
            if !args.quiet {
                println!(
                    "ran {} simulated days, {} events, {} warnings, in {:.2?}",
                    outcome.run_days,
                    outcome.events_fired,
                    outcome.runner.sim.warnings.len(),
                    started.elapsed()
                );
                println!("outputs in {}", args.out.display());
            }
            Ok(())
        }
        Command::Report { out, charts } => {
            let path = out.join(scenario::OUT_METRICS);
            let text = std::fs::read_to_string(&path)
                .map_err(|source| ScenarioError::Io { path, source })?;
            let ledger = parse_metrics_csv(&text).map_err(ScenarioError::Other)?;
            print!("{}", summarize_ledger(&ledger));
            if charts {
                let files = write_charts(&ledger, &out)?;
                println!("{} chart files written", files.len());
            }
            Ok(())
        }
        Command::TraceGen { config, out, seed, until } => {
            let (cfg, base) = load_config(&config)?;
            let ov = Overrides { seed, until_days: until };
            let (_, trace) = scenario::build_runner(&cfg, &base, &ov)?;
            std::fs::create_dir_all(&out).map_err(|source| ScenarioError::Io {
                path: out.clone(),
                source,
            })?;
            let path = out.join(scenario::OUT_TRACE);
            std::fs::write(&path, workload::trace_to_csv(&trace))
                .map_err(|source| ScenarioError::Io { path: path.clone(), source })?;
            println!("{} records -> {}", trace.len(), path.display());
            Ok(())
        }
    }
}
