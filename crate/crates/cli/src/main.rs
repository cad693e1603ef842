//! Command-line driver.

use std::path::PathBuf;
use std::process::ExitCode;

use augfl_core::harness::{self, SweepAxis};
use augfl_core::selftest;
use augfl_core::Error;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "augfl", version, about = "Federated meta-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides both the federation and algorithm seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: $AUGFL_OUT_DIR or ./augfl-out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment per value of a parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// lambda, rho, M, num_clients or seed.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Short run that reports diagnostics only.
    Check {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in example suite.
    Selftest,
}

fn main() -> ExitCode {
    // usage errors count as validation errors; 2 is reserved for failed runs
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Run { config, seed, out } => {
            let mut cfg = harness::load_config(&config)?;
            if let Some(s) = seed {
                cfg.federation.seed = s;
                cfg.algo.seed = s;
            }
            if let Some(dir) = out {
                cfg.output.directory = Some(dir);
            }
            cfg.validate()?;
            let dir = cfg.output.resolved_directory();
            let report = harness::run_experiment(&cfg)?;
            for p in harness::emit_metrics(&report, &dir, &cfg.output.formats)? {
                println!("{}", p.display());
            }
            let last = report.final_row();
            eprintln!(
                "rounds={} F={} grad_F_norm={} wall_clock={:.3}s",
                last.round, last.f_value, last.grad_f_norm, report.wall_clock_secs
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, axis, values, out } => {
            let cfg = harness::load_config(&config)?;
            let axis: SweepAxis = axis.parse()?;
            let dir = out.unwrap_or_else(|| cfg.output.resolved_directory());
            let rows = harness::run_sweep_to_dir(&cfg, axis, &values, &dir)?;
            println!("{}", serde_json::to_string_pretty(&rows)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { config, out } => {
            let cfg = harness::load_config(&config)?;
            let dir = out.unwrap_or_else(|| cfg.output.resolved_directory());
            harness::probe_directory(&dir)?;
            let (_, diag) = harness::run_check(&cfg)?;
            let text = serde_json::to_string_pretty(&diag)?;
            std::fs::write(dir.join(harness::DIAGNOSTICS_FILE), format!("{text}\n"))?;
            println!("{text}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest => {
            let results = selftest::run_all();
            let mut failed = 0;
            for r in &results {
                println!("{} {}{}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail_suffix());
                failed += usize::from(!r.passed);
            }
            println!("{} checks, {} failed", results.len(), failed);
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}
