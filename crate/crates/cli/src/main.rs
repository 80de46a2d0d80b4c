use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use repsim_core::report::{compare, comparison_report, metrics_report};
use repsim_core::scenario::Scenario;
use repsim_core::verify::verify;

/// Replication simulator: run scenarios, compare site-addition methods and
/// check the overlay layer.
#[derive(Parser)]
#[command(name = "repsim", version)]
struct Cli {
    /// Print only the report (or only failures for verify).
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to quiescence and print its metrics.
    Run {
        file: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_ticks: Option<u64>,
    },
    /// Run a scenario once per addition method and compare them.
    Compare {
        file: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check overlay reads and replay against direct application.
    Verify {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 1000)]
        statements: usize,
    },
}

const EXIT_INVALID: u8 = 1;
const EXIT_FAILED: u8 = 2;

fn load(path: &Path, seed: Option<u64>) -> Result<Scenario, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let scn = Scenario::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(match seed {
        Some(s) => scn.with_seed(s),
        None => scn,
    })
}

fn run(cli: Cli) -> Result<bool, String> {
    match cli.command {
        Command::Run { file, seed, max_ticks } => {
            let mut scn = load(&file, seed)?;
            if let Some(t) = max_ticks {
                scn.max_ticks = t;
            }
            let out = scn.run().map_err(|e| format!("{}: {e}", file.display()))?;
            print!("{}", metrics_report(&out));
            if !out.converged && !cli.quiet {
                eprintln!("did not converge within {} ticks", scn.max_ticks);
            }
            Ok(out.converged)
        }
        Command::Compare { file, seed } => {
            let scn = load(&file, seed)?;
            let c = compare(&scn).map_err(|e| format!("{}: {e}", file.display()))?;
            print!("{}", comparison_report(&c));
            Ok(c.all_converged())
        }
        Command::Verify { seeds, statements } => {
            let results = verify(seeds, statements);
            let failed = results.iter().filter(|r| !r.passed()).count();
            for r in &results {
                if !cli.quiet || !r.passed() {
                    println!("{r}");
                }
            }
            println!("verify: {} of {} seeds passed", results.len() - failed, results.len());
            Ok(failed == 0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}
