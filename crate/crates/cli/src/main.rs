use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mosco_cli::{config, list_studies, run, RunOptions, EXIT_CONFIG, EXIT_SOLVER};

/// Worker threads for the per-level and per-schedule parallel loops.
const THREADS_ENV: &str = "MOSCO_THREADS";

#[derive(Parser)]
#[command(
    name = "mosco",
    version,
    about = "Convergence studies for VIs and QVIs with moving constraint sets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a study from a TOML config.
    Run {
        config: PathBuf,
        /// Validate and print the resolved plan without solving or writing.
        #[arg(long)]
        dry_run: bool,
        /// Output directory (default `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a log-log SVG plot.
        #[arg(long)]
        plot: bool,
    },
    /// List the study kinds.
    List,
    /// Print the config keys of a study kind.
    Describe { kind: String },
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_CONFIG as u8);
    }
    match cli.command {
        Command::List => {
            for (k, s) in list_studies() {
                println!("{k:<10} {s}");
            }
            ExitCode::SUCCESS
        }
        Command::Describe { kind } => match config::describe(&kind) {
            Ok(s) => {
                print!("{s}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_CONFIG as u8)
            }
        },
        Command::Run {
            config,
            dry_run,
            out,
            plot,
        } => {
            let opts = RunOptions { dry_run, out, plot };
            match run(&config, &opts) {
                Ok(o) => {
                    if let Some(p) = o.plan {
                        print!("{p}");
                    }
                    if let Some(r) = &o.report {
                        for f in &r.flags {
                            let tag = if f.asserted { "" } else { " (informative)" };
                            println!(
                                "{:<24} {}{tag}",
                                f.name,
                                if f.passed { "pass" } else { "FAIL" }
                            );
                        }
                        for (n, msg) in &r.failures {
                            eprintln!("n = {n}: {msg}");
                        }
                    }
                    if let Some(p) = o.csv_path {
                        println!("wrote {}", p.display());
                    }
                    ExitCode::from(o.exit_code as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code().clamp(0, EXIT_SOLVER) as u8)
                }
            }
        }
    }
}
