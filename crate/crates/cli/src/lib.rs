//! Config-driven runner for the convergence studies of `mosco-core`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use mosco_core::StudyReport;

pub mod config;
pub mod output;
pub mod runner;

pub use config::StudyConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FLAG: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn config(key: &str, msg: impl std::fmt::Display) -> Self {
        CliError::Config(format!("`{key}`: {msg}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Solver(_) | CliError::Io(_) => EXIT_SOLVER,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub dry_run: bool,
    pub out: Option<PathBuf>,
    pub plot: bool,
}

#[derive(Debug)]
pub struct Outcome {
    pub report: Option<StudyReport>,
    /// Resolved plan for dry runs.
    pub plan: Option<String>,
    pub csv_path: Option<PathBuf>,
    pub exit_code: i32,
}

fn stem(cfg: &StudyConfig, path: &Path) -> String {
    cfg.name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| cfg.kind.name().to_string())
    })
}

/// Parses, validates and runs one config file, writing `<stem>.csv`,
/// `<stem>.meta.json` and optionally `<stem>.svg` into the output directory.
pub fn run(path: &Path, opts: &RunOptions) -> Result<Outcome, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg = StudyConfig::from_toml(&text)?;
    if opts.dry_run {
        return Ok(Outcome {
            report: None,
            plan: Some(runner::plan(&cfg)?),
            csv_path: None,
            exit_code: EXIT_OK,
        });
    }
    let start = Instant::now();
    let report = runner::execute(&cfg)?;
    let wall = start.elapsed().as_secs_f64();
    let out = opts.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(e.to_string()))?;
    let name = stem(&cfg, path);
    let csv_path = out.join(format!("{name}.csv"));
    std::fs::write(&csv_path, output::to_csv(&report)?).map_err(|e| CliError::Io(e.to_string()))?;
    output::write_meta(
        &out.join(format!("{name}.meta.json")),
        &output::meta(&report, &text, cfg.seed, wall),
    )?;
    if opts.plot {
        // Presentation only; a plotting problem never changes the exit code.
        if let Err(e) = output::write_plot(&out.join(format!("{name}.svg")), &report) {
            eprintln!("warning: plot not written: {e}");
        }
    }
    let exit_code = if report.passed() { EXIT_OK } else { EXIT_FLAG };
    Ok(Outcome {
        report: Some(report),
        plan: None,
        csv_path: Some(csv_path),
        exit_code,
    })
}

/// One line per study kind.
pub fn list_studies() -> Vec<(&'static str, &'static str)> {
    config::KINDS
        .iter()
        .map(|k| {
            let kind = config::Kind::parse(k).expect("listed");
            (*k, config::summary(kind))
        })
        .collect()
}

/// Drops the header; what remains is reproducible byte for byte.
pub fn csv_body(csv: &str) -> &str {
    csv.split_once('\n').map_or("", |(_, body)| body)
}
