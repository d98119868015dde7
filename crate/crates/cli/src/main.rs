//! Command-line driver: reads a run configuration, dispatches on the mode and
//! writes CSV and plot-data artifacts with a checksum manifest.
//!
//! Exit status is 0 on success, 1 when the input is invalid and 2 when a
//! numerical step fails.

mod modes;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use renewal_core::config::{Mode, RunConfig};
use thiserror::Error;

use output::Output;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Core(#[from] renewal_core::Error),
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    fn exit_code(&self) -> u8 {
        match self {
            RunError::Core(e) if e.is_validation() => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "renewal", version, about = "Age and trait structured renewal model laboratory")]
struct Cli {
    /// eigen, simulate, simulate-mutation, decompose, adaptive, hjb or full-report.
    mode: String,
    /// Path to the TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `run.out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use unit weights in the birth sum instead of the age step.
    #[arg(long)]
    paper_literal_boundary: bool,
    /// Overrides ε in the grid and HJ sections.
    #[arg(long)]
    eps: Option<f64>,
}

fn configure_threads() -> Result<(), RunError> {
    let Ok(value) = std::env::var("RENEWAL_THREADS") else { return Ok(()) };
    let threads: usize = value.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| renewal_core::Error::Config {
        path: "RENEWAL_THREADS".into(),
        message: format!("expected a positive integer, got `{value}`"),
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| renewal_core::Error::Config { path: "RENEWAL_THREADS".into(), message: e.to_string() })?;
    Ok(())
}

fn execute(cli: &Cli) -> Result<PathBuf, RunError> {
    configure_threads()?;
    let mode: Mode = cli.mode.parse()?;
    let mut cfg = RunConfig::load(&cli.config)?;
    cfg.run.mode = Some(mode);
    if cli.paper_literal_boundary {
        cfg.run.paper_literal_boundary = true;
    }
    if let Some(eps) = cli.eps {
        cfg.override_eps(eps);
    }
    cfg.validate(mode)?;
    let dir = cli.out.clone().or_else(|| cfg.run.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let mut out = Output::create(&dir)?;
    let mut summary = modes::Summary::default();
    summary.text("mode", mode.name());
    let result = match mode {
        Mode::Eigen => modes::eigen(&cfg, mode, &mut out, &mut summary).map(|_| ()),
        Mode::Simulate => modes::simulate(&cfg, mode, &mut out, &mut summary, false, false).map(|_| ()),
        Mode::SimulateMutation => modes::simulate(&cfg, mode, &mut out, &mut summary, true, false).map(|_| ()),
        Mode::Decompose => modes::simulate(&cfg, mode, &mut out, &mut summary, false, true).map(|_| ()),
        Mode::Adaptive => modes::adaptive(&cfg, mode, &mut out, &mut summary),
        Mode::Hjb => modes::hjb(&cfg, mode, &mut out, &mut summary),
        Mode::FullReport => modes::full_report(&cfg, &mut out, &mut summary),
    };
    if let Err(e) = &result {
        summary.text("error", e.to_string());
    }
    out.write("summary.txt", &summary.render())?;
    let manifest = out.finish()?;
    result.map(|_| manifest)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let start = Instant::now();
    match execute(&cli) {
        Ok(manifest) => {
            eprintln!("done in {:.2} s; manifest at {}", start.elapsed().as_secs_f64(), manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
