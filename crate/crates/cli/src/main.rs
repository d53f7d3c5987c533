//! `growthpath`: fit component models to sparse growth curves, screen new
//! subjects against quantile-contour charts, run simulation studies and draw
//! figures.

mod fit;
mod outputs;
mod plot;
mod screen;
mod simulate;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use growthpath::{Error, ErrorClass};

/// Growth-path screening with regression-based functional principal components.
#[derive(Debug, Parser)]
#[command(name = "growthpath", version, about)]
struct Cli {
    /// Worker threads (0 uses every available core); results do not depend on it.
    #[arg(long, default_value_t = 0, global = true)]
    threads: usize,

    /// Also print informational log messages.
    #[arg(long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a component model (and its screening chart) to a CSV dataset.
    Fit(fit::FitArgs),
    /// Rank and flag subjects against a fitted model's chart.
    Screen(screen::ScreenArgs),
    /// Generate synthetic data or run estimation / screening-power studies.
    Simulate(simulate::SimulateArgs),
    /// Draw an SVG figure from a model, dataset or power report.
    Plot(plot::PlotArgs),
}

/// Failure of a command, mapped to an exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

impl Failure {
    fn report(&self) -> (u8, String) {
        match self {
            Failure::Usage(msg) => (1, format!("ERROR usage: {msg}")),
            Failure::Lib(e) => {
                let status = match e.class() {
                    ErrorClass::Data => 2,
                    ErrorClass::Numerical => 3,
                };
                let msg = e.to_string().replace('\n', " ");
                (status, format!("ERROR {}: {msg}", e.code()))
            }
        }
    }
}

pub type CmdResult<T> = std::result::Result<T, Failure>;

struct StderrLogger {
    level: log::LevelFilter,
}

impl log::Log for StderrLogger {
    fn enabled(&self, metadata: &log::Metadata) -> bool {
        metadata.level() <= self.level
    }

    fn log(&self, record: &log::Record) {
        if self.enabled(record.metadata()) {
            eprintln!("{}: {}", record.level().as_str().to_lowercase(), record.args());
        }
    }

    fn flush(&self) {}
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").to_string();
            eprintln!("ERROR usage: {}", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    let level = if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    let logger = Box::leak(Box::new(StderrLogger { level }));
    if log::set_logger(logger).is_ok() {
        log::set_max_level(level);
    }
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("ERROR usage: cannot configure {} worker threads: {e}", cli.threads);
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Fit(args) => fit::run(args),
        Command::Screen(args) => screen::run(args),
        Command::Simulate(args) => simulate::run(args),
        Command::Plot(args) => plot::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (status, line) = f.report();
            eprintln!("{line}");
            ExitCode::from(status)
        }
    }
}
