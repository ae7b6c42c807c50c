//! `phasorgrid` command-line front end.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | output could not be written |
//! | 2 | usage error (bad flags, unknown case, unknown or empty channel selection) |
//! | 3 | input could not be read or parsed |
//! | 4 | scenario failed validation |
//! | 5 | numerical failure during the run |

mod plot;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "phasorgrid",
    version,
    about = "Phasor-domain simulator for two microgrids coupled by a back-to-back converter",
    after_help = "Exit codes: 0 success, 1 output write failure, 2 usage error, \
                  3 unreadable or malformed input, 4 validation failure, 5 numerical failure.\n\
                  Set PHASORGRID_DATA_DIR to override the bundled feeder and case data."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write record.csv, events.log and summary.txt.
    #[command(group(ArgGroup::new("input").required(true).args(["path", "case", "all_cases"])))]
    Run(RunArgs),
    /// Parse and validate a scenario file without running it.
    Validate {
        /// Scenario file.
        path: PathBuf,
    },
    /// List the built-in cases.
    Cases,
    /// Render channels of a record CSV as SVG plots.
    Plot(PlotArgs),
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Scenario file.
    path: Option<PathBuf>,
    /// Run a built-in case by name (see `phasorgrid cases`).
    #[arg(long, value_name = "NAME")]
    case: Option<String>,
    /// Run every built-in case in parallel, each into `<out>/<case>`.
    #[arg(long)]
    all_cases: bool,
    /// Override the integration step, seconds.
    #[arg(long, value_name = "S")]
    dt: Option<f64>,
    /// Override the simulated duration, seconds. Events after the new end
    /// are dropped.
    #[arg(long, value_name = "S")]
    duration: Option<f64>,
    /// Override the recording decimation (record every N steps).
    #[arg(long, value_name = "N")]
    decimation: Option<usize>,
    /// Output directory. Defaults to `out/<scenario name>`, or `out` with
    /// `--all-cases`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct PlotArgs {
    /// Record CSV written by `run`.
    csv: PathBuf,
    /// Comma-separated channels drawn in one SVG. Repeat for more files.
    #[arg(long, value_name = "A,B", required = true)]
    channels: Vec<String>,
    /// Output directory for the SVG files.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Event log whose event times are drawn as vertical markers.
    /// Defaults to `events.log` beside the CSV when present.
    #[arg(long, value_name = "FILE")]
    events: Option<PathBuf>,
    /// Draw no event markers.
    #[arg(long, conflicts_with = "events")]
    no_events: bool,
    /// Horizontal guide line at this value. Repeatable.
    #[arg(long, value_name = "Y", allow_negative_numbers = true)]
    guide: Vec<f64>,
    /// Fixed y axis limits instead of fitting the data.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    ylim: Option<Vec<f64>>,
    /// Y axis label. Defaults to the channel names.
    #[arg(long)]
    ylabel: Option<String>,
    /// Plot title. Defaults to the name of the CSV's directory.
    #[arg(long)]
    title: Option<String>,
}

#[derive(Debug)]
pub enum CliError {
    Output(String),
    Usage(String),
    Parse(String),
    Invalid(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Output(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Parse(_) => 3,
            CliError::Invalid(_) => 4,
            CliError::Numerical(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Output(m)
            | CliError::Usage(m)
            | CliError::Parse(m)
            | CliError::Invalid(m)
            | CliError::Numerical(m) => m,
        }
    }
}

/// Writes every file to a temporary name in `dir` first and renames them
/// into place only once all of them were written.
pub fn write_atomic(dir: &Path, files: &[(&str, &[u8])]) -> Result<(), CliError> {
    use std::io::Write;
    let fail = |what: &str, e: &dyn std::fmt::Display| {
        CliError::Output(format!("{}: {what}: {e}", dir.display()))
    };
    std::fs::create_dir_all(dir).map_err(|e| fail("cannot create directory", &e))?;
    let mut staged = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let mut tmp = tempfile::Builder::new()
            .prefix(&format!(".{name}."))
            .tempfile_in(dir)
            .map_err(|e| fail("cannot create temporary file", &e))?;
        tmp.write_all(bytes)
            .and_then(|_| tmp.as_file().sync_all())
            .map_err(|e| fail(name, &e))?;
        staged.push((tmp, dir.join(name)));
    }
    for (tmp, path) in staged {
        tmp.persist(&path)
            .map_err(|e| fail("cannot rename into place", &e.error))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run::run_command(&args),
        Command::Validate { path } => run::validate_command(&path),
        Command::Cases => {
            run::list_cases();
            Ok(())
        }
        Command::Plot(args) => plot::plot_command(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
