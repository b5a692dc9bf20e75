mod commands;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use oscdamp::Error;

/// Small-signal modes of lossless power networks and their sensitivity to
/// generator redispatch.
#[derive(Parser, Debug)]
#[command(name = "oscdamp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Grid description file.
    grid: PathBuf,
    /// Freeze load voltages at the solved equilibrium (angle-only model).
    #[arg(long)]
    const_v: bool,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct ModeSelector {
    /// 1-based mode index as listed by `modes`.
    #[arg(long)]
    mode: Option<usize>,
    /// The single electromechanical mode with frequency in LO:HI Hz.
    #[arg(long, value_name = "LO:HI", value_parser = parse_band)]
    mode_hz: Option<(f64, f64)>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the power flow; print bus and line states.
    Pf {
        #[command(flatten)]
        grid: GridArgs,
        /// Bus table as CSV; the line table goes to `<stem>.lines.csv`.
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
        /// Write L, H, M, D, E and J as CSV files into DIR.
        #[arg(long, value_name = "DIR")]
        dump_matrices: Option<PathBuf>,
    },
    /// List all finite modes with frequency, damping ratio and swing profile.
    Modes {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        dump_matrices: Option<PathBuf>,
    },
    /// Sensitivity coefficients of one mode in line coordinates.
    Sens {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        select: ModeSelector,
        /// Also evaluate dλ/dr for shifting generation from GB to GA.
        #[arg(long, value_name = "GA:GB")]
        pair: Option<String>,
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
    },
    /// Exact versus first-order mode along a redispatch.
    Sweep {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        select: ModeSelector,
        /// Generator GA increases by r, GB decreases by r.
        #[arg(long, value_name = "GA:GB")]
        pair: String,
        /// Comma-separated values or START:STOP:STEP.
        #[arg(long, value_name = "LIST", allow_hyphen_values = true)]
        r: String,
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
    },
    /// Rank generator pairs by damping-ratio improvement.
    Rank {
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        select: ModeSelector,
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
    },
    /// Recompute the expected values of every shipped fixture.
    Verify {
        /// Also check the formula against the oracle on a random network.
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
    },
}

fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected LO:HI")?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad number `{a}`"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad number `{b}`"))?;
    if !(lo >= 0.0 && hi > lo) {
        return Err(format!("empty band {lo}:{hi}"));
    }
    Ok((lo, hi))
}

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Usage(String),
    VerificationFailed,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(format!("output error: {e}"))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 64,
            CliError::VerificationFailed => 3,
            CliError::Core(e) => match e {
                Error::Parse { .. } | Error::Validation(_) | Error::Domain(_) => 1,
                Error::Usage(_) | Error::UnknownFixture(_) => 64,
                Error::Convergence { .. }
                | Error::Singular(_)
                | Error::Degenerate(_)
                | Error::Reduction(_)
                | Error::Range { .. }
                | Error::OracleUnavailable(_)
                | Error::Matching(_)
                | Error::Linalg(_) => 2,
            },
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(64),
            };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            match &err {
                CliError::Core(e) => eprintln!("error: {e}"),
                CliError::Usage(m) => eprintln!("error: {m}"),
                CliError::VerificationFailed => eprintln!("error: verification failed"),
            }
            ExitCode::from(err.exit_code())
        }
    }
}
