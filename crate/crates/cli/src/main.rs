//! `ylab` command-line front end.
//!
//! Exit status: 0 on success, 2 for invalid input, 3 when the numerics fail
//! on valid input, 1 for I/O failures.

mod args;
mod commands;
mod config;
mod output;

use std::fmt;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use args::{Cli, Command};

#[derive(Debug)]
pub enum CliError {
    Usage { param: &'static str, reason: String },
    Core(ylab::Error),
    Io(String),
}

impl CliError {
    pub fn usage(param: &'static str, reason: impl Into<String>) -> Self {
        CliError::Usage {
            param,
            reason: reason.into(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage { .. } => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(_) => 2,
            CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage { param, reason } => write!(f, "invalid `{param}`: {reason}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o: {e}"),
        }
    }
}

impl From<ylab::Error> for CliError {
    fn from(e: ylab::Error) -> Self {
        CliError::Core(e)
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("YLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage("YLAB_THREADS", format!("need a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage("YLAB_THREADS", e.to_string()))
}

fn run(cmd: &Command) -> Result<String, CliError> {
    let outcome = match cmd {
        Command::KdeEig(a) => commands::kde_eig(a),
        Command::CouplingBound(a) => commands::coupling_bound(a),
        Command::FactorDemo(a) => commands::factor_demo(a),
        Command::SeriesBand(a) => commands::series_band(a),
        Command::LocalpolyBand(a) => commands::localpoly_band(a),
        Command::CltBound(a) => commands::clt_bound_cmd(a),
        Command::LpKs(a) => commands::lp_ks(a),
        Command::Coverage(a) => commands::coverage(a),
    }?;
    for (path, bytes) in &outcome.files {
        output::emit(path.as_deref(), bytes)?;
    }
    let written: Vec<String> = outcome
        .files
        .iter()
        .filter_map(|(p, _)| p.as_ref().map(|p| p.display().to_string()))
        .collect();
    Ok(if written.is_empty() {
        outcome.summary
    } else {
        format!("{} -> {}", outcome.summary, written.join(", "))
    })
}

fn parse() -> Result<Cli, CliError> {
    let argv = config::merge(std::env::args_os().collect())?;
    let matches = Cli::command()
        .mut_subcommands(|s| s.args_override_self(true).allow_negative_numbers(true))
        .try_get_matches_from(argv)
        .unwrap_or_else(|e| e.exit());
    Cli::from_arg_matches(&matches).map_err(|e| CliError::usage("arguments", e.to_string()))
}

fn main() -> ExitCode {
    let result = parse().and_then(|cli| {
        init_threads()?;
        run(&cli.command)
    });
    match result {
        Ok(summary) => {
            // keep stdout clean when it carries the artifact
            eprintln!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
