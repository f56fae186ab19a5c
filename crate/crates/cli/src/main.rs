#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod run;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::{Overrides, Task};
use repctl_core::{Error, FieldError};

const EXIT_FAILURE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// Reputation-control experiments: closed forms, HJB solves and Monte Carlo.
#[derive(Parser)]
#[command(name = "repctl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form (or RK4) psi and the optimal pulsing policy.
    ClosedForm(Common),
    /// Finite-difference HJB value surface and optimal control.
    SolveHjb(Common),
    /// One simulated reputation path.
    Simulate(Common),
    /// Monte-Carlo value of a policy.
    Evaluate(Common),
    /// Expected revenue across single-switch policies.
    SweepSwitch(Common),
    /// HJB error under grid refinement.
    Convergence(Common),
    /// Check a config without running it.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<String>,
    /// Base seed; overrides `mc.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    errors: &'a [FieldError],
}

fn report_errors(errors: &[FieldError]) {
    let text = serde_json::to_string_pretty(&ErrorReport { errors }).expect("serializable");
    eprintln!("{text}");
}

fn configure_threads(quiet: bool) {
    let Ok(raw) = std::env::var("REPCTL_THREADS") else {
        return;
    };
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
            {
                if !quiet {
                    eprintln!("warning: REPCTL_THREADS ignored: {e}");
                }
            }
        }
        _ => {
            if !quiet {
                eprintln!("warning: REPCTL_THREADS={raw:?} is not a positive integer; ignored");
            }
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Divergence { .. } | Error::IntegrationFailure { .. } | Error::Cfl { .. } => {
            EXIT_NUMERICAL
        }
        Error::InvalidProblem(_) => EXIT_INVALID,
        _ => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (task, args) = match cli.command {
        Command::ClosedForm(a) => (Some(Task::ClosedForm), a),
        Command::SolveHjb(a) => (Some(Task::SolveHjb), a),
        Command::Simulate(a) => (Some(Task::Simulate), a),
        Command::Evaluate(a) => (Some(Task::Evaluate), a),
        Command::SweepSwitch(a) => (Some(Task::SweepSwitch), a),
        Command::Convergence(a) => (Some(Task::Convergence), a),
        Command::Validate(a) => (None, a),
    };
    let overrides = Overrides {
        task,
        output: args.out.clone(),
        seed: args.seed,
    };

    let parsed = fs::read_to_string(&args.config)
        .map_err(|e| {
            vec![FieldError::new(
                "config",
                format!("{}: {e}", args.config.display()),
            )]
        })
        .and_then(|text| config::parse(&text));
    let config = match parsed {
        Ok(c) => c,
        Err(errors) => {
            report_errors(&errors);
            return ExitCode::from(EXIT_INVALID);
        }
    };

    if task.is_none() {
        let errors = config::validate(&config, &overrides);
        if errors.is_empty() {
            if !args.quiet {
                println!("ok");
            }
            return ExitCode::SUCCESS;
        }
        report_errors(&errors);
        return ExitCode::from(EXIT_INVALID);
    }

    let resolved = match config::resolve(&config, &overrides) {
        Ok(r) => r,
        Err(errors) => {
            report_errors(&errors);
            return ExitCode::from(EXIT_INVALID);
        }
    };
    configure_threads(args.quiet);
    match run::execute(&resolved) {
        Ok(summary) => {
            if !args.quiet {
                println!("{}: {summary}", resolved.task);
                println!("artifacts in {}", resolved.output);
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
