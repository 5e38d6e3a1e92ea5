use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scpnum_cli::scenario::{ScenarioDoc, BUILT_IN};
use scpnum_cli::{load_scenario, run, seed_from_env, validate, Mode};

/// Exit status when the command ran but the result is not acceptable.
const EXIT_UNSUCCESSFUL: u8 = 1;
/// Exit status for unusable input: bad scenario, bad environment, oracle budget.
const EXIT_INPUT: u8 = 2;

#[derive(Parser)]
#[command(
    name = "scpnum",
    version,
    about = "Rate allocation for S-curve utilities by sequential convex programming"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write trace.csv and result.txt.
    Run {
        /// Scenario file (JSON) or built-in name.
        scenario: String,
        #[arg(long, value_enum, default_value = "engine")]
        mode: Mode,
        #[arg(long, default_value = "scpnum-out")]
        out: PathBuf,
    },
    /// Compare the solver against the grid-search oracle and write validation.txt.
    Validate {
        scenario: String,
        #[arg(long, default_value = "scpnum-out")]
        out: PathBuf,
    },
    /// List the built-in scenarios.
    Scenarios {
        /// Print the JSON document of one built-in scenario.
        #[arg(long)]
        show: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Scenarios { show: None } => {
            for name in BUILT_IN {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
        Command::Scenarios { show: Some(name) } => match ScenarioDoc::built_in(&name) {
            Some(doc) => {
                println!("{}", doc.to_json());
                ExitCode::SUCCESS
            }
            None => {
                eprintln!("error: no built-in scenario named `{name}`");
                ExitCode::from(EXIT_INPUT)
            }
        },
        Command::Run { scenario, mode, out } => {
            let sc = match load_scenario(&scenario) {
                Ok(sc) => sc,
                Err(e) => return input_error(e),
            };
            report(run(&sc, mode, &out))
        }
        Command::Validate { scenario, out } => {
            let seed = match seed_from_env() {
                Ok(s) => s,
                Err(e) => return input_error(e),
            };
            let sc = match load_scenario(&scenario) {
                Ok(sc) => sc,
                Err(e) => return input_error(e),
            };
            report(validate(&sc, &out, seed))
        }
    }
}

fn input_error(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_INPUT)
}

fn report(outcome: Result<scpnum_cli::Outcome, scpnum_cli::CommandError>) -> ExitCode {
    match outcome {
        Ok(o) => {
            println!("{}", o.summary);
            if o.success {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_UNSUCCESSFUL)
            }
        }
        Err(e @ scpnum_cli::CommandError::Oracle(_)) => input_error(e),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_UNSUCCESSFUL)
        }
    }
}
