use std::process::ExitCode;

use clap::Parser;
use muonlab::cli::{run, Cli, Outcome};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(outcome) => {
            match &outcome {
                Outcome::Done(m) => println!("{m}"),
                Outcome::VerifyFailed(m) => println!("{m}"),
                Outcome::Diverged(m) => eprintln!("{m}"),
            }
            ExitCode::from(outcome.exit_code())
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
