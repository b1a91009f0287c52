use std::process::ExitCode;

use clap::Parser;
use radreg_cli::commands::{execute, Cli};
use radreg_cli::{classify, EXIT_OK, EXIT_USER};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_OK as u8);
        }
        Err(e) => {
            let (_, body) = classify(&anyhow::Error::new(e));
            eprintln!("{body}");
            return ExitCode::from(EXIT_USER as u8);
        }
    };
    match execute(cli.command) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            ExitCode::SUCCESS
        }
        Err(err) => {
            let (status, body) = classify(&err);
            eprintln!("{body}");
            ExitCode::from(status as u8)
        }
    }
}
