use std::process::ExitCode;

use clap::Parser;
use factlogic_cli::cli::Cli;
use factlogic_cli::commands::run;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::to_string(&e.report()).unwrap_or_else(|_| e.to_string());
            eprintln!("{report}");
            ExitCode::from(e.exit_code())
        }
    }
}
