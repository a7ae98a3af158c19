use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = ara_cli::Cli::parse();
    match ara_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
