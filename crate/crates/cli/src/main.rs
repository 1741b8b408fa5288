use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = slm_cli::Cli::parse();
    match slm_cli::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(slm_cli::exit_code(&e))
        }
    }
}
