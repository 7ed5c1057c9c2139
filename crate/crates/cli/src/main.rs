use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = nvq_cli::Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match nvq_cli::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nvq {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code())
        }
    }
}
