mod commands;
mod config;
mod exit;

use std::process::ExitCode;

use clap::Parser;

use config::{Cli, Command, FileConfig};
use exit::CliError;

fn run(cli: &Cli) -> Result<(), CliError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let cfg = config::resolve(cli, file)?;
    match &cli.command {
        Command::Perturb { .. } => commands::perturb(&cfg),
        Command::Embed { .. } => commands::embed(&cfg),
        Command::Score { resume, .. } => commands::score(&cfg, *resume),
        Command::Analyze { scores } => commands::analyze(&cfg, scores.as_ref()),
        Command::Stats { .. } => commands::stats(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(exit::Code::Usage as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ddrbench: {e}");
            e.exit_code()
        }
    }
}
