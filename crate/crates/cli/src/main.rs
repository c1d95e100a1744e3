use std::process::ExitCode;

use clap::Parser;
use nbend::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(run) => nbend::run(run).map(|m| {
            println!("{}: wrote {} artifacts to {}", m.run.name(), m.artifacts.len(), m.run.out().display());
        }),
        Command::Replay(r) => nbend::replay(&r.manifest, r.out).map(|m| {
            println!("replay: {} artifacts identical in {}", m.artifacts.len(), m.run.out().display());
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
