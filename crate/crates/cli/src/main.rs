mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::Parser;
use shiftforge_core::verification::{with_thread_cap, Verdict};

use config::{Cli, CommandKind, RunConfig};

fn exit_code(v: Verdict) -> ExitCode {
    match v {
        Verdict::Pass => ExitCode::SUCCESS,
        Verdict::Fail => ExitCode::from(1),
        Verdict::Unresolved => ExitCode::from(2),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on malformed arguments
    let cli = Cli::parse();
    let cfg = match RunConfig::from_cli(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = with_thread_cap(|| match cfg.command {
        CommandKind::Construct => commands::construct(&cfg),
        CommandKind::Verify => commands::verify(&cfg),
        CommandKind::Export => commands::export(&cfg),
    });
    match result {
        Ok(v) => exit_code(v),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
