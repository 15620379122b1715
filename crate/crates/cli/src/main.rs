mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use output::{CliResult, Failure};

fn dispatch(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.command.common().threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot start {n} threads: {e}")))?;
    }
    let config = &cli.command;
    match &cli.command {
        Command::Fit(a) => commands::fit(a, config),
        Command::Simulate(a) => commands::simulate(a, config),
        Command::Gof(a) => commands::gof(a, config),
        Command::Select(a) => commands::select(a, config),
        Command::Summarize(a) => commands::summarize_cmd(a, config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CROWDPULSE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let first =
                e.to_string().lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ").to_string();
            eprintln!("{}", Failure::usage(first).line());
            return ExitCode::from(output::EXIT_USAGE);
        }
    };
    log::debug!("running {}", cli.command.name());
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.line());
            ExitCode::from(f.code)
        }
    }
}
