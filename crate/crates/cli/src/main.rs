mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use proulearn::ErrorKind;

use crate::args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.global.quiet {
        "warn"
    } else {
        "info"
    }))
    .format_timestamp(None)
    .init();

    if let Some(jobs) = cli.global.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }

    let result = match &cli.command {
        Command::Pretrain(a) => commands::pretrain(&cli.global, a),
        Command::Select(a) => commands::select(&cli.global, a),
        Command::Adapt(a) => commands::adapt(&cli.global, a),
        Command::Bench(a) => commands::bench(&cli.global, a),
        Command::Mmd(a) => commands::mmd(&cli.global, a),
        Command::SynthGen(a) => commands::synth_gen(&cli.global, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Argument => 2,
                ErrorKind::Io => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}
