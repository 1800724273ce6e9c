mod chart;
mod config;
mod run;

use std::process::ExitCode;

use clap::Parser;

use config::{Cli, Mode};
use run::Failure;

fn init_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("MATCHFN_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(format!("MATCHFN_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Config(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| {
        let cfg = cli.command.resolve().map_err(Failure::Config)?;
        match cfg.mode {
            Mode::Diagnose => run::diagnose(&cfg),
            Mode::Estimate => run::run_estimate(&cfg),
            Mode::Simulate => run::simulate(&cfg),
            Mode::Validate => run::validate(&cfg),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(m) => eprintln!("error: config: {m}"),
                Failure::Io(m) => eprintln!("error: io: {m}"),
                Failure::Estimation(m) => eprintln!("error: {m}"),
                Failure::Rejected => eprintln!("validation failed: recovery missed at least one threshold"),
            }
            ExitCode::from(f.exit_code())
        }
    }
}
