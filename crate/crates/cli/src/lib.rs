pub mod args;
pub mod commands;
pub mod config;
pub mod plot;

use clap::error::ErrorKind;
use clap::Parser;

use nslx_core::error::{Error, Result};

use args::{Cli, Command, PriorCommand};

/// Caps the global thread pool when NSLX_THREADS is set. Must run before
/// any parallel work; a pool that is already built is left untouched.
fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("NSLX_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            Error::invalid(format!("NSLX_THREADS='{raw}' is not a positive integer"))
        })?;
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Prior(PriorCommand::Sample(a)) => commands::prior_sample(a),
        Command::Fit(a) => commands::fit(a),
        Command::Mcmc(a) => commands::mcmc(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Predict(a) => commands::predict_cmd(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Active(a) => commands::active(a),
        Command::Plot(a) => commands::plot(a),
    }
}

/// Runs the CLI on `argv` (without the program name) and returns the exit
/// code: 0 on success, 1 for usage and validation problems, 2 for numeric
/// failures.
pub fn run<I: IntoIterator<Item = String>>(argv: I) -> i32 {
    let full = std::iter::once("nslx".to_string()).chain(argv);
    let cli = match Cli::try_parse_from(full) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let _ = e.print();
            return 1;
        }
    };
    let outcome = init_threads().and_then(|()| dispatch(&cli));
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numeric(_) => 2,
                Error::Invalid(_) | Error::Io(_) => 1,
            }
        }
    }
}
