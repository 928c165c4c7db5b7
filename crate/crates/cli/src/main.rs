mod config;
mod pipeline;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::pipeline::{Command, Experiment};
use crate::report::Report;

const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_CONFIG: u8 = 3;

/// Desk-scale Aviles–Giga experiments on ellipse and stadium domains.
///
/// Outputs go to the config's `output` directory, resolved relative to the
/// config file. `AGLAB_THREADS` caps the worker threads.
#[derive(Parser, Debug)]
#[command(name = "aglab", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML experiment config.
    config: PathBuf,
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("AGLAB_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| anyhow::anyhow!("AGLAB_THREADS must be a positive integer, got {v:?}"))?;
        if n == 0 {
            anyhow::bail!("AGLAB_THREADS must be a positive integer, got 0");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    let loaded = match config::load(&cli.config) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let run = || -> anyhow::Result<(pipeline::Status, Report)> {
        let mut out = Report::create(loaded.output_dir(), loaded.hash.clone(), loaded.config.seed)?;
        let exp = Experiment::new(loaded.clone())?;
        let status = pipeline::run(cli.command, &exp, &mut out)?;
        Ok((status, out))
    };
    match run() {
        Ok((status, out)) => {
            println!("wrote {} files to {}", out.written().len(), loaded.output_dir().display());
            if status.not_converged.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("not converged at eps = {:?}", status.not_converged);
                ExitCode::from(EXIT_NOT_CONVERGED)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| matches!(c.downcast_ref::<aglab::Error>(), Some(aglab::Error::NotConverged { .. }))) {
                ExitCode::from(EXIT_NOT_CONVERGED)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
