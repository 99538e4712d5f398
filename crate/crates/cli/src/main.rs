use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use sdt_cli::{run, CliError, Command, Options, RunConfig};

/// Robust S-divergence fits, tests and influence diagnostics.
#[derive(Parser)]
#[command(name = "sdt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    options: Options,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failures) => {
            eprintln!("sdt: {failures} grid point(s) failed; see the error column");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("sdt: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: &Cli) -> Result<usize, CliError> {
    let cfg = RunConfig::resolve(cli.command, &cli.options)?;
    let output = run(&cfg)?;
    match &cfg.out {
        Some(path) => std::fs::write(path, &output.text).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(output.text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|source| CliError::Io {
                    path: "<stdout>".into(),
                    source,
                })?;
        }
    }
    Ok(output.failures)
}
