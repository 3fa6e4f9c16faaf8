use std::path::PathBuf;
use std::process::ExitCode;

use cgo_core::config::ModelConfig;
use cgo_core::error::ConfigError;
use cgo_core::pipeline::{run_command, Command, RunOptions};
use cgo_core::CgoError;
use clap::Parser;

/// Complex geometric optics pipeline: phases, transport, assembly and order sweeps.
#[derive(Debug, Parser)]
#[command(name = "cgo", version)]
struct Cli {
    /// Model configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// One of check, phase, transport, assemble, sweep, compare, all.
    #[arg(long, value_name = "NAME")]
    command: Option<Command>,
    /// Output directory for report.csv, summary.txt and the CSV dumps.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Comma-separated eps ladder for the sweeps, strictly decreasing.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

fn load(cli: &Cli) -> Result<(ModelConfig, Command, PathBuf), CgoError> {
    let text = std::fs::read_to_string(&cli.config)?;
    let mut cfg = ModelConfig::parse(&text)?;
    if let Some(eps) = &cli.eps {
        if eps.len() < 2 || eps.windows(2).any(|w| !(w[1] < w[0])) || eps.iter().any(|e| !(*e > 0.0)) {
            return Err(ConfigError::Invalid(
                "--eps must list at least two positive, strictly decreasing values".into(),
            )
            .into());
        }
        cfg.numerics.eps = eps.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.numerics.seed = seed;
    }
    let command = match (cli.command, &cfg.run.command) {
        (Some(c), _) => c,
        (None, Some(name)) => name.parse().map_err(ConfigError::Invalid)?,
        (None, None) => Command::All,
    };
    let out = cli.out.clone().or_else(|| cfg.run.out.as_ref().map(PathBuf::from)).unwrap_or_else(|| "out".into());
    Ok((cfg, command, out))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = load(&cli).and_then(|(cfg, command, out)| {
        let started = std::time::Instant::now();
        let outcome = run_command(&cfg, command, &RunOptions::new(&out))?;
        print!("{}", outcome.report.summary_text());
        println!("artifacts in {} ({:.1} s)", out.display(), started.elapsed().as_secs_f64());
        Ok(outcome.exit_code())
    });
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
