use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use fracspike::harness::{self, Mode, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "fracspike", version, about = "Concentrating standing waves of the fractional NLS")]
struct Cli {
    /// ground-state | residual-scan | spectrum | corrector | reduce |
    /// find-critical | concentration | assemble | scaling-study
    mode: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = cli
        .mode
        .parse::<Mode>()
        .and_then(|mode| Ok((mode, RunConfig::load(&cli.config)?)))
        .and_then(|(mode, config)| harness::run(mode, config, cli.out.as_deref(), cli.seed));
    match result {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            println!("{} files written, manifest.json", outcome.manifest.files.len() + 1);
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::EXIT_ERROR as u8)
        }
    }
}
