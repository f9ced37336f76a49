use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sentfeed_cli::{run_pipeline, CliError, RunConfig, Stage};

/// Sentiment-feedback estimation pipeline.
#[derive(Parser)]
#[command(name = "sentfeed", version)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write the synthetic inputs.
    Simulate,
    /// Standardised sentiment shocks.
    Shocks,
    /// Local-projection impulse responses.
    Irf,
    /// Geometric fit of the responses.
    Fit,
    /// Parametric bootstrap of the fitted parameters.
    Bootstrap,
    /// Fixed-effects panel regressions by horizon.
    Panel,
    /// Portfolio sorts with turnover and costs.
    Sort,
    /// Multiple-testing adjusted p-values.
    Adjust,
    /// Falsification tests.
    Falsify,
    /// Calibration and figure tables.
    Report,
    /// Every stage listed in the config.
    Pipeline,
}

impl Command {
    fn stage(self) -> Option<Stage> {
        Some(match self {
            Command::Simulate => Stage::Simulate,
            Command::Shocks => Stage::Shocks,
            Command::Irf => Stage::Irf,
            Command::Fit => Stage::Fit,
            Command::Bootstrap => Stage::Bootstrap,
            Command::Panel => Stage::Panel,
            Command::Sort => Stage::Sort,
            Command::Adjust => Stage::Adjust,
            Command::Falsify => Stage::Falsify,
            Command::Report => Stage::Report,
            Command::Pipeline => return None,
        })
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(stage) = cli.command.stage() {
        cfg.stages = stage.closure();
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(format!("--threads: {e}")))?;
    }
    let outcome = run_pipeline(&cfg)?;
    for f in &outcome.manifest.outputs {
        println!("{}", outcome.out_dir.join(&f.path).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
