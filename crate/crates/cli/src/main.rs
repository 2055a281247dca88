use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use nsrff::experiment::{
    cmd_eval, cmd_generate, cmd_offsets, cmd_sweep, cmd_train, Console, ExperimentConfig, SweepKind,
};
use nsrff::signal::SplitName;

/// RF fingerprinting experiments with neural carrier synchronization.
#[derive(Debug, Parser)]
#[command(name = "nsrff", version)]
struct Cli {
    /// TOML experiment config; unspecified fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root random seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Only print results and errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// Override a config value, e.g. `--set dataset.known_devices=4`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with all seven splits.
    Generate,
    /// Train the configured pipeline on a dataset's training split.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate a trained model on test splits.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Directory holding model.json / model.bin.
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated split names (closed, open1, open2, open2_3, open4, open4_5).
        #[arg(long, value_delimiter = ',')]
        splits: Option<Vec<SplitName>>,
    },
    /// Train and evaluate over an SNR or complexity grid.
    Sweep {
        /// `snr` or `complexity`.
        kind: SweepKind,
    },
    /// Export TS and NS offset estimates of one split.
    Offsets {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "closed")]
        split: SplitName,
    },
}

fn load_config(cli: &Cli) -> nsrff::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for o in &cli.overrides {
        cfg.set(o)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    let console = Console { quiet: cli.quiet };
    match &cli.command {
        Command::Generate => {
            cmd_generate(&cfg, &cli.out, console)?;
        }
        Command::Train { data } => {
            cmd_train(&cfg, data, &cli.out, console)
                .with_context(|| format!("training on {}", data.display()))?;
        }
        Command::Eval {
            data,
            model,
            splits,
        } => {
            cmd_eval(&cfg, data, model, &cli.out, splits.as_deref(), console)?;
        }
        Command::Sweep { kind } => {
            cmd_sweep(*kind, &cfg, &cli.out, console)?;
        }
        Command::Offsets { data, model, split } => {
            cmd_offsets(&cfg, data, model.as_deref(), *split, &cli.out, console)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e
                .chain()
                .find_map(|c| c.downcast_ref::<nsrff::Error>())
                .is_some_and(nsrff::Error::is_validation);
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}
