//! `nvq`: runs the novel-object VQA protocol on a synthetic world, one
//! artifact-producing subcommand per stage.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use nvq_core::experiment::ExperimentConfig;

mod commands;
pub mod error;
pub mod manifest;
pub mod report;

pub use commands::{EvalFile, Layout, PartitionIds, Provenance};
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "nvq", version, about = "Novel-object VQA experiments on a synthetic world")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Root directory of all artifacts.
    #[arg(long, global = true, default_value = "nvq-out")]
    pub out_dir: PathBuf,
    /// Architecture override: 1 or 2.
    #[arg(long, global = true)]
    pub arch: Option<String>,
    /// Vocabulary setting override: train, oracle, gen or gen-expanded.
    #[arg(long, global = true)]
    pub setting: Option<String>,
    /// Auxiliary data override: none, text or text+im.
    #[arg(long, global = true)]
    pub aux: Option<String>,
    /// Image feature override: A, B, EF or LF.
    #[arg(long, global = true)]
    pub feat: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate the synthetic world: dataset, scenes, features, corpus, external embeddings.
    Genworld,
    /// Split questions into known-only train/val and novel test parts.
    Split,
    /// Build the question vocabulary of the configured setting.
    ExpandVocab,
    /// Cross class images with corpus sentences into weak pairs.
    GenPairs,
    /// Pre-train the sequence autoencoder and export its encoder.
    PretrainAe,
    /// Train the VQA model(s) of the configured grid cell.
    Train,
    /// Evaluate a trained grid cell.
    Eval,
    /// Tabulate every evaluated grid cell.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Genworld => "genworld",
            Command::Split => "split",
            Command::ExpandVocab => "expand-vocab",
            Command::GenPairs => "gen-pairs",
            Command::PretrainAe => "pretrain-ae",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Report => "report",
        }
    }
}

/// Loads the configuration file (if any) and applies the command-line overrides.
pub fn resolve_config(args: &GlobalArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let mut value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            if let (Some(seed), Some(obj)) = (args.seed, value.as_object_mut()) {
                obj.insert("seed".into(), seed.into());
            }
            serde_json::from_value::<ExperimentConfig>(value)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => match args.seed {
            Some(seed) => ExperimentConfig::new(seed),
            None => return Err(CliError::Config("no seed: pass --seed or a --config with a `seed` key".into())),
        },
    };
    if let Some(a) = &args.arch {
        config.arch = a.parse()?;
    }
    if let Some(s) = &args.setting {
        config.vocab = s.parse()?;
    }
    if let Some(a) = &args.aux {
        config.aux = a.parse()?;
    }
    if let Some(f) = &args.feat {
        config.feat = f.parse()?;
    }
    config.validate()?;
    Ok(config)
}

pub fn run(cli: &Cli) -> Result<()> {
    let config = resolve_config(&cli.global)?;
    let layout = Layout::new(&config, &cli.global.out_dir);
    match cli.command {
        Command::Genworld => commands::genworld(&layout),
        Command::Split => commands::split(&layout),
        Command::ExpandVocab => commands::expand_vocab(&layout),
        Command::GenPairs => commands::gen_pairs(&layout),
        Command::PretrainAe => commands::pretrain_ae(&layout),
        Command::Train => commands::train(&layout),
        Command::Eval => commands::eval(&layout),
        Command::Report => {
            let text = commands::report(&layout)?;
            print!("{text}");
            Ok(())
        }
    }
}
