use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use mvedoe_core::design::Criterion;
use mvedoe_core::pipeline::{FeatureSet, Pipeline, RunConfig, Stage};
use mvedoe_core::Error;

#[derive(Parser, Debug)]
#[command(name = "mvedoe", version, about = "Polycrystal volume elements, features and space-filling training-set designs")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (default: `out`, or the config's `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 0 lets the pool decide.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Feature sets: classic, contrastive or external:PATH. Repeatable.
    #[arg(long, global = true, value_delimiter = ',')]
    features: Vec<String>,

    /// Restrict design and evaluation to these criteria. Repeatable.
    #[arg(long, global = true, value_delimiter = ',')]
    criterion: Vec<Criterion>,

    /// Restrict design and evaluation to these training fractions. Repeatable.
    #[arg(long, global = true, value_delimiter = ',')]
    fraction: Vec<f64>,

    /// Neighbors used by the k-NN surrogate.
    #[arg(long, global = true)]
    k: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate the MVE corpus and its manifest.
    Gen,
    /// Compute or import feature matrices for the corpus.
    Featurize,
    /// Train the contrastive embedding.
    EmbedTrain,
    /// Embed the corpus with the trained model.
    Embed,
    /// Build designs for every feature set, criterion, fraction and replicate.
    Design,
    /// Run the elastic oracle and write target summaries.
    Oracle,
    /// Evaluate designs against random baselines.
    Evaluate,
    /// Summarize the evaluation report.
    Report,
    /// Regenerate the synthetic comparison cloud with designs for all criteria.
    DemoFig5,
    /// Run gen through report in order.
    All,
}

impl Command {
    fn stage(self) -> Option<Stage> {
        Some(match self {
            Command::Gen => Stage::Gen,
            Command::Featurize => Stage::Featurize,
            Command::EmbedTrain => Stage::EmbedTrain,
            Command::Embed => Stage::Embed,
            Command::Design => Stage::Design,
            Command::Oracle => Stage::Oracle,
            Command::Evaluate => Stage::Evaluate,
            Command::Report => Stage::Report,
            Command::DemoFig5 => Stage::DemoFig5,
            Command::All => return None,
        })
    }
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_MISSING: u8 = 3;

fn config_from(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = Some(jobs);
    }
    if let Some(out) = &cli.out {
        config.out = Some(out.clone());
    }
    if !cli.features.is_empty() {
        config.features = cli.features.clone();
    }
    if !cli.criterion.is_empty() {
        config.design.criteria = cli.criterion.clone();
    }
    if !cli.fraction.is_empty() {
        config.design.fractions = cli.fraction.clone();
    }
    if let Some(k) = cli.k {
        config.design.k = k;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli, config: RunConfig) -> anyhow::Result<()> {
    let out = config.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let pipeline = Pipeline::new(config, out)?;
    let written = match cli.command.stage() {
        Some(stage) => pipeline.run(stage)?,
        None => pipeline.run_all()?,
    };
    eprintln!("wrote {} artifacts under {}", written.len(), pipeline.out().display());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::MissingArtifact { .. }) => EXIT_MISSING,
        Some(Error::Config(_)) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    let config = match config_from(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    // Check external feature paths up front so a typo fails as a config error.
    if let Ok(sets) = config.feature_sets() {
        for set in sets {
            if let FeatureSet::External(path) = &set {
                if !path.exists() {
                    eprintln!("error: config error: external feature file {} not found", path.display());
                    return ExitCode::from(EXIT_CONFIG);
                }
            }
        }
    }
    match run(&cli, config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
