//! Command-line front end for the behavior-gap evaluation pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use behavior_gap::config::{ProviderKind, RunConfig};
use behavior_gap::pipeline::{Pipeline, PipelineError, StageOutcome};

#[derive(Parser)]
#[command(
    name = "bgap",
    about = "Behavior-gap evaluation harness for task-oriented dialog agents",
    version
)]
struct Cli {
    /// Path to the run configuration file.
    #[arg(long, global = true, default_value = "run.toml")]
    config: PathBuf,

    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the configured provider-call parallelism bound.
    #[arg(long, global = true)]
    max_parallel: Option<usize>,

    /// Override the configured provider kind (scripted or http).
    #[arg(long, global = true)]
    provider: Option<String>,

    /// Redo work even when a matching stage manifest exists.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize the corpus into the canonical transcript artifact.
    Ingest {
        /// Read a MultiWOZ-2.2-style JSON export instead of the configured
        /// transcript file.
        #[arg(long)]
        from_multiwoz: Option<PathBuf>,
    },
    /// Generate one teacher-forced agent response per human-expert turn.
    Generate,
    /// Annotate human references and agent responses with acts and tools.
    Annotate,
    /// Judge every generated response against the scoring rubric.
    Judge,
    /// Aggregate metrics and statistics into the experiment report.
    Analyze,
    /// Run the behavior injection experiment.
    Inject,
    /// Print the experiment report.
    Report,
    /// Score the classifiers against gold annotations in the corpus.
    ValidateClassifiers,
}

fn load_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut config = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(max_parallel) = cli.max_parallel {
        config.max_parallel = max_parallel;
    }
    if let Some(provider) = &cli.provider {
        config.provider.kind = match provider.as_str() {
            "scripted" => ProviderKind::Scripted,
            "http" => ProviderKind::Http,
            other => {
                return Err(PipelineError::Config(format!(
                    "unknown provider `{other}` (expected scripted or http)"
                )))
            }
        };
    }
    config
        .check()
        .map_err(PipelineError::Config)?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let config = load_config(cli)?;
    let pipeline = Pipeline::new(config, cli.force);
    let outcome = match &cli.command {
        Command::Ingest { from_multiwoz } => pipeline.ingest(from_multiwoz.as_deref())?,
        Command::Generate => pipeline.generate()?,
        Command::Annotate => pipeline.annotate()?,
        Command::Judge => pipeline.judge()?,
        Command::Analyze => pipeline.analyze()?,
        Command::Inject => pipeline.inject()?,
        Command::ValidateClassifiers => pipeline.validate_classifiers()?,
        Command::Report => {
            let path = pipeline.config.out_dir.join(behavior_gap::pipeline::REPORT_FILE);
            let text = std::fs::read_to_string(&path).map_err(|_| PipelineError::Prerequisite {
                artifact: path.display().to_string(),
                command: "analyze",
            })?;
            print!("{text}");
            return Ok(());
        }
    };
    match outcome {
        StageOutcome::Ran => eprintln!("done (config {})", pipeline.hash),
        StageOutcome::Skipped => eprintln!("up to date (config {})", pipeline.hash),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
