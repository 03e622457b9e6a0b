use std::path::{Path, PathBuf};
use std::process::ExitCode;

use affectfuse_cli::{compact_caches, run, ConfigError, PipelineError, RunConfig, RunOptions, Stage};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "affectfuse", version, about = "LLM-response fusion experiments for affective text classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Answer chat requests with the offline keyword responder.
    #[arg(long)]
    mock_llm: bool,
    /// Replace embedding files with deterministic hashed vectors.
    #[arg(long)]
    mock_embeddings: bool,
    /// Parallel tuning trials (default: available cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Collect chat responses for every example.
    Collect(StageArgs),
    /// Build feature matrices (runs collect first when needed).
    Featurize(StageArgs),
    /// Random-search hyperparameters for every model.
    Tune(StageArgs),
    /// Fit the selected configuration of every model.
    Train(StageArgs),
    /// Score every fusion plan and the baseline on the test split.
    Evaluate(StageArgs),
    /// Write the result tables.
    Report(StageArgs),
    /// Run every stage.
    Run(StageArgs),
    /// Response cache maintenance.
    #[command(subcommand)]
    Cache(CacheCommand),
}

#[derive(Subcommand)]
enum CacheCommand {
    /// Rewrite response caches without duplicate records.
    Compact {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &Path) -> Result<RunConfig, PipelineError> {
    RunConfig::read(path).map_err(PipelineError::from)
}

fn execute(command: Command) -> Result<(), PipelineError> {
    let (stage, args) = match command {
        Command::Collect(a) => (Stage::Collect, a),
        Command::Featurize(a) => (Stage::Featurize, a),
        Command::Tune(a) => (Stage::Tune, a),
        Command::Train(a) => (Stage::Train, a),
        Command::Evaluate(a) => (Stage::Evaluate, a),
        Command::Report(a) | Command::Run(a) => (Stage::Report, a),
        Command::Cache(CacheCommand::Compact { config }) => {
            let config = load(&config)?;
            for (path, dropped) in compact_caches(&config)? {
                println!("{}: dropped {dropped} duplicate lines", path.display());
            }
            return Ok(());
        }
    };
    if args.jobs == Some(0) {
        return Err(ConfigError::Invalid("--jobs must be at least 1".into()).into());
    }
    let config = load(&args.config)?;
    let opts = RunOptions {
        seed: args.seed,
        mock_llm: args.mock_llm,
        mock_embeddings: args.mock_embeddings,
        jobs: args.jobs,
    };
    let summary = run(&config, &opts, stage)?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
