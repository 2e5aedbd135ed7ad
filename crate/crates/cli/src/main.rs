use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use firstreply_cli::config::keys_help;
use firstreply_cli::{run, CliError, PipelineConfig, Stage};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// Parse archives, drop duplicates and bot accounts.
    Ingest,
    /// Classify communities by their distinctive vocabulary.
    Detect,
    /// Score sentiment, toxicity and attack of every post.
    Score,
    /// Extract newcomers, match communities and users, compute ERR.
    Cohort,
    /// Paired tests, correlations and engagement models.
    Stats,
    /// Simulate growth under default and nicer replies.
    Simulate,
    /// Write a synthetic corpus with planted truth.
    Synth,
    /// Hate-word substitution check and the summary report.
    Report,
    /// Every stage from ingest to report.
    All,
}

impl From<Command> for Stage {
    fn from(c: Command) -> Stage {
        match c {
            Command::Ingest => Stage::Ingest,
            Command::Detect => Stage::Detect,
            Command::Score => Stage::Score,
            Command::Cohort => Stage::Cohort,
            Command::Stats => Stage::Stats,
            Command::Simulate => Stage::Simulate,
            Command::Synth => Stage::Synth,
            Command::Report => Stage::Report,
            Command::All => Stage::All,
        }
    }
}

/// Measures how replies to newcomers relate to their continued engagement
/// in hateful and non-hateful communities.
#[derive(Debug, Parser)]
#[command(name = "firstreply", version, after_long_help = keys_help())]
struct Args {
    /// Stage to run.
    #[arg(value_enum)]
    command: Command,
    /// TOML configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a configuration key (repeatable), e.g. `--set replications=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Log progress to stderr.
    #[arg(short, long)]
    verbose: bool,
}

fn execute(args: &Args) -> Result<(), CliError> {
    let cfg = PipelineConfig::load(args.config.as_deref(), &args.overrides)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    }
    run(args.command.into(), &cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let level = if args.verbose { tracing::Level::INFO } else { tracing::Level::WARN };
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_max_level(level).with_target(false).init();
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
