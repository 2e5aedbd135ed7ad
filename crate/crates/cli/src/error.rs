use firstreply_core::lexicon::LexiconError;
use firstreply_core::stats::StatsError;
use firstreply_core::study::StudyError;
use firstreply_core::synth::SynthError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(
        "config hash {current} differs from {recorded}, the hash earlier stages in {dir} ran with; \
         rerun from `ingest` (or `all`) with this config, or restore the earlier config"
    )]
    ConfigMismatch { current: String, recorded: String, dir: String },
    #[error("stage `{stage}` needs `{artifact}`, which is missing; run `{producer}` first")]
    MissingArtifact { stage: &'static str, artifact: String, producer: &'static str },
    #[error("artifact `{0}` changed since it was written; rerun the stage that produces it")]
    Tampered(String),
    #[error("data: {0}")]
    Data(String),
    #[error("convergence: {0}")]
    Convergence(String),
    #[error(transparent)]
    Study(#[from] StudyError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    /// Process exit status: 2 configuration, 3 data, 4 convergence or
    /// identifiability.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::ConfigMismatch { .. } | CliError::Synth(_) => 2,
            CliError::Convergence(_) => 4,
            CliError::Study(e) if is_convergence(e) => 4,
            _ => 3,
        }
    }
}

fn is_convergence(e: &StudyError) -> bool {
    let stats = |s: &StatsError| {
        matches!(
            s,
            StatsError::Identifiability(_)
                | StatsError::Separation { .. }
                | StatsError::TooFewGroups(_)
                | StatsError::Singular
                | StatsError::NonFinite(_)
        )
    };
    match e {
        StudyError::Model { source, .. } => stats(source),
        StudyError::Stats(s) => stats(s),
        StudyError::Lexicon(LexiconError::NonFinite { .. }) => true,
        _ => false,
    }
}
