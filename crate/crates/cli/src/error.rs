use std::fmt;

/// Pipeline stage an error surfaced from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Load,
    Pairs,
    Featurize,
    Reduce,
    Train,
    Score,
    Evaluate,
    Search,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Pairs => "pairs",
            Stage::Featurize => "featurize",
            Stage::Reduce => "reduce",
            Stage::Train => "train",
            Stage::Score => "score",
            Stage::Evaluate => "evaluate",
            Stage::Search => "search",
            Stage::Write => "write",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: priorart::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// 2 for invalid input, 3 for runtime and numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Stage { source, .. } if !source.is_validation() => 3,
            _ => 2,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            CliError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub trait StageExt<T> {
    fn stage(self, stage: Stage) -> CliResult<T>;
}

impl<T> StageExt<T> for priorart::Result<T> {
    fn stage(self, stage: Stage) -> CliResult<T> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}
