use std::fmt;

use relmob_core::Error as CoreError;

/// Pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Ingest,
    Graphs,
    Profiles,
    Votes,
    Similarities,
    Standardize,
    Fit,
    Permute,
    Figures,
    Manifest,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Graphs => "graphs",
            Stage::Profiles => "profiles",
            Stage::Votes => "votes",
            Stage::Similarities => "similarities",
            Stage::Standardize => "standardize",
            Stage::Fit => "fit",
            Stage::Permute => "permute",
            Stage::Figures => "figures",
            Stage::Manifest => "manifest",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: CoreError,
    },
    #[error("stage `{stage}` failed: {message}")]
    NonConvergence { stage: Stage, message: String },
}

impl CliError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            CliError::Config(_) => None,
            CliError::Stage { stage, .. } | CliError::NonConvergence { stage, .. } => Some(*stage),
        }
    }

    /// 2 configuration, 3 data, 4 numerical non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage { source, .. } => match source {
                CoreError::InvalidArgument(_) => 2,
                CoreError::Numerical(_) => 4,
                _ => 3,
            },
            CliError::NonConvergence { .. } => 4,
        }
    }
}

/// Attaches a stage to core errors.
pub trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, CliError>;
}

impl<T> AtStage<T> for relmob_core::Result<T> {
    fn at(self, stage: Stage) -> Result<T, CliError> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}
