use std::fmt;

use thiserror::Error;

/// Pipeline stage an error surfaced in, used to tag failures in experiment reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Timing,
    Planning,
    Simulation,
    Binning,
    Sync,
    TopUp,
    Stitch,
    Fit,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Timing => "step 1 (kernel timing)",
            Stage::Planning => "steps 2-4 (execution planning)",
            Stage::Simulation => "step 5 (run execution)",
            Stage::Binning => "step 6 (golden-run binning)",
            Stage::Sync => "step 7 (time sync / LOI identification)",
            Stage::TopUp => "step 8 (LOI top-up runs)",
            Stage::Stitch => "step 9 (stitching)",
            Stage::Fit => "step 9 (regression fit)",
            Stage::Output => "artifact output",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("query outside simulated horizon: {0}")]
    OutOfHorizon(String),

    #[error("tick period mismatch: anchor {anchor} ns, timestamp {timestamp} ns")]
    TickPeriodMismatch { anchor: i64, timestamp: i64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("too few executions: need {needed}, run has {found}")]
    TooFewExecutions { needed: usize, found: usize },

    #[error("power did not stabilize for any execution count in [{lo}, {hi}]")]
    UnstablePower { lo: u32, hi: u32 },

    #[error("empty profile: {0}")]
    EmptyProfile(String),

    #[error("underdetermined fit: degree {degree} needs {needed} distinct points, got {found}")]
    Underdetermined {
        degree: usize,
        needed: usize,
        found: usize,
    },

    #[error("profile component mismatch: {0} vs {1}")]
    ComponentMismatch(String, String),

    #[error("{file}:{line}: {message}")]
    Schema {
        file: String,
        line: u64,
        message: String,
    },

    #[error("{stage}: {source}")]
    AtStage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn at(self, stage: Stage) -> Self {
        match self {
            e @ Error::AtStage { .. } => e,
            e => Error::AtStage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Innermost error, with stage wrapping stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStage { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait StageExt<T> {
    fn at(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn at(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
