use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Pipeline stage an error originated from, used when reporting failures of
/// the end-to-end conformal procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Split,
    Variogram,
    Kriging,
    Scoring,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Split => "split",
            Stage::Variogram => "variogram",
            Stage::Kriging => "kriging",
            Stage::Scoring => "scoring",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("curves are not defined on the same time grid")]
    GridMismatch,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("underdetermined basis fit: {samples} samples for {n_basis} basis functions")]
    Underdetermined { samples: usize, n_basis: usize },

    #[error("sites {first} and {second} share coordinates ({u}, {v})")]
    DuplicateSite {
        first: String,
        second: String,
        u: f64,
        v: f64,
    },

    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("no site pair within max lag {max_lag}")]
    EmptyVariogram { max_lag: f64 },

    #[error("degenerate variogram fit: {0}")]
    DegenerateFit(String),

    #[error("singular kriging system: {0}")]
    SingularSystem(String),

    #[error("kriging solver failed to converge (relative residual {residual:e})")]
    SolverFailure { residual: f64 },

    #[error(
        "proximity split at percentile {percentile} leaves {n_train} train and {n_test} test \
         sites; choose a different percentile"
    )]
    DegenerateSplit {
        percentile: u32,
        n_train: usize,
        n_test: usize,
    },

    #[error("{failed} of {total} surrogate predictions failed (first: {first})")]
    SurrogateFailures {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("{failed} of {total} bootstrap resamples failed")]
    BaselineFailure { failed: usize, total: usize },

    #[error("modulation function is non-positive ({value}) at grid index {index}")]
    NonPositiveModulation { index: usize, value: f64 },

    #[error("data generation failed: {0}")]
    Generation(String),

    #[error("{stage} stage: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(self, stage: Stage) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Stage label, if this error was raised inside the conformal pipeline.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn at(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn at(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
