//! Error type shared by every module.

use thiserror::Error;

/// Everything that can go wrong while configuring or running a simulation.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing, out of range, or inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("could not place {aps} APs with the separation constraint after {attempts} attempts")]
    PlacementInfeasible { aps: usize, attempts: usize },

    #[error("shadow-fading covariance is not positive definite")]
    Covariance,

    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),

    /// The matched filter of a calibration receiver produced zero energy.
    #[error("calibration measurement {tx} -> {rx} has zero matched-filter energy")]
    MeasurementDegenerate { tx: usize, rx: usize },

    #[error("edge ({0}, {1}) is not measured in both directions within a frame")]
    ScheduleIncomplete(usize, usize),

    #[error("innovation covariance is singular")]
    FilterSingular,

    #[error("phase solve failed: {0}")]
    Unsolvable(String),

    #[error("residual-phase statistics need at least {min} frames, got {got}")]
    StatisticsUnstable { min: usize, got: usize },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wraps the error with a description of where it happened.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True when the root cause is a configuration problem.
    pub fn is_config(&self) -> bool {
        match self {
            Error::InvalidConfig(_) => true,
            Error::Context { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}
