use thiserror::Error;

/// Errors raised anywhere in the Koopman pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("scalar kind mismatch: expected {expected}, found {found}")]
    KindMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("requested rank {requested} exceeds the available rank {available}")]
    RankTooLarge { requested: usize, available: usize },

    #[error("{0} did not converge")]
    ConvergenceFailure(&'static str),

    #[error("matrix is defective or nearly so (eigenvector condition number {0:.3e})")]
    DefectiveMatrix(f64),

    #[error("matrix is singular")]
    SingularMatrix,

    #[error("eigenvalue {0} is zero; its continuous-index logarithm is undefined")]
    ZeroEigenvalue(usize),

    #[error(
        "degenerate spectrum: values {0:.6e} and {1:.6e} are too close to differentiate through"
    )]
    DegenerateSpectrum(f64, f64),

    #[error("loss must be a real 1x1 value, found {0}")]
    NonScalarLoss(String),

    #[error("network specification mismatch: {0}")]
    SpecMismatch(String),

    #[error("ANAE undefined: every reference element is zero")]
    AllReferenceZero,

    #[error("degenerate indexes: {0}")]
    DegenerateIndexes(String),

    #[error("no index map has been established")]
    NoIndexMap,

    #[error("parse error: {0}")]
    ParseError(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },

    #[error("trajectories have unequal lengths: {0}")]
    RaggedTrajectories(String),

    #[error("model has not been trained")]
    NotTrained,

    #[error("no test split was provided")]
    NoTestSplit,

    #[error("unknown hyperparameter `{0}`")]
    UnknownHyperparameter(String),

    #[error("unknown sort key `{0}`")]
    UnknownSortKey(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("epoch {epoch}: {source}")]
    Training {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad user input (files, configuration,
    /// parameters) as opposed to failures while training or predicting.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::SpecMismatch(_)
                | Error::DegenerateIndexes(_)
                | Error::ParseError(_)
                | Error::NonFiniteValue { .. }
                | Error::RaggedTrajectories(_)
                | Error::NoTestSplit
                | Error::UnknownHyperparameter(_)
                | Error::UnknownSortKey(_)
                | Error::InvalidParams(_)
                | Error::Checkpoint(_)
                | Error::RankTooLarge { .. }
                | Error::Io(_)
        )
    }

    pub(crate) fn at_epoch(self, epoch: usize) -> Error {
        Error::Training {
            epoch,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
