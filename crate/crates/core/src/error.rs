use alloc::string::String;

/// Errors raised by model construction, filtering and optimization.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch for {name}: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    DimensionMismatch {
        name: String,
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("non-finite input at step {n}")]
    NonFiniteInput { n: usize },

    #[error("non-finite filter state at step {n}")]
    NonFiniteState { n: usize },

    #[error("non-finite derivative at step {n}, parameters ({i}, {j})")]
    NonFiniteDerivative { n: usize, i: usize, j: usize },

    #[error("observation noise variance estimate underflows the floor ({sigma2:e})")]
    DegenerateLikelihood { sigma2: f64 },

    #[error("overflow evaluating parameter transform at theta = {theta}")]
    Overflow { theta: f64 },

    #[error("non-finite objective at {context}")]
    NonFiniteObjective { context: String },

    #[error("line search failed after {evaluations} evaluations")]
    LineSearchFailure { evaluations: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn mismatch(name: &str, expected: (usize, usize), got: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            name: name.into(),
            expected_rows: expected.0,
            expected_cols: expected.1,
            rows: got.0,
            cols: got.1,
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
