use thiserror::Error;

/// Errors raised by tableau handling, stepping and the analysis harness.
#[derive(Debug, Error)]
pub enum GlmError {
    #[error("tableau schema violation in field `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("dimension mismatch in `{field}`: expected {expected}, found {found}")]
    Dimension {
        field: String,
        expected: String,
        found: String,
    },

    #[error("non-finite entry in `{field}`")]
    NonFinite { field: String },

    #[error("resolvent I - zA is singular at z = {re} + {im}i")]
    SingularResolvent { re: f64, im: f64 },

    #[error("coefficient matrix A is singular (eigenvalue of modulus {modulus:e})")]
    SingularCoefficients { modulus: f64 },

    #[error("newton iteration diverged after {iterations} iterations (last residual {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("newton iteration did not converge in {iterations} iterations (last residual {residual:e})")]
    NewtonMaxIterations { iterations: usize, residual: f64 },

    #[error("singular newton matrix in stage block {stage}")]
    SingularStageJacobian { stage: usize },

    #[error("algebraic constraint solve failed at stage {stage}: {reason}")]
    AlgebraicSolve { stage: usize, reason: String },

    #[error("(t_final - t0) / h = {ratio} is not a positive integer")]
    NonIntegerStepCount { ratio: f64 },

    #[error("step {n} at t = {t} failed: {source}")]
    StepFailure {
        n: usize,
        t: f64,
        #[source]
        source: Box<GlmError>,
    },

    #[error("non-finite external state after step {n} at t = {t}")]
    Unstable { n: usize, t: f64 },

    #[error("derivatives up to order {order} are not available and bootstrap is disabled")]
    MissingDerivatives { order: usize },

    #[error("bootstrap starting procedure failed: {0}")]
    Bootstrap(String),

    #[error("inconsistent initial data: |g(x0, z0)| = {residual:e}")]
    InconsistentInitialData { residual: f64 },

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: String, message: String },

    #[error("incompatible method and problem: {0}")]
    Incompatible(String),

    #[error("order fit needs at least 3 rungs, got {0}")]
    TooFewRungs(usize),

    #[error("order fit needs positive errors, got {value} at rung {rung}")]
    NonPositiveError { rung: usize, value: f64 },

    #[error("spectral radius {0} exceeds one")]
    SpectralRadius(f64),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("rung {rung} (h = {h}) failed: {source}")]
    Rung {
        rung: usize,
        h: f64,
        #[source]
        source: Box<GlmError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GlmError {
    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        GlmError::Schema {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn param(name: impl Into<String>, message: impl Into<String>) -> Self {
        GlmError::InvalidParameter {
            name: name.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by the caller's input rather than the numerics.
    pub fn is_usage(&self) -> bool {
        match self {
            GlmError::Schema { .. }
            | GlmError::Dimension { .. }
            | GlmError::NonFinite { .. }
            | GlmError::NonIntegerStepCount { .. }
            | GlmError::UnknownProblem(_)
            | GlmError::InvalidParameter { .. }
            | GlmError::Incompatible(_)
            | GlmError::TooFewRungs(_)
            | GlmError::Precondition(_)
            | GlmError::SpectralRadius(_)
            | GlmError::Io(_) => true,
            GlmError::Rung { source, .. } | GlmError::StepFailure { source, .. } => {
                source.is_usage()
            }
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, GlmError>;
