use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("spike perturbation must be positive, got d = {0}")]
    NegativePerturbation(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("invalid spectral point: {0}")]
    InvalidPoint(String),
    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("rightmost spectral edge not found: {0}")]
    EdgeNotFound(String),
    #[error("argument {value} outside admissible window ({lo}, {hi})")]
    OutOfWindow { value: f64, lo: f64, hi: f64 },
    #[error("point {x} is not above the spectral edge {edge}")]
    BelowEdge { x: f64, edge: f64 },
    #[error("quantile index {index} outside 1..={max}")]
    QuantileOutOfRange { index: usize, max: usize },
    #[error("singular denominator |1 + m sigma| = {0:.3e}")]
    SingularDenominator(f64),
    #[error("label {0} is not a supercritical outlier")]
    LabelNotOutlier(usize),
    #[error("random number generation failed: {0}")]
    RngFailure(String),
    #[error("matrix decomposition failed: {0}")]
    DecompositionFailure(String),
    #[error("index {index} out of range (size {size})")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("at least {min} resamples are required, got {got}")]
    InsufficientResamples { got: usize, min: usize },
    #[error("sample draw carries no singular vectors")]
    MissingVectors,
    #[error("population eigenbases are required for eigenvector statistics")]
    MissingBases,
    #[error("divergent sum: |lambda_nu - lambda_outlier| = {0:.3e}")]
    DivergentSum(f64),
    #[error("closed-form shrinkage requires identity base spectra (A = I, B = I)")]
    NotIsotropicBase,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
