use nalgebra::DVector;
use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("matrix {which} is not symmetric (relative asymmetry {asymmetry:.3e})")]
    AsymmetricMatrix { which: &'static str, asymmetry: f64 },
    #[error("matrix {which} is not positive definite")]
    NotPositiveDefinite { which: &'static str },
    #[error("capacitance matrix is singular (|det C| = {det:.3e})")]
    SingularC { det: f64 },
    #[error("{count} characteristic velocities are imaginary (non-positive eigenvalue)")]
    ComplexVelocities { count: usize },
    #[error("v = {v} lies on an asymptote of the characteristic function")]
    AtAsymptote { v: f64 },
    #[error("no complex-conjugate root pair: all roots are real")]
    NoComplexPair,
    #[error("root {root} has residual {residual:.3e} above tolerance")]
    RootResidualTooLarge { root: Complex64, residual: f64 },
    #[error("v = {v} is too close to a characteristic velocity")]
    NearCharacteristicVelocity { v: Complex64 },
    #[error("input velocity is not growing (Im v0 = {im:.3e} <= 0)")]
    NonGrowingInput { im: f64 },
    #[error("v = {v} is not a dispersion root (relative residual {residual:.3e})")]
    NotARoot { v: Complex64, residual: f64 },
    #[error("null space of the mode system has dimension {}", basis.len())]
    RankDeficiencyAmbiguous { basis: Vec<DVector<Complex64>> },
    #[error("mode is not the growing mode (Im k = {im_k:.3e} >= 0)")]
    NonGrowingMode { im_k: f64 },
    #[error("eta block is singular")]
    SingularEta,
    #[error("invariant drift {drift:.3e} exceeds tolerance after {halvings} step halvings")]
    StepUnstable { drift: f64, halvings: usize },
    #[error("field magnitude exceeded the blowup threshold at step {step} (t = {t:.4})")]
    Blowup { step: usize, t: f64 },
    #[error("harmonic projection not converged (period-to-period variation {variation:.3e})")]
    NotConverged { variation: f64 },
    #[error("root matching between cubic and quartic is ambiguous")]
    MatchingAmbiguous,
    #[error("system is not reducible to a single line (relative deviation {deviation:.3e})")]
    NotReducible { deviation: f64 },
}
