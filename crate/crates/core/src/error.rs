use thiserror::Error;

/// Errors raised by the scene, estimation and optimization layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("node `{0}` coincides with the BS or the sensing node")]
    CoincidentNodes(String),
    #[error("elevation angle too close to horizontal (|cos phi| = {0:e})")]
    DegenerateElevation(f64),
    #[error("inconsistent angles: negative radicand {0:e} in the ground-range solve")]
    NegativeRadicand(f64),
    #[error("channel of VUE {0} is identically zero")]
    ZeroChannel(usize),
    #[error("transmit covariance is not Hermitian (relative asymmetry {0:e})")]
    NonHermitianCovariance(f64),
    #[error("Fisher information is singular (condition number {0:e}); target not illuminated?")]
    SingularFim(f64),
    #[error("steering vectors are numerically dependent (condition number {0:e})")]
    RankDeficiency(f64),
    #[error("angle search did not converge: {0}")]
    GridExhausted(String),
    #[error("reference signal has zero energy")]
    ZeroSteering,
    #[error("sample covariance has rank below the number of sources ({0})")]
    CovarianceRankDeficient(usize),
    #[error("CRLB threshold unreachable at this power (best trace {best:e} > threshold {threshold:e})")]
    InfeasibleThreshold { best: f64, threshold: f64 },
    #[error("PDD did not converge in {iterations} outer iterations (violation {violation:e})")]
    MaxOuterIterations { iterations: usize, violation: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
