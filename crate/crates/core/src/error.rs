use thiserror::Error;

/// Errors produced by the numerical kernels and the batch front end.
#[derive(Debug, Error)]
pub enum GeoError {
    #[error("point {coords:?} lies outside the domain of chart {chart}")]
    OutOfChart { chart: usize, coords: Vec<f64> },
    #[error("no chart covers the point {0:?}")]
    ChartSwitchFailed(Vec<f64>),
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("iteration did not converge: {0}")]
    NoConvergence(String),
    #[error("insufficient resolution: {0}")]
    InsufficientResolution(String),
    #[error("record is not a conjugate pair: {0}")]
    NotConjugate(String),
    #[error("degenerate kernel vector: {0}")]
    DegenerateKernel(String),
    #[error("quadrature budget exceeded: {needed} evaluations requested, budget {budget}")]
    QuadratureBudgetExceeded { needed: usize, budget: usize },
    #[error("tail of the flow average is not controlled: {0}")]
    TailNotControlled(String),
    #[error("conjugate components too close: {0}")]
    ComponentsTooClose(String),
    #[error("singular conjugate pair present at s = {0}")]
    SingularPairPresent(f64),
    #[error("reference point degenerate: {0}")]
    ReferencePointDegenerate(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GeoError>;
