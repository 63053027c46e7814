use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid shape mismatch: expected {expected} samples, got {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("operators live on different grids")]
    GridMismatch,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("inadmissible potential: {0}")]
    InadmissiblePotential(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("density is negative ({value:e}) beyond tolerance at sample {index}")]
    NegativeDensity { index: usize, value: f64 },
    #[error("rank budget exceeded: rank {rank} > {budget} after compression")]
    RankBudget { rank: usize, budget: usize },
    #[error("non-finite value encountered at t = {time}")]
    NonFinite { time: f64 },
    #[error("boundary mass {mass:e} exceeds limit {limit:e} at t = {time}")]
    BoundaryMass { time: f64, mass: f64, limit: f64 },
    #[error("Picard iteration diverged at iterate {iterate}")]
    Divergence { iterate: usize },
    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("fit window has {found} samples, need at least {needed}")]
    TooFewSamples { found: usize, needed: usize },
    #[error("non-positive sample {value:e} at t = {time}")]
    NonPositiveSample { time: f64, value: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
