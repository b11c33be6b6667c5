use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("non-finite entry at index {0}")]
    NonFinite(usize),

    #[error("point {point:?} is closer than {margin} nodes to the boundary")]
    TooCloseToBoundary { point: Vec<f64>, margin: usize },

    #[error("unsupported kernel order {0} (expected 1 or 3)")]
    UnsupportedKernelOrder(u8),

    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),

    #[error("chart point {y:?} lies outside the chart")]
    OutsideChart { y: Vec<f64> },

    #[error("finite-difference stencil around {y:?} leaves the chart")]
    StencilOutsideChart { y: Vec<f64> },

    #[error("embedding has no analytic derivative of order {0}")]
    NoAnalyticDerivative(u8),

    #[error("immersion fails at {y:?}: tangent rank {rank} < {k}")]
    RankDeficient { y: Vec<f64>, rank: usize, k: usize },

    #[error("test function is not an annihilator at y: |d(Rf)_y| = {measured:e} > {bound:e}")]
    AnnihilatorViolated { measured: f64, bound: f64 },

    #[error("annihilator pool too small: {0}")]
    PoolTooSmall(String),

    #[error("annihilator nullspace is empty after tolerance")]
    EmptyNullspace,

    #[error("empty operator matrix")]
    EmptyMatrix,

    #[error("operator matrix has {entries} entries, cap is {cap}")]
    MatrixTooLarge { entries: usize, cap: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
