use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("domain coverage: {0}")]
    Coverage(String),
    #[error("jacobian bound violated at node ({ix}, {iz}): det J = {det}; try N >= {required_n}")]
    Jacobian {
        ix: usize,
        iz: usize,
        det: f64,
        required_n: f64,
    },
    #[error("point ({x}, {y}) outside the image of column {column}")]
    OutOfRange { x: f64, y: f64, column: usize },
    #[error("unsupported index: {0}")]
    UnsupportedIndex(String),
    #[error("not certifiable: {0}")]
    NotCertifiable(String),
    #[error("incompatible data: defect {defect:e}")]
    Compatibility { defect: f64 },
    #[error("non-finite data: {0}")]
    Data(String),
    #[error("iteration diverged: contraction factor {factor:.3} over 3 sweeps (delta bound {delta:?})")]
    Divergence { factor: f64, delta: Option<f64> },
    #[error("chart rejected: {0}")]
    Chart(String),
    #[error("stage {stage} failed: residual {residual:e} above {tol:e}")]
    Stage {
        stage: String,
        residual: f64,
        tol: f64,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
