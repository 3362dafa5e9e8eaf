use thiserror::Error;

#[derive(Debug, Error)]
pub enum DgwError {
    #[error("invalid warp parameters: {0}")]
    InvalidParams(String),
    #[error("TPS system ill-conditioned (condition estimate {condition:.3e}); resample the control points")]
    IllConditioned { condition: f64 },
    #[error("TPS fit misses its control points by {residual:.3e}; resample the control points")]
    SolverFailure { residual: f64 },
    #[error("no well-conditioned control points after {0} attempts")]
    Exhausted(u32),
    #[error("grid is {grid:?} but tensor spatial size is {tensor:?}")]
    GridMismatch {
        grid: (usize, usize),
        tensor: (usize, usize),
    },
    #[error(transparent)]
    Core(#[from] warpseg_core::CoreError),
}

pub type Result<T, E = DgwError> = std::result::Result<T, E>;
