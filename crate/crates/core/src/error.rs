use thiserror::Error;

use crate::models::expr::ParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("expression evaluation failed at byte {offset}: {message}")]
    Eval { offset: usize, message: String },

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("state diverged at step {step} (t = {t})")]
    Divergence { step: usize, t: f64 },

    #[error("invalid time grid: {0}")]
    Grid(String),

    #[error("gramian is not positive semidefinite: lambda_min = {lambda_min:e}, lambda_max = {lambda_max:e}")]
    NotPsd { lambda_min: f64, lambda_max: f64 },

    #[error("variational symmetry not certified: res_dyn = {res_dyn:e}, res_out = {res_out:e}")]
    NotSymmetric { res_dyn: f64, res_out: f64 },

    #[error("truncation order {k} is out of range (effective rank {rank})")]
    Rank { k: usize, rank: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
