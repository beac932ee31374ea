//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("layer self-intersects: a*rho_m_inv = {product} >= 1 (a = {a}, max |principal curvature| = {rho_m_inv})")]
    DiffeomorphismViolated { a: f64, rho_m_inv: f64, product: f64 },

    #[error("no bound state: {0}")]
    NoBoundState(String),

    #[error("iteration did not converge: {0}")]
    NonConvergence(String),

    #[error("resource limit: {0}")]
    ResourceLimit(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
