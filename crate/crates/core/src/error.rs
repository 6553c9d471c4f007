use thiserror::Error;

use crate::path::VectorPath;

pub type Result<T, E = MfgError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MfgError {
    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid problem data: {0}")]
    InvalidProblem(String),

    #[error("resolvent failure at n = {n}: nI - A is singular (spectral abscissa {abscissa})")]
    Resolvent { n: f64, abscissa: f64 },

    #[error("spectral estimate failed: {0}")]
    Spectral(String),

    #[error("operator is not self-adjoint (defect {defect:.3e}, tolerance {tol:.3e})")]
    SymmetryViolation { defect: f64, tol: f64 },

    #[error("solution diverged at node {node} (t = {t}): norm {norm:.3e}")]
    Divergence { node: usize, t: f64, norm: f64 },

    #[error("positivity lost at node {node} (t = {t}): min eigenvalue {min_eig:.3e}")]
    PositivityLoss { node: usize, t: f64, min_eig: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("contraction failure after {sweeps} sweeps (last difference {last_diff:.3e})")]
    ContractionFailure { sweeps: usize, last_diff: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("pathological instance: {segments} continuation segments required")]
    Pathological { segments: usize },

    #[error("certificate violated: {0}")]
    Certificate(String),

    #[error(
        "no-certificate: Picard iteration did not converge in {iterations} sweeps \
         (C_T = {c_t:.4e}, last difference {last_diff:.3e})"
    )]
    NoCertificate {
        c_t: f64,
        iterations: usize,
        last_diff: f64,
        last_iterate: Box<VectorPath>,
    },

    #[error("simulation blow-up on path {path} at t = {t}")]
    SimulationBlowUp { path: usize, t: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}
