//! Error taxonomy shared by every solver stage.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid run configuration: unknown benchmark names, step sizes that do
    /// not tile the horizon or the period, bad tolerances, bad flags.
    #[error("configuration error: {0}")]
    Config(String),

    /// A mesh or trajectory violates a structural requirement (non-monotone
    /// nodes, broken patch pairing, odd interval counts, dimension mismatch).
    #[error("structural error: {0}")]
    Structure(String),

    /// An operation was called with inconsistent cached data, e.g. an averaged
    /// transfer evaluated against an orbit anchored at a different slow state.
    #[error("usage error: {0}")]
    Usage(String),

    /// Cycling toward the periodic micro state ran out of its cycle budget.
    #[error("periodic micro solve did not converge: defect {defect:.3e} after {cycles} cycles (tolerance {tolerance:.3e})")]
    CyclingDiverged {
        defect: f64,
        cycles: usize,
        tolerance: f64,
    },

    /// Newton on a macro step ran out of iterations; carries the residual
    /// norms seen so far for diagnosis.
    #[error("macro step {interval} did not converge: residuals {residuals:?}")]
    NewtonDiverged {
        interval: usize,
        residuals: Vec<f64>,
    },

    /// Newton inside a single micro step ran out of iterations.
    #[error("micro step at t={time:.6} did not converge: residual {residual:.3e}")]
    MicroStepDiverged { time: f64, residual: f64 },

    /// A period map is too close to the identity, so the linear periodic
    /// solve (tangent or adjoint) has no stable fixed point.
    #[error("degenerate period map in {context}: I - M is numerically singular")]
    DegenerateMonodromy { context: &'static str },

    /// A linear system inside a Newton update or a block recursion is singular.
    #[error("singular linear system in {0}")]
    Singular(&'static str),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
