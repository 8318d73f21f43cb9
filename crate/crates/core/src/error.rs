use thiserror::Error;

pub type Result<T> = std::result::Result<T, KsError>;

#[derive(Debug, Error)]
pub enum KsError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("calibration failed: b_tilde = {b_tilde} exceeds the largest admissible value {limit:.6}")]
    Calibration { b_tilde: f64, limit: f64 },

    #[error("ill-conditioned annulus system (condition number {cond:.3e})")]
    Conditioning { cond: f64 },

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:.3e})")]
    Convergence { what: String, iterations: usize, residual: f64 },

    #[error("internal consistency check failed: {0}")]
    InternalConsistency(String),

    #[error("degenerate layer configuration: |M| = {det:.3e} below threshold {threshold:.1e}")]
    Nondegeneracy { det: f64, threshold: f64 },

    #[error("overflow evaluating exp(u) at r = {radius:.6e}")]
    Overflow { radius: f64 },

    #[error("correction constant extraction failed: fit residual {residual:.3e}")]
    Extraction { residual: f64 },

    #[error("outer matching failed: {0}")]
    Matching(String),

    #[error("discretization failure: {0}")]
    Discretization(String),

    #[error("linear operator near its kernel: smallest singular value {sigma_min:.3e}, overlap with z0 mode {z0_overlap:.3e}")]
    NearKernel { sigma_min: f64, z0_overlap: f64 },

    #[error("fixed-point map is not a contraction: factor {factor:.3e}, iterate norm / radius {escape:.3e}")]
    NonContraction { factor: f64, escape: f64 },

    #[error("singular Jacobian near a turning point at parameter {parameter:.6e}; use continuation")]
    Fold { parameter: f64 },

    #[error("continuation stalled after {accepted} accepted steps (step size {step:.3e})")]
    Stall { accepted: usize, step: f64 },
}

impl KsError {
    /// Errors caused by bad input rather than by a solver.
    pub fn is_validation(&self) -> bool {
        matches!(self, KsError::Domain(_) | KsError::Calibration { .. })
    }
}
