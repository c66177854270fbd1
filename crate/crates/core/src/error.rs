use thiserror::Error;

/// Failures of the eigenvalue and symmetric-function layer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlgebraError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The eigenvalue vector left the Gårding cone. `index` is the first
    /// order `j` (1-based) with `σ_j ≤ 0`.
    #[error("not admissible: sigma_{index} <= 0 at eigenvalues {eigenvalues:?}")]
    NotAdmissible { index: usize, eigenvalues: Vec<f64> },

    #[error("no sample in Gamma_{k} (n = {n}) after {attempts} draws")]
    SamplerExhausted { n: usize, k: usize, attempts: usize },

    #[error("Jacobi eigensolver did not converge within {sweeps} sweeps")]
    EigFailure { sweeps: usize },
}

pub type Result<T, E = AlgebraError> = std::result::Result<T, E>;
