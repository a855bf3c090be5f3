use thiserror::Error;

/// Errors shared across the solver and validator modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid channel: {0}")]
    InvalidChannel(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("quadrature failure: {0}")]
    QuadratureFailure(String),
    #[error("singular Gram matrix: {0}")]
    SingularGram(String),
    #[error("invalid potential: {0}")]
    InvalidPotential(String),
    #[error("denominator 1+lambda-v changes sign on the mesh: {0}")]
    DenominatorSign(String),
    #[error("no eigenvalue in the gap: {0}")]
    NoEigenvalueInGap(String),
    #[error("convergence failure: {0}")]
    ConvergenceFailure(String),
    #[error("negative free-subspace block is not negative definite")]
    NegativeBlockNotDefinite,
    #[error("outside the nontrivial operator-core branch: {0}")]
    OutOfCoreBranch(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
