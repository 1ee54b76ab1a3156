use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("preconditioner factorization broke down: {0}")]
    SingularPreconditioner(String),
    #[error("line search stalled at damping {damping:e} (residual {residual:e})")]
    LineSearchStall { damping: f64, residual: f64 },
    #[error("linear solve failed: {0}")]
    LinearSolveFailure(String),
    #[error("continuation seed failed: {0}")]
    SeedFailure(String),
    #[error("bad geometry: {0}")]
    BadGeometry(String),
    #[error("ellipticity lost: max |grad phi|^2 = {max_speed2} >= 1/3")]
    EllipticityLoss { max_speed2: f64 },
    #[error("value outside the admissible domain: {0}")]
    DomainError(String),
    #[error("insufficient range: {0}")]
    InsufficientRange(String),
    #[error("under-resolved: {0}")]
    UnderResolved(String),
    #[error("vortex-free basin left: min rho = {min_rho} < {bound}")]
    VortexContamination { min_rho: f64, bound: f64 },
    #[error("ambiguous vortex core: |field| = {modulus:e} at a plaquette corner")]
    AmbiguousCore { modulus: f64 },
    #[error("converged wave carries no vortex")]
    VortexEscape,
    #[error("eigen iteration did not converge: {0}")]
    EigenIterationFailure(String),
    #[error("Gram matrix is singular (condition {0:e})")]
    GramSingular(f64),
    #[error("local speed c = {0} is not subsonic")]
    SpeedOutOfRange(f64),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("bad field file: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
