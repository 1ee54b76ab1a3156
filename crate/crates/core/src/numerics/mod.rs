pub mod continuation;
pub mod dense;
pub mod linear;
pub mod newton;
pub mod sparse;

pub use continuation::{continuation_sweep, BranchSample, ContinuationConfig, ContinuationResult, Family, Termination, Verdict};
pub use linear::{solve_sparse_linear, solve_sparse_linear_complex, LinearConfig, PreconditionerKind, SparseLu};
pub use newton::{newton_solve, NewtonConfig, NewtonOutcome, NonlinearProblem};
pub use sparse::{CsrMatrix, TripletBuilder};
