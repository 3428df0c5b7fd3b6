//! Nonnegative low-rank tensor completion via dual factorization.
//!
//! Recovers a nonnegative tensor from a sparse set of observed entries by
//! minimizing a least-squares fit plus per-mode nuclear-norm-squared
//! penalties on the unfoldings. Rather than touching the primal tensor,
//! the solver works entirely in a dual parameterization:
//!
//! * an outer Riemannian conjugate-gradient loop over one unit-Frobenius
//!   factor U_k per mode (a product of spectrahedron manifolds),
//! * an inner alternating solver for the dual pair (Z, S): a linear
//!   conjugate-gradient solve for the data-fit dual Z supported on the
//!   observed set, and a projected-gradient solve for the nonnegativity
//!   dual S ≥ 0.
//!
//! The reconstruction Ŵ = Σ_k λ_k (Ẑ + Ŝ) ×_k U_k U_kᵀ is assembled from
//! the converged duals. Per-iteration work scales with the number of
//! observed entries times the ranks, not with the ambient tensor size,
//! except for the dense multiplier S.
//!
//! Modules:
//! * [`tensor`]: dense/sparse tensors, unfolding, mode products.
//! * [`manifold`]: spectrahedron (unit-sphere) factor geometry.
//! * [`inner`]: the alternating dual solver for fixed factors.
//! * [`outer`]: the Riemannian conjugate-gradient loop and reconstruction.
//! * [`eval`]: synthetic instances, metrics, and independent oracles.
//! * [`io`]: text tensor files, portable pixmaps, CSV reports.

pub mod error;
pub mod eval;
pub mod inner;
pub mod io;
pub mod manifold;
pub mod outer;
pub mod tensor;

pub use error::{Error, Result};
pub use inner::{DualPair, InnerConfig, ProblemData};
pub use outer::{solve, CompletionModel, SolveResult, SolveStatus, Solver, SolverConfig};
pub use tensor::{DenseTensor, Matrix, ObservationMask, Shape, SparseTensor};
