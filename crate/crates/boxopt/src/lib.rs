//! Constrained-optimization toolkit built around a box-constrained
//! limited-memory quasi-Newton solver.
//!
//! The crate is organized in layers:
//!
//! * [`kernels`] — dense f64 vector/matrix primitives with deterministic
//!   accumulation order, plus the `DMAT1`/CSV file formats.
//! * [`lbfgsb`] — the box-constrained solver: componentwise working sets,
//!   a curvature-screened two-loop recursion, direction projection and
//!   Armijo backtracking.
//! * [`auglag`] — augmented Lagrangian outer loop reducing problems with
//!   general equality/inequality constraints to a sequence of box solves.
//! * [`modeling`] — a small modeling language (`parameters` / `variables` /
//!   `min` / `st`) compiled to value-and-gradient evaluators by reverse-mode
//!   differentiation.
//! * [`problems`] — builders, data generators and independent reference
//!   oracles for the built-in benchmark problems.
//! * [`verify`] — oracle cross-checks (finite differences, dense BFGS
//!   reconstruction, scalar working-set reference, Sinkhorn comparison).

pub mod auglag;
pub mod error;
pub mod kernels;
pub mod lbfgsb;
pub mod modeling;
pub mod problems;
pub mod verify;

pub use error::{Error, Result};
pub use kernels::{BoxBounds, DenseMatrix, DenseVector, IndexSet};
