//! Inexact multi-block ADMM with back substitution for
//!
//! ```text
//! min Σ_i f_i(x_i) + h_i(x_i)   s.t.   Σ_i A_i x_i = b
//! ```
//!
//! with smooth `f_i` and prox-friendly `h_i`. Each outer iteration sweeps
//! the blocks Gauss-Seidel style, solving every linearized block
//! subproblem with an accelerated proximal-gradient inner loop that stops
//! on a computable criterion, then corrects the sweep by a block
//! triangular back substitution and updates the multiplier.
//!
//! Modules:
//! - [`blockspace`]: block vectors, structured linear maps, `M`, `Q`, `P`.
//! - [`proxlib`]: smooth terms and proximal operators.
//! - [`inner`]: the accelerated inner loop and its stopping test.
//! - [`outer`]: the outer loop in convex, strongly convex and exact modes.
//! - [`diagnostics`]: KKT error, energy, Lagrangian gaps, rate fits.
//! - [`oracle`]: dense reference solvers used to certify solution pairs.
//! - [`problems`]: deterministic generators for QP, weighted-ℓ₁ and
//!   imaging test problems.
//! - [`verify`]: property suites run by the `iadmm verify` command.
//! - [`cli`]: the `iadmm` command-line front end.
//!
//! ```
//! use iadmm::outer::{solve, SolverParams};
//! let e = iadmm::problems::entry("qp-1-m2").unwrap();
//! let rep = solve(&e.problem, SolverParams::default(), e.reference.as_ref()).unwrap();
//! assert!(rep.cause.converged());
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blockspace;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod inner;
pub mod oracle;
pub mod outer;
pub mod problem;
pub mod problems;
pub mod proxlib;
pub mod textio;
pub mod verify;

pub use error::{Error, Result};
