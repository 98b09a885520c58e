//! Builds a small three-block problem by hand and solves it.
//!
//! min ½‖x₁ − c₁‖² + ‖x₂‖₁ + ½x₃ᵀHx₃  s.t.  x₁ + x₂ + Bx₃ = b

use iadmm::blockspace::LinearMap;
use iadmm::diagnostics::kkt_error;
use iadmm::outer::{solve, SolverParams};
use iadmm::problem::{Block, ProblemSpec};
use iadmm::proxlib::{quadratic_smooth, ProxTerm, SmoothTerm};
use nalgebra::{DMatrix, DVector};

fn main() -> iadmm::Result<()> {
    let c1 = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let b_map = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, -1.0]);
    let blocks = vec![
        Block::new(quadratic_smooth(LinearMap::Identity(3), c1)?, ProxTerm::zero(), LinearMap::Identity(3)),
        Block::new(SmoothTerm::zero(), ProxTerm::l1(1.0, 3), LinearMap::Identity(3)),
        Block::new(SmoothTerm::quadratic(h, DVector::zeros(2))?, ProxTerm::zero(), LinearMap::Dense(b_map)),
    ];
    let problem = ProblemSpec::new(blocks, DVector::from_vec(vec![0.5, 0.0, 1.0]))?;

    let report = solve(&problem, SolverParams::default(), None)?;
    let (x, lambda) = report.solution();
    println!("{} after {} outer iterations", report.cause.label(), report.iterations());
    for i in 0..problem.num_blocks() {
        println!("x{} = {:.6?}", i + 1, x.block(i).as_slice());
    }
    println!("lambda = {:.6?}", lambda.as_slice());
    println!("objective {:.8}", problem.objective(x));
    println!("KKT error {:.2e}", kkt_error(&problem, x, lambda)?);
    Ok(())
}
