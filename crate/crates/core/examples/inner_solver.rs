//! Runs the accelerated inner loop on one block subproblem and compares
//! its iterates with the exact minimizer.

use iadmm::blockspace::{spectral_norm, LinearMap};
use iadmm::inner::{InnerLoop, InnerParams, StepRule, Subproblem};
use iadmm::oracle::subproblem_minimizer;
use iadmm::problem::Block;
use iadmm::proxlib::{ProxTerm, SmoothTerm};
use nalgebra::{DMatrix, DVector};

fn main() -> iadmm::Result<()> {
    let h = DMatrix::from_row_slice(3, 3, &[3.0, 1.0, 0.0, 1.0, 2.0, 0.5, 0.0, 0.5, 1.0]);
    let a = DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 0.5, 0.3, 0.8, -1.2]);
    let block = Block::new(
        SmoothTerm::quadratic(h, DVector::from_vec(vec![1.0, -1.0, 0.2]))?,
        ProxTerm::l1(0.4, 3),
        LinearMap::Dense(a),
    );
    let x = DVector::from_vec(vec![2.0, -1.0, 0.5]);
    let y = DVector::from_vec(vec![0.5, 0.5, 0.0]);
    let b = DVector::from_vec(vec![1.0, -0.5]);
    let lambda = DVector::from_vec(vec![0.2, 0.1]);
    let rho = 1.0;
    let gamma = spectral_norm(&block.op)?.powi(2) * 1.1;
    let exact = subproblem_minimizer(&block, &y, &b, &lambda, rho, gamma, &x, 1e-14)?;

    for rule in [StepRule::Constant, StepRule::Adaptive] {
        let params = InnerParams { rule, ..InnerParams::default() };
        let sub = Subproblem::new(&block, &x, &y, &b, &lambda, rho, gamma);
        let mut lp = InnerLoop::new(&sub, &params)?;
        println!("{rule:?} rule");
        println!("{:>5} {:>12} {:>12}", "l", "gamma_l", "|a_l - xbar|");
        for _ in 0..80 {
            lp.step()?;
            let s = lp.state();
            if s.l.is_power_of_two() {
                println!("{:>5} {:>12.4e} {:>12.4e}", s.l, s.gamma, (&s.a - &exact).norm());
            }
        }
    }
    Ok(())
}
