//! Weighted-ℓ₁ problem with polyhedral subdifferentials: the energy
//! contracts linearly, seen through the ratio E_{k+2}/E_k.

use iadmm::diagnostics::two_step_ratio;
use iadmm::outer::{solve, SolverParams};
use iadmm::problems::entry;

fn main() -> iadmm::Result<()> {
    for id in ["lasso-0", "lasso-1", "lasso-2"] {
        let e = entry(id)?;
        let params = SolverParams { tol: 1e-10, ..SolverParams::default() };
        let rep = solve(&e.problem, params, e.reference.as_ref())?;
        let energy: Vec<f64> = rep.history.iter().filter_map(|h| h.reference.as_ref().map(|r| r.energy)).collect();
        let ratio = two_step_ratio(&energy, 50);
        println!(
            "{id}: {} iterations, E_1 = {:.3e}, E_last = {:.3e}, tail max E_(k+2)/E_k = {:.3}",
            rep.iterations(),
            energy[0],
            energy[energy.len() - 1],
            ratio.tail_max
        );
    }
    Ok(())
}
