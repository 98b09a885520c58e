//! Convex QP: the Lagrangian gap at the uniform average decays like 1/t.

use iadmm::diagnostics::rate_fit;
use iadmm::outer::{solve, SolverParams};
use iadmm::problems::entry;

fn main() -> iadmm::Result<()> {
    let e = entry("qp-0-m3")?;
    let params = SolverParams {
        tol: 0.0,
        zero_eps: 0.0,
        max_outer: 2000,
        ..SolverParams::default()
    };
    let rep = solve(&e.problem, params, e.reference.as_ref())?;
    let series: Vec<(f64, f64)> = rep
        .history
        .iter()
        .filter_map(|h| h.reference.as_ref().map(|r| (h.k as f64, r.ergodic_gap.abs())))
        .filter(|(_, g)| *g > 0.0)
        .collect();
    for t in [10, 100, 1000, 2000] {
        let r = rep.history[t - 1].reference.as_ref().unwrap();
        println!("t = {t:>5}: ergodic gap {:.3e}, energy {:.3e}", r.ergodic_gap, r.energy);
    }
    let fit = rate_fit(&series, (50.0, 2000.0))?;
    println!("log-log slope of |gap| over [50, 2000]: {:.3}", fit.slope);
    Ok(())
}
