//! Strongly convex QP in strong mode: increasing penalties and O(1/t²)
//! decay of the weighted ergodic gap and of ‖y^t − x*‖².

use iadmm::diagnostics::rate_fit;
use iadmm::outer::{solve, Mode, SolverParams};
use iadmm::problems::entry;

fn main() -> iadmm::Result<()> {
    let e = entry("qp-0-m3-mu0.5")?;
    let params = SolverParams {
        mode: Mode::Strong,
        tol: 1e-10,
        ..SolverParams::default()
    };
    let rep = solve(&e.problem, params, e.reference.as_ref())?;
    let c = rep.strong.as_ref().expect("strong constants");
    println!("mu = {}, theta = {:.4e}, k0 = {:.3}", c.mu, c.theta, c.k0);
    println!("{} after {} iterations", rep.cause.label(), rep.iterations());

    let mut gap = Vec::new();
    let mut dist = Vec::new();
    for h in &rep.history {
        let r = h.reference.as_ref().unwrap();
        let t = h.k as f64;
        if let Some(g) = r.weighted_gap.filter(|g| *g > 0.0) {
            gap.push((t, g));
        }
        if let Some(d) = r.y_next_dist_sq.filter(|d| *d > 0.0) {
            dist.push((t, d));
        }
    }
    let last = rep.iterations() as f64;
    let window = (10.0, (last * 0.5).max(20.0));
    println!("weighted gap slope {:.3}", rate_fit(&gap, window)?.slope);
    println!("‖y − x*‖² slope    {:.3}", rate_fit(&dist, window)?.slope);
    Ok(())
}
