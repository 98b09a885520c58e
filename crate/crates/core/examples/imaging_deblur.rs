//! TV + wavelet deblurring as a three-block problem. Writes the observed
//! and restored images as graymaps to the directory given as the first
//! argument (default: the system temp directory).

use std::path::PathBuf;

use iadmm::outer::{Solver, SolverParams};
use iadmm::problems::{entry, imaging_params, imaging_start};
use iadmm::textio::{write_pgm, Graymap};
use nalgebra::DVector;

fn main() -> iadmm::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let e = entry("img-0-s32")?;
    let d = e.imaging.as_ref().unwrap();
    let params = SolverParams { tol: 1e-5, ..imaging_params() };
    let rep = Solver::new(&e.problem, params)
        .with_start(imaging_start(&e).unwrap(), DVector::zeros(e.problem.rows()))
        .with_ergodic_functional(|z| d.objective(z.block(0)))
        .run()?;
    let u = rep.state.z.block(0);
    let err = |v: &DVector<f64>| (v - &d.truth).norm() / d.truth.norm();
    println!("{} after {} iterations in {:.2?}", rep.cause.label(), rep.iterations(), rep.elapsed);
    println!("objective: observed {:.5}, restored {:.5}", d.objective(&d.observed), d.objective(u));
    println!("relative error: observed {:.4}, restored {:.4}", err(&d.observed), err(u));
    println!("γ safeguard events: {}", rep.safeguard_events.len());
    for (name, v) in [("observed", &d.observed), ("restored", u)] {
        let path = dir.join(format!("deblur-{name}.pgm"));
        write_pgm(&path, &Graymap::square(d.side, v)?)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
