//! Structured linear maps, adjoint checks and the block back substitution.

use iadmm::blockspace::{spectral_norm, BlockTriangular, BlockVector, LinearMap};
use iadmm::problems::gaussian_kernel;
use nalgebra::DVector;

fn probe(n: usize, phase: f64) -> DVector<f64> {
    DVector::from_fn(n, |i, _| (i as f64 * 0.37 + phase).sin())
}

fn main() -> iadmm::Result<()> {
    let side = 16;
    let maps = [
        ("finite differences", LinearMap::FiniteDiff2D { side }),
        ("haar, 4 levels", LinearMap::haar(side, 4)?),
        ("gaussian blur", LinearMap::separable_conv(side, gaussian_kernel(1.0))?),
    ];
    for (name, m) in &maps {
        let x = probe(m.cols(), 0.1);
        let w = probe(m.rows(), 1.3);
        let adj = (m.apply(&x).dot(&w) - x.dot(&m.adjoint(&w))).abs();
        println!("{name:>20}: {}x{}, ‖·‖ = {:.6}, adjoint error {adj:.1e}", m.rows(), m.cols(), spectral_norm(m)?);
    }

    let ops = [LinearMap::Dense(nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 1.0])), LinearMap::Identity(2)];
    let gammas: Vec<f64> = ops.iter().map(|a| a.gram_norm().map(|g| g + 0.1)).collect::<iadmm::Result<_>>()?;
    let m = BlockTriangular::new(ops.iter().collect(), gammas)?;
    let y = BlockVector::zeros(&[2, 2]);
    let z = BlockVector::new(vec![probe(2, 0.0), probe(2, 2.0)]);
    let next = m.back_substitute(&y, &z, 0.5)?;
    println!("back substitution: y+ = {:.6?}", next.to_flat().as_slice());
    println!("‖z − y‖²_P = {:.6}", m.p_norm_sq(&(&z - &y))?);
    Ok(())
}
