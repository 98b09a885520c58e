//! Dense reference computations shared by the integration tests.
#![allow(dead_code)]

use iadmm::blockspace::BlockVector;
use iadmm::diagnostics::ReferencePair;
use iadmm::problem::ProblemSpec;
use nalgebra::{DMatrix, DVector};

pub fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut o = vec![0];
    for d in dims {
        o.push(o.last().unwrap() + d);
    }
    o
}

/// Dense `A = [A_1 … A_m]`.
pub fn dense_a(p: &ProblemSpec) -> DMatrix<f64> {
    let dims = p.dims();
    let off = offsets(&dims);
    let mut a = DMatrix::zeros(p.rows(), off[dims.len()]);
    for (i, op) in p.ops().iter().enumerate() {
        a.view_mut((0, off[i]), (p.rows(), dims[i])).copy_from(&op.to_dense());
    }
    a
}

/// Dense `M` (diagonal `γ_i I`, `A_iᵀA_j` below it) and `Q`.
pub fn dense_m_q(p: &ProblemSpec, gammas: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let dims = p.dims();
    let off = offsets(&dims);
    let n = off[dims.len()];
    let a: Vec<DMatrix<f64>> = p.ops().iter().map(|o| o.to_dense()).collect();
    let mut m = DMatrix::zeros(n, n);
    let mut q = DMatrix::zeros(n, n);
    for i in 0..dims.len() {
        for k in 0..dims[i] {
            m[(off[i] + k, off[i] + k)] = gammas[i];
            q[(off[i] + k, off[i] + k)] = gammas[i];
        }
        for j in 0..i {
            m.view_mut((off[i], off[j]), (dims[i], dims[j])).copy_from(&(a[i].transpose() * &a[j]));
        }
    }
    (m, q)
}

/// Dense `P = M Q⁻¹ Mᵀ`.
pub fn dense_p(p: &ProblemSpec, gammas: &[f64]) -> DMatrix<f64> {
    let (m, q) = dense_m_q(p, gammas);
    let qinv = DMatrix::from_diagonal(&q.diagonal().map(|g| 1.0 / g));
    &m * qinv * m.transpose()
}

pub fn flat(x: &BlockVector) -> DVector<f64> {
    x.to_flat()
}

/// `ρ‖y − x*‖²_P + ‖λ − λ*‖²/ρ + α Σ ‖x_i − x_i*‖²/Γ_i` from a dense `P`.
#[allow(clippy::too_many_arguments)]
pub fn dense_energy(
    pmat: &DMatrix<f64>,
    x: &BlockVector,
    y: &BlockVector,
    lambda: &DVector<f64>,
    r: &ReferencePair,
    big_gamma: &[f64],
    rho: f64,
    alpha: f64,
) -> f64 {
    let dy = flat(y) - flat(&r.x_star);
    let mut e = rho * dy.dot(&(pmat * &dy)) + (lambda - &r.lambda_star).norm_squared() / rho;
    for (i, g) in big_gamma.iter().enumerate() {
        if g.is_finite() {
            e += alpha * (x.block(i) - r.x_star.block(i)).norm_squared() / g;
        }
    }
    e
}

/// `Φ(x) + ⟨λ, Ax − b⟩` with dense `A`.
pub fn dense_lagrangian(p: &ProblemSpec, a: &DMatrix<f64>, x: &BlockVector, lambda: &DVector<f64>) -> f64 {
    p.objective(x) + lambda.dot(&(a * flat(x) - p.rhs()))
}

/// Ordinary least-squares slope of `log v` against `log t`.
pub fn loglog_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

/// `‖Hx + c + Aᵀλ‖ + ‖Ax − b‖` of a QP entry, from its dense data.
pub fn qp_kkt_residual(e: &iadmm::problems::CorpusEntry, x: &BlockVector, lambda: &DVector<f64>) -> f64 {
    let qp = e.qp.as_ref().expect("QP entry");
    let mut s = 0.0;
    let mut ax = -qp.rhs.clone();
    for i in 0..qp.hessians.len() {
        let g = &qp.hessians[i] * x.block(i) + &qp.linear[i] + qp.ops[i].transpose() * lambda;
        s += g.norm_squared();
        ax += &qp.ops[i] * x.block(i);
    }
    s.sqrt() + ax.norm()
}

pub fn random_vector(rng: &mut impl rand::Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}
