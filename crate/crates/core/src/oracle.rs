//! Reference solvers that share no code path with the inner loop: dense
//! KKT solves for equality-constrained QPs, high-accuracy block
//! minimizers, and the KKT gate for reference pairs.

use nalgebra::{DMatrix, DVector};

use crate::blockspace::{BlockVector, LinearMap};
use crate::diagnostics::{kkt_error, ReferencePair, REFERENCE_TOL};
use crate::error::{Error, Result};
use crate::inner::penalty_gradient;
use crate::problem::{Block, ProblemSpec};
use crate::proxlib::{ProxKind, ProxTerm, SmoothKind, SmoothTerm, DENSE_MODULUS_LIMIT};

/// Iteration cap of the proximal-gradient and conjugate-gradient oracles.
pub const ORACLE_MAX_ITERS: usize = 1_000_000;

/// Default accuracy of [`subproblem_minimizer`].
pub const SUBPROBLEM_TOL: f64 = 1e-12;

/// `min Σ ½x_iᵀH_ix_i + c_iᵀx_i  s.t.  Σ A_i x_i = b` with dense data.
#[derive(Debug, Clone, PartialEq)]
pub struct QpInstance {
    pub hessians: Vec<DMatrix<f64>>,
    pub linear: Vec<DVector<f64>>,
    pub ops: Vec<DMatrix<f64>>,
    pub rhs: DVector<f64>,
}

impl QpInstance {
    pub fn dims(&self) -> Vec<usize> {
        self.linear.iter().map(|c| c.len()).collect()
    }

    pub fn to_problem(&self) -> Result<ProblemSpec> {
        let blocks = self
            .hessians
            .iter()
            .zip(&self.linear)
            .zip(&self.ops)
            .map(|((h, c), a)| {
                Ok(Block::new(
                    SmoothTerm::quadratic(h.clone(), c.clone())?,
                    ProxTerm::zero(),
                    LinearMap::Dense(a.clone()),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        ProblemSpec::new(blocks, self.rhs.clone())
    }

    /// Dense data of a problem whose blocks are quadratic (or zero) with
    /// `h_i ≡ 0`.
    pub fn from_problem(problem: &ProblemSpec) -> Result<Self> {
        let mut out = Self {
            hessians: Vec::new(),
            linear: Vec::new(),
            ops: Vec::new(),
            rhs: problem.rhs().clone(),
        };
        for (i, b) in problem.blocks().iter().enumerate() {
            if !b.prox.is_zero() {
                return Err(Error::Unavailable(format!("block {i} has a nonsmooth term")));
            }
            let n = b.dim();
            let (h, c) = match &b.smooth.kind {
                SmoothKind::Zero => (DMatrix::zeros(n, n), DVector::zeros(n)),
                SmoothKind::Quadratic { hessian, linear } => (hessian.clone(), linear.clone()),
                SmoothKind::LeastSquares { op, data } => {
                    let f = op.to_dense();
                    (f.tr_mul(&f), -f.tr_mul(data))
                }
            };
            out.hessians.push(h);
            out.linear.push(c);
            out.ops.push(b.op.to_dense());
        }
        Ok(out)
    }

    /// `[[H, Aᵀ], [A, 0]]` and `[−c; b]`.
    pub fn kkt_system(&self) -> (DMatrix<f64>, DVector<f64>) {
        let dims = self.dims();
        let n: usize = dims.iter().sum();
        let rows = self.rhs.len();
        let mut k = DMatrix::zeros(n + rows, n + rows);
        let mut r = DVector::zeros(n + rows);
        let mut off = 0;
        for ((h, c), a) in self.hessians.iter().zip(&self.linear).zip(&self.ops) {
            let ni = c.len();
            k.view_mut((off, off), (ni, ni)).copy_from(h);
            k.view_mut((off, n), (ni, rows)).copy_from(&a.transpose());
            k.view_mut((n, off), (rows, ni)).copy_from(a);
            r.rows_mut(off, ni).copy_from(&(-c));
            off += ni;
        }
        r.rows_mut(n, rows).copy_from(&self.rhs);
        (k, r)
    }
}

/// Dense pivoted solve of the KKT system, gated at [`REFERENCE_TOL`].
pub fn solve_qp_kkt(qp: &QpInstance) -> Result<ReferencePair> {
    let (k, r) = qp.kkt_system();
    let n: usize = qp.dims().iter().sum();
    let lu = k.clone().full_piv_lu();
    if !lu.is_invertible() {
        return Err(Error::numeric("singular KKT matrix"));
    }
    let sol = lu.solve(&r).ok_or_else(|| Error::numeric("singular KKT matrix"))?;
    // One step of iterative refinement.
    let sol = &sol + lu.solve(&(&r - &k * &sol)).unwrap_or_else(|| DVector::zeros(sol.len()));
    let x = BlockVector::from_flat(&sol.rows(0, n).into_owned(), &qp.dims())?;
    let lambda = sol.rows(n, qp.rhs.len()).into_owned();
    ReferencePair::new(&qp.to_problem()?, x, lambda, "qp-kkt")
}

/// Accepts the pair iff `K(x, λ) ≤ tol`.
pub fn certify_reference(problem: &ProblemSpec, x: BlockVector, lambda: DVector<f64>, tol: f64) -> Result<ReferencePair> {
    ReferencePair::with_tol(problem, x, lambda, "certified", tol)
}

/// Unique minimizer of the block-`i` subproblem
/// `f(u) + h(u) + ⟨λ, A u⟩ + (ρ/2)‖Au − b_i‖² + (ρ/2)‖u − y_i‖²_{γI − AᵀA}`,
/// which equals `f(u) + h(u) + (ργ/2)‖u − c‖² + const` with
/// `c = y_i − Aᵀ(A y_i − b_i + λ/ρ)/γ`.
#[allow(clippy::too_many_arguments)]
pub fn subproblem_minimizer(
    block: &Block,
    y_i: &DVector<f64>,
    b_i: &DVector<f64>,
    lambda: &DVector<f64>,
    rho: f64,
    gamma: f64,
    start: &DVector<f64>,
    tol: f64,
) -> Result<DVector<f64>> {
    let w = rho * gamma;
    if !(w > 0.0) {
        return Err(Error::InvalidConfig(format!("ργ = {w} must be positive")));
    }
    let c = y_i - penalty_gradient(&block.op, y_i, b_i, lambda, rho) / w;
    let f = &block.smooth;
    let h = &block.prox;
    if f.is_zero() {
        return h.prox(&c, 1.0 / w);
    }
    if h.is_zero() {
        match &f.kind {
            SmoothKind::Quadratic { hessian, linear } => {
                let n = c.len();
                let m = hessian + DMatrix::identity(n, n) * w;
                return dense_spd_solve(m, &c * w - linear);
            }
            SmoothKind::LeastSquares { op, data } => {
                let rhs = &c * w + op.adjoint(data);
                if op.cols() <= DENSE_MODULUS_LIMIT {
                    let fm = op.to_dense();
                    let n = fm.ncols();
                    return dense_spd_solve(fm.tr_mul(&fm) + DMatrix::identity(n, n) * w, rhs);
                }
                return conjugate_gradient(|v| op.adjoint(&op.apply(v)) + v * w, &rhs, start, tol);
            }
            SmoothKind::Zero => unreachable!(),
        }
    }
    let zeta = f
        .lipschitz
        .ok_or_else(|| Error::Unavailable("proximal-gradient oracle needs ζ".into()))?;
    accelerated_prox_grad(f, h, &c, w, zeta, start, tol)
}

fn dense_spd_solve(m: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numeric("subproblem matrix is not positive definite"))?;
    let x = chol.solve(&rhs);
    let corr = chol.solve(&(&rhs - &m * &x));
    Ok(x + corr)
}

/// Conjugate gradients for a symmetric positive definite operator, run
/// to `‖r‖ ≤ tol·max(1, ‖b‖)`.
pub fn conjugate_gradient<F>(apply: F, b: &DVector<f64>, x0: &DVector<f64>, tol: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let target = tol * b.norm().max(1.0);
    let mut x = x0.clone();
    let mut r = b - apply(&x);
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    for it in 0..ORACLE_MAX_ITERS {
        if rr.sqrt() <= target {
            return Ok(x);
        }
        // Recompute the true residual now and then against drift.
        if it > 0 && it % 50 == 0 {
            r = b - apply(&x);
            rr = r.norm_squared();
            if rr.sqrt() <= target {
                return Ok(x);
            }
        }
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return Err(Error::numeric("conjugate gradients met a nonpositive curvature"));
        }
        let a = rr / pap;
        x.axpy(a, &p, 1.0);
        r.axpy(-a, &ap, 1.0);
        let rr_new = r.norm_squared();
        p = &r + &p * (rr_new / rr);
        rr = rr_new;
    }
    Err(Error::Numeric {
        msg: "conjugate gradients hit the iteration cap".into(),
        estimate: Some(rr.sqrt()),
    })
}

/// `min f(u) + h(u) + (w/2)‖u − c‖²` by accelerated proximal gradient with
/// the strongly convex momentum, stopped on the gradient-mapping norm.
fn accelerated_prox_grad(
    f: &SmoothTerm,
    h: &ProxTerm,
    c: &DVector<f64>,
    w: f64,
    zeta: f64,
    start: &DVector<f64>,
    tol: f64,
) -> Result<DVector<f64>> {
    let l = zeta * (1.0 + 1e-9) + w;
    let mu = f.modulus + w;
    let beta = (l.sqrt() - mu.sqrt()) / (l.sqrt() + mu.sqrt());
    let grad = |u: &DVector<f64>| f.grad(u) + (u - c) * w;
    let mapping = |u: &DVector<f64>| -> Result<(DVector<f64>, f64)> {
        let p = h.prox(&(u - grad(u) / l), 1.0 / l)?;
        let g = (u - &p).norm() * l;
        Ok((p, g))
    };
    let mut x = start.clone();
    let mut v = start.clone();
    let mut best = (x.clone(), f64::INFINITY);
    let mut since_best = 0;
    for it in 0..ORACLE_MAX_ITERS {
        let xn = h.prox(&(&v - grad(&v) / l), 1.0 / l)?;
        v = &xn + (&xn - &x) * beta;
        x = xn;
        if it % 10 == 9 {
            let (p, g) = mapping(&x)?;
            if g <= tol {
                return Ok(p);
            }
            if g < best.1 * (1.0 - 1e-3) {
                best = (p, g);
                since_best = 0;
            } else {
                since_best += 10;
                if since_best > 20_000 {
                    break;
                }
            }
        }
    }
    if best.1 <= 100.0 * tol {
        return Ok(best.0);
    }
    Err(Error::Numeric {
        msg: "proximal-gradient oracle did not reach the requested accuracy".into(),
        estimate: Some(best.1),
    })
}

/// Re-solves the optimality system of a problem with quadratic (or zero)
/// `f_i` and weighted-ℓ₁ (or zero) `h_i` on the support and signs of `x`.
/// Returns the polished pair when it has a smaller KKT error, else the input.
pub fn polish_support(problem: &ProblemSpec, x: &BlockVector, lambda: &DVector<f64>) -> Result<(BlockVector, DVector<f64>)> {
    let dims = problem.dims();
    let n: usize = dims.iter().sum();
    let rows = problem.rows();
    let flat = x.to_flat();
    let scale = flat.amax().max(1.0);
    let mut active = Vec::new();
    let mut hess = DMatrix::zeros(n, n);
    let mut lin = DVector::zeros(n);
    let mut a_full = DMatrix::zeros(rows, n);
    let mut off = 0;
    for b in problem.blocks() {
        let ni = b.dim();
        match &b.smooth.kind {
            SmoothKind::Zero => {}
            SmoothKind::Quadratic { hessian, linear } => {
                hess.view_mut((off, off), (ni, ni)).copy_from(hessian);
                lin.rows_mut(off, ni).copy_from(linear);
            }
            SmoothKind::LeastSquares { .. } => {
                return Err(Error::Unavailable("support polish needs quadratic smooth terms".into()))
            }
        }
        let weights: Option<DVector<f64>> = match &b.prox.kind {
            ProxKind::Zero => None,
            ProxKind::L1 { weights } => Some(weights.clone()),
            _ => return Err(Error::Unavailable("support polish needs ℓ₁ or zero prox terms".into())),
        };
        for j in 0..ni {
            let v = flat[off + j];
            match &weights {
                None => active.push((off + j, 0.0)),
                Some(wt) if v.abs() > 1e-10 * scale => active.push((off + j, wt[j] * v.signum())),
                Some(_) => {}
            }
        }
        a_full.view_mut((0, off), (rows, ni)).copy_from(&b.op.to_dense());
        off += ni;
    }
    let s = active.len();
    let mut k = DMatrix::zeros(s + rows, s + rows);
    let mut r = DVector::zeros(s + rows);
    for (p, (jp, wsign)) in active.iter().enumerate() {
        for (q, (jq, _)) in active.iter().enumerate() {
            k[(p, q)] = hess[(*jp, *jq)];
        }
        for c in 0..rows {
            k[(p, s + c)] = a_full[(c, *jp)];
            k[(s + c, p)] = a_full[(c, *jp)];
        }
        r[p] = -lin[*jp] - wsign;
    }
    r.rows_mut(s, rows).copy_from(problem.rhs());
    let sol = k
        .svd(true, true)
        .solve(&r, 1e-14)
        .map_err(|e| Error::numeric(format!("polish solve failed: {e}")))?;
    let mut xf = DVector::zeros(n);
    for (p, (j, _)) in active.iter().enumerate() {
        xf[*j] = sol[p];
    }
    let xp = BlockVector::from_flat(&xf, &dims)?;
    let lp = sol.rows(s, rows).into_owned();
    let before = kkt_error(problem, x, lambda)?;
    let after = kkt_error(problem, &xp, &lp)?;
    if after < before {
        Ok((xp, lp))
    } else {
        Ok((x.clone(), lambda.clone()))
    }
}

/// Default gate for [`certify_reference`].
pub const CERTIFY_TOL: f64 = REFERENCE_TOL;
