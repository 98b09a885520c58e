//! Smooth terms `f_i` and prox-friendly terms `h_i`.
//!
//! Convexity moduli are metadata: [`SmoothTerm::quadratic`] and
//! [`quadratic_smooth`] compute them for small dense data, everything else
//! defaults to 0 unless set with `with_modulus`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::blockspace::LinearMap;
use crate::error::{Error, Result};

/// Largest column count for which moduli are computed by dense eigensolve.
pub const DENSE_MODULUS_LIMIT: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub enum SmoothKind {
    /// `f ≡ 0`
    Zero,
    /// `f(x) = ½ xᵀHx + cᵀx`
    Quadratic {
        hessian: DMatrix<f64>,
        linear: DVector<f64>,
    },
    /// `f(x) = ½ ‖Fx − d‖²`
    LeastSquares { op: LinearMap, data: DVector<f64> },
}

/// A convex, Lipschitz-differentiable term.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothTerm {
    pub kind: SmoothKind,
    /// Lipschitz constant `ζ` of the gradient, when known.
    pub lipschitz: Option<f64>,
    /// Convexity modulus `μ_f ≥ 0`.
    pub modulus: f64,
}

impl SmoothTerm {
    pub fn zero() -> Self {
        Self {
            kind: SmoothKind::Zero,
            lipschitz: Some(0.0),
            modulus: 0.0,
        }
    }

    /// `½ xᵀHx + cᵀx` with `ζ = λ_max(H)` and `μ = λ_min(H)` (clamped at 0).
    pub fn quadratic(hessian: DMatrix<f64>, linear: DVector<f64>) -> Result<Self> {
        let n = hessian.nrows();
        if hessian.ncols() != n || linear.len() != n {
            return Err(Error::Dimension(format!(
                "quadratic term: H is {}x{}, c has length {}",
                hessian.nrows(),
                hessian.ncols(),
                linear.len()
            )));
        }
        let sym = (&hessian + hessian.transpose()) * 0.5;
        let (lo, hi) = extreme_eigenvalues(&sym);
        if lo < -1e-10 * hi.abs().max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "quadratic term is not convex (λ_min = {lo:e})"
            )));
        }
        let modulus = if lo > 1e-12 * hi.max(1.0) { lo } else { 0.0 };
        Ok(Self {
            kind: SmoothKind::Quadratic { hessian: sym, linear },
            lipschitz: Some(hi.max(0.0)),
            modulus,
        })
    }

    pub fn with_modulus(mut self, modulus: f64) -> Self {
        self.modulus = modulus;
        self
    }

    pub fn with_lipschitz(mut self, lipschitz: Option<f64>) -> Self {
        self.lipschitz = lipschitz;
        self
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, SmoothKind::Zero)
    }

    /// Dimension the term acts on, if it fixes one.
    pub fn dim(&self) -> Option<usize> {
        match &self.kind {
            SmoothKind::Zero => None,
            SmoothKind::Quadratic { linear, .. } => Some(linear.len()),
            SmoothKind::LeastSquares { op, .. } => Some(op.cols()),
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        match &self.kind {
            SmoothKind::Zero => 0.0,
            SmoothKind::Quadratic { hessian, linear } => 0.5 * x.dot(&(hessian * x)) + linear.dot(x),
            SmoothKind::LeastSquares { op, data } => 0.5 * (op.apply(x) - data).norm_squared(),
        }
    }

    pub fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            SmoothKind::Zero => DVector::zeros(x.len()),
            SmoothKind::Quadratic { hessian, linear } => hessian * x + linear,
            SmoothKind::LeastSquares { op, data } => op.adjoint(&(op.apply(x) - data)),
        }
    }

    /// `f(x) − f(base)`, evaluated without cancellation for quadratics.
    pub fn eval_diff(&self, x: &DVector<f64>, base: &DVector<f64>) -> f64 {
        match &self.kind {
            SmoothKind::Zero => 0.0,
            SmoothKind::Quadratic { hessian, linear } => {
                let d = x - base;
                let hd = hessian * &d;
                d.dot(&(hessian * base + linear)) + 0.5 * d.dot(&hd)
            }
            SmoothKind::LeastSquares { op, data } => {
                let d = op.apply(&(x - base));
                let r = op.apply(base) - data;
                d.dot(&r) + 0.5 * d.norm_squared()
            }
        }
    }
}

impl SmoothTerm {
    /// `f(x) − f(base) − ⟨∇f(base), x − base⟩`, computed from `x − base`
    /// alone so it keeps full relative accuracy for tiny steps.
    pub fn linearization_gap(&self, x: &DVector<f64>, base: &DVector<f64>) -> f64 {
        match &self.kind {
            SmoothKind::Zero => 0.0,
            SmoothKind::Quadratic { hessian, .. } => {
                let d = x - base;
                0.5 * d.dot(&(hessian * &d))
            }
            SmoothKind::LeastSquares { op, .. } => 0.5 * op.apply(&(x - base)).norm_squared(),
        }
    }
}

/// `½ ‖Fu − f‖²` with `ζ = ‖FᵀF‖` and, for at most
/// [`DENSE_MODULUS_LIMIT`] columns, `μ = λ_min(FᵀF)`.
pub fn quadratic_smooth(op: LinearMap, data: DVector<f64>) -> Result<SmoothTerm> {
    if op.rows() != data.len() {
        return Err(Error::Dimension(format!(
            "least-squares data has length {}, operator has {} rows",
            data.len(),
            op.rows()
        )));
    }
    let (lipschitz, modulus) = if op.cols() <= DENSE_MODULUS_LIMIT {
        let f = op.to_dense();
        let (lo, hi) = extreme_eigenvalues(&f.tr_mul(&f));
        let lo = if lo > 1e-12 * hi.max(1.0) { lo } else { 0.0 };
        (hi.max(0.0), lo)
    } else {
        (op.gram_norm()?, 0.0)
    };
    Ok(SmoothTerm {
        kind: SmoothKind::LeastSquares { op, data },
        lipschitz: Some(lipschitz),
        modulus,
    })
}

fn extreme_eigenvalues(sym: &DMatrix<f64>) -> (f64, f64) {
    if sym.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = SymmetricEigen::new(sym.clone());
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProxKind {
    /// `h ≡ 0`
    Zero,
    /// `h(x) = Σ w_j |x_j|`, `w ≥ 0`
    L1 { weights: DVector<f64> },
    /// `h(x) = weight · Σ_g ‖x_g‖₂` over consecutive groups of `group` entries.
    GroupL2 { weight: f64, group: usize },
    /// Indicator of the box `[lo, hi]`.
    Box { lo: DVector<f64>, hi: DVector<f64> },
}

/// A proper closed convex term with a cheap proximal operator.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxTerm {
    pub kind: ProxKind,
    /// Convexity modulus `μ_h ≥ 0`.
    pub modulus: f64,
}

impl ProxTerm {
    pub fn zero() -> Self {
        Self {
            kind: ProxKind::Zero,
            modulus: 0.0,
        }
    }

    pub fn l1(weight: f64, n: usize) -> Self {
        Self::weighted_l1(DVector::from_element(n, weight))
    }

    pub fn weighted_l1(weights: DVector<f64>) -> Self {
        Self {
            kind: ProxKind::L1 { weights },
            modulus: 0.0,
        }
    }

    pub fn group_l2(weight: f64, group: usize) -> Self {
        Self {
            kind: ProxKind::GroupL2 { weight, group },
            modulus: 0.0,
        }
    }

    pub fn boxed(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        check_box(&lo, &hi)?;
        Ok(Self {
            kind: ProxKind::Box { lo, hi },
            modulus: 0.0,
        })
    }

    pub fn with_modulus(mut self, modulus: f64) -> Self {
        self.modulus = modulus;
        self
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, ProxKind::Zero)
    }

    /// Value of `h`, `+∞` outside its domain.
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        match &self.kind {
            ProxKind::Zero => 0.0,
            ProxKind::L1 { weights } => weights.iter().zip(x.iter()).map(|(w, v)| w * v.abs()).sum(),
            ProxKind::GroupL2 { weight, group } => {
                weight
                    * x.as_slice()
                        .chunks(*group)
                        .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
                        .sum::<f64>()
            }
            ProxKind::Box { lo, hi } => {
                let inside = x
                    .iter()
                    .zip(lo.iter().zip(hi.iter()))
                    .all(|(v, (l, h))| *v >= *l && *v <= *h);
                if inside {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// `argmin_x h(x) + ‖x − y‖²/(2τ)`.
    pub fn prox(&self, y: &DVector<f64>, tau: f64) -> Result<DVector<f64>> {
        let out = match &self.kind {
            ProxKind::Zero => {
                check_tau(tau)?;
                y.clone()
            }
            ProxKind::L1 { weights } => {
                check_tau(tau)?;
                DVector::from_iterator(
                    y.len(),
                    y.iter().zip(weights.iter()).map(|(v, w)| shrink(*v, tau * w)),
                )
            }
            ProxKind::GroupL2 { weight, group } => group_shrink(y, tau * weight, *group)?,
            ProxKind::Box { lo, hi } => box_indicator_prox(y, lo, hi)?,
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("prox produced a non-finite value"));
        }
        Ok(out)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("prox parameter τ = {tau} must be positive")))
    }
}

fn check_box(lo: &DVector<f64>, hi: &DVector<f64>) -> Result<()> {
    if lo.len() != hi.len() {
        return Err(Error::Dimension("box bounds have different lengths".into()));
    }
    if let Some(j) = (0..lo.len()).find(|&j| lo[j] > hi[j]) {
        return Err(Error::InvalidConfig(format!(
            "box bound lo[{j}] = {} exceeds hi[{j}] = {}",
            lo[j], hi[j]
        )));
    }
    Ok(())
}

#[inline]
fn shrink(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// Componentwise `sign(y)·max(|y| − τ, 0)`.
pub fn soft_threshold(y: &DVector<f64>, tau: f64) -> Result<DVector<f64>> {
    check_tau(tau)?;
    Ok(y.map(|v| shrink(v, tau)))
}

/// Block soft thresholding over consecutive groups of `group` entries.
pub fn group_shrink(y: &DVector<f64>, tau: f64, group: usize) -> Result<DVector<f64>> {
    check_tau(tau)?;
    if group == 0 || !y.len().is_multiple_of(group) {
        return Err(Error::Dimension(format!(
            "length {} is not a multiple of group size {group}",
            y.len()
        )));
    }
    let mut out = y.clone();
    for g in out.as_mut_slice().chunks_mut(group) {
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let factor = if norm > 0.0 { (1.0 - tau / norm).max(0.0) } else { 0.0 };
        g.iter_mut().for_each(|v| *v *= factor);
    }
    Ok(out)
}

/// Projection onto `[lo, hi]`.
pub fn box_indicator_prox(y: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> Result<DVector<f64>> {
    check_box(lo, hi)?;
    if y.len() != lo.len() {
        return Err(Error::Dimension("point and box have different lengths".into()));
    }
    Ok(DVector::from_iterator(
        y.len(),
        y.iter().zip(lo.iter().zip(hi.iter())).map(|(v, (l, h))| v.clamp(*l, *h)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    // 1-D brute force of argmin |x|·τ + ½(x − y)².
    fn brute_l1(y: f64, tau: f64) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for k in -40_000..=40_000 {
            let x = k as f64 * 1e-4;
            let val = tau * x.abs() + 0.5 * (x - y) * (x - y);
            if val < best.0 {
                best = (val, x);
            }
        }
        best.1
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(&v(&[0.0]), 0.7).unwrap()[0], 0.0);
        assert!((soft_threshold(&v(&[2.0]), 1.0).unwrap()[0] - brute_l1(2.0, 1.0)).abs() < 1e-4);
        assert!((soft_threshold(&v(&[2.0]), 1.0).unwrap()[0] - 1.0).abs() < 1e-15);
        assert_eq!(soft_threshold(&v(&[-0.5]), 1.0).unwrap()[0], 0.0);
        assert!(brute_l1(-0.5, 1.0).abs() < 1e-4);
        assert!(matches!(soft_threshold(&v(&[1.0]), 0.0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn group_shrink_examples() {
        assert_eq!(group_shrink(&v(&[3.0, 4.0]), 5.0, 2).unwrap(), v(&[0.0, 0.0]));
        let half = group_shrink(&v(&[3.0, 4.0]), 2.5, 2).unwrap();
        assert!((half - v(&[1.5, 2.0])).norm() < 1e-15);
        assert_eq!(group_shrink(&v(&[0.0, 0.0]), 1.0, 2).unwrap(), v(&[0.0, 0.0]));
        assert!(group_shrink(&v(&[1.0]), -1.0, 2).is_err());
    }

    #[test]
    fn group_shrink_matches_grid_search() {
        // 2-D grid brute force of τ‖x‖ + ½‖x − y‖² for y = (3, 4).
        for &tau in &[2.5, 5.0] {
            let mut best = (f64::INFINITY, (0.0, 0.0));
            for i in 0..=400 {
                for j in 0..=400 {
                    let (a, b) = (i as f64 * 0.01, j as f64 * 0.01);
                    let val = tau * (a * a + b * b).sqrt() + 0.5 * ((a - 3.0).powi(2) + (b - 4.0).powi(2));
                    if val < best.0 {
                        best = (val, (a, b));
                    }
                }
            }
            let p = group_shrink(&v(&[3.0, 4.0]), tau, 2).unwrap();
            assert!((p[0] - best.1 .0).abs() < 0.011 && (p[1] - best.1 .1).abs() < 0.011);
        }
    }

    #[test]
    fn box_prox_examples() {
        let lo = v(&[0.0]);
        let hi = v(&[1.0]);
        assert_eq!(box_indicator_prox(&v(&[0.4]), &lo, &hi).unwrap(), v(&[0.4]));
        assert_eq!(box_indicator_prox(&v(&[5.0]), &lo, &hi).unwrap(), v(&[1.0]));
        assert!(matches!(
            box_indicator_prox(&v(&[0.0]), &hi, &lo),
            Err(Error::InvalidConfig(_))
        ));
        let term = ProxTerm::boxed(lo, hi).unwrap();
        assert_eq!(term.prox(&v(&[-3.0]), 0.1).unwrap(), term.prox(&v(&[-3.0]), 10.0).unwrap());
        assert_eq!(term.eval(&v(&[2.0])), f64::INFINITY);
    }

    #[test]
    fn quadratic_smooth_identity() {
        let t = quadratic_smooth(LinearMap::Identity(3), DVector::zeros(3)).unwrap();
        let u = v(&[1.0, -2.0, 0.5]);
        assert!((t.grad(&u) - &u).norm() < 1e-15);
        assert!((t.lipschitz.unwrap() - 1.0).abs() < 1e-12);
        assert!((t.modulus - 1.0).abs() < 1e-12);
        let exact = quadratic_smooth(LinearMap::Identity(3), u.clone()).unwrap();
        assert_eq!(exact.eval(&u), 0.0);
        assert_eq!(exact.grad(&u).norm(), 0.0);
    }

    #[test]
    fn rank_deficient_modulus_is_zero() {
        let f = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let t = quadratic_smooth(LinearMap::Dense(f), v(&[1.0])).unwrap();
        assert_eq!(t.modulus, 0.0);
        assert!((t.lipschitz.unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn eval_diff_matches_difference() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let t = SmoothTerm::quadratic(h, v(&[1.0, -1.0])).unwrap();
        let (x, b) = (v(&[0.3, 0.7]), v(&[-1.0, 2.0]));
        assert!((t.eval_diff(&x, &b) - (t.eval(&x) - t.eval(&b))).abs() < 1e-13);
    }

    #[test]
    fn nonconvex_quadratic_rejected() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(SmoothTerm::quadratic(h, v(&[0.0, 0.0])).is_err());
    }
}
