//! Optimality measures, the energy functional and rate estimation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::blockspace::{BlockTriangular, BlockVector};
use crate::error::{Error, Result};
use crate::problem::ProblemSpec;

/// Default KKT gate for reference pairs.
pub const REFERENCE_TOL: f64 = 1e-9;

/// Gaps below this are reported as suspicious (bad reference pair).
pub const NEGATIVE_GAP_TOL: f64 = -1e-9;

/// A primal-dual pair that passed the KKT gate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePair {
    pub x_star: BlockVector,
    pub lambda_star: DVector<f64>,
    pub source: String,
    /// KKT error measured at construction.
    pub kkt: f64,
}

impl ReferencePair {
    /// Accepts the pair iff its KKT error is at most [`REFERENCE_TOL`].
    pub fn new(problem: &ProblemSpec, x_star: BlockVector, lambda_star: DVector<f64>, source: impl Into<String>) -> Result<Self> {
        Self::with_tol(problem, x_star, lambda_star, source, REFERENCE_TOL)
    }

    pub fn with_tol(
        problem: &ProblemSpec,
        x_star: BlockVector,
        lambda_star: DVector<f64>,
        source: impl Into<String>,
        tol: f64,
    ) -> Result<Self> {
        problem.check_point(&x_star)?;
        problem.check_dual(&lambda_star)?;
        if !x_star.is_finite() || lambda_star.iter().any(|t| !t.is_finite()) {
            return Err(Error::Rejected { kkt: f64::INFINITY, tol });
        }
        let kkt = kkt_error(problem, &x_star, &lambda_star)?;
        if !(kkt <= tol) {
            return Err(Error::Rejected { kkt, tol });
        }
        Ok(Self {
            x_star,
            lambda_star,
            source: source.into(),
            kkt,
        })
    }
}

/// `e_i(x, λ) = ‖x_i − prox_{h_i}(x_i − ∇f_i(x_i) − A_iᵀλ; 1)‖` per block.
pub fn block_stationarity(problem: &ProblemSpec, x: &BlockVector, lambda: &DVector<f64>) -> Result<Vec<f64>> {
    problem.check_point(x)?;
    problem.check_dual(lambda)?;
    problem
        .blocks()
        .iter()
        .zip(x.blocks())
        .map(|(b, xi)| {
            let arg = xi - b.smooth.grad(xi) - b.op.adjoint(lambda);
            Ok((xi - b.prox.prox(&arg, 1.0)?).norm())
        })
        .collect()
}

/// `K(x, λ) = ‖Ax − b‖ + Σ_i e_i(x, λ)`
pub fn kkt_error(problem: &ProblemSpec, x: &BlockVector, lambda: &DVector<f64>) -> Result<f64> {
    let e: f64 = block_stationarity(problem, x, lambda)?.iter().sum();
    Ok(problem.residual(x)?.norm() + e)
}

/// `E = ρ‖y − x*‖²_P + (1/ρ)‖λ − λ*‖² + α Σ_i ‖x_i − x_i*‖²/Γ_i`.
/// Blocks with `Γ_i = ∞` (exact block solves) contribute nothing.
#[allow(clippy::too_many_arguments)]
pub fn energy(
    m: &BlockTriangular<'_>,
    x: &BlockVector,
    y: &BlockVector,
    lambda: &DVector<f64>,
    reference: &ReferencePair,
    big_gamma: &[f64],
    rho: f64,
    alpha: f64,
) -> Result<f64> {
    energy_parts(m, x, y, lambda, &reference.x_star, &reference.lambda_star, big_gamma, rho, alpha).map(|p| p.iter().sum())
}

#[allow(clippy::too_many_arguments)]
fn energy_parts(
    m: &BlockTriangular<'_>,
    x: &BlockVector,
    y: &BlockVector,
    lambda: &DVector<f64>,
    x_star: &BlockVector,
    lambda_star: &DVector<f64>,
    big_gamma: &[f64],
    rho: f64,
    alpha: f64,
) -> Result<[f64; 3]> {
    if big_gamma.len() != x.num_blocks() {
        return Err(Error::Dimension(format!(
            "{} accumulators Γ for {} blocks",
            big_gamma.len(),
            x.num_blocks()
        )));
    }
    let mut xs = 0.0;
    for ((xi, si), g) in x.blocks().iter().zip(x_star.blocks()).zip(big_gamma) {
        if g.is_infinite() {
            continue;
        }
        if !(*g > 0.0) {
            return Err(Error::InvalidConfig(format!("energy needs Γ_i > 0, got {g}")));
        }
        xs += (xi - si).norm_squared() / g;
    }
    let py = m.p_norm_sq(&(y - x_star))?;
    Ok([rho * py, (lambda - lambda_star).norm_squared() / rho, alpha * xs])
}

/// `Δ = L(z, λ*) − Φ(x*)` with a flag for values below [`NEGATIVE_GAP_TOL`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gap {
    pub value: f64,
    pub negative: bool,
}

pub fn lagrangian_gap(problem: &ProblemSpec, z: &BlockVector, reference: &ReferencePair) -> Result<Gap> {
    let phi = problem.objective(z);
    if !phi.is_finite() {
        return Err(Error::Domain("objective is not finite at z".into()));
    }
    let value = problem.lagrangian(z, &reference.lambda_star)? - problem.objective(&reference.x_star);
    Ok(Gap {
        value,
        negative: value < NEGATIVE_GAP_TOL,
    })
}

fn check_len(zs: &[BlockVector], t: usize) -> Result<()> {
    if t == 0 || t > zs.len() {
        return Err(Error::Dimension(format!(
            "average over t = {t} iterates needs 1 ≤ t ≤ {}",
            zs.len()
        )));
    }
    Ok(())
}

/// `z̄^t = (1/t) Σ_{k=1}^t z^k`
pub fn ergodic_average(zs: &[BlockVector], t: usize) -> Result<BlockVector> {
    check_len(zs, t)?;
    let mut acc = zs[0].scale(0.0);
    for z in &zs[..t] {
        acc.axpy(1.0, z);
    }
    Ok(acc.scale(1.0 / t as f64))
}

/// Weights `2(k₀ + k)/(t(t+1) + 2k₀t)`, `k = 1..t`.
pub fn ergodic_weights(t: usize, k0: f64) -> Vec<f64> {
    let tf = t as f64;
    let denom = tf * (tf + 1.0) + 2.0 * k0 * tf;
    (1..=t).map(|k| 2.0 * (k0 + k as f64) / denom).collect()
}

/// `z̃^t = (2/(t(t+1) + 2k₀t)) Σ_{k=1}^t (k₀ + k) z^k`
pub fn weighted_ergodic(zs: &[BlockVector], t: usize, k0: f64) -> Result<BlockVector> {
    check_len(zs, t)?;
    let w = ergodic_weights(t, k0);
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::numeric(format!("ergodic weights sum to {total}")));
    }
    let mut acc = zs[0].scale(0.0);
    for (z, wk) in zs[..t].iter().zip(&w) {
        acc.axpy(*wk, z);
    }
    Ok(acc)
}

/// Least-squares fit of `log value = slope·log k + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Inclusive range of `k` used.
    pub window: (f64, f64),
    /// Root-mean-square misfit in log space.
    pub residual: f64,
    pub points: usize,
}

/// Fits the points with `k` inside `window`.
pub fn rate_fit(series: &[(f64, f64)], window: (f64, f64)) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(k, _)| *k >= window.0 && *k <= window.1)
        .copied()
        .collect();
    if pts.len() < 2 {
        return Err(Error::Domain(format!("rate fit needs two points in {window:?}")));
    }
    if let Some((k, v)) = pts.iter().find(|(k, v)| !(*v > 0.0) || !(*k > 0.0)) {
        return Err(Error::Domain(format!("rate fit needs positive data, got ({k}, {v})")));
    }
    let n = pts.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = pts.iter().map(|(k, v)| (k.ln(), v.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("rate fit window holds a single abscissa".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(RateFit {
        slope,
        intercept,
        window,
        residual: (ss / n).sqrt(),
        points: pts.len(),
    })
}

/// Two-step ratios `E_{k+2}/E_k` of a positive series.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioSeries {
    pub ratios: Vec<f64>,
    /// Max over the last `tail` ratios.
    pub tail_max: f64,
    /// Index of the first entry below `1e-300`, if the series was cut there.
    pub truncated_at: Option<usize>,
}

pub fn two_step_ratio(series: &[f64], tail: usize) -> RatioSeries {
    let cut = series.iter().position(|v| !(*v >= 1e-300));
    let pos = &series[..cut.unwrap_or(series.len())];
    let ratios: Vec<f64> = if pos.len() > 2 {
        pos.windows(3).map(|w| w[2] / w[0]).collect()
    } else {
        Vec::new()
    };
    let start = ratios.len().saturating_sub(tail);
    let tail_max = ratios[start..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    RatioSeries {
        ratios,
        tail_max,
        truncated_at: cut,
    }
}

/// Description of the primal-dual solution set.
#[derive(Debug, Clone)]
pub enum SolutionSet {
    Singleton(ReferencePair),
    /// `{x0 + Σ s_j X_j} × {λ0 + Σ t_j L_j}`
    Affine {
        x0: BlockVector,
        x_basis: Vec<BlockVector>,
        lambda0: DVector<f64>,
        lambda_basis: Vec<DVector<f64>>,
    },
}

/// `E*`: the energy minimized over the solution set. `None` without a
/// description of the set.
#[allow(clippy::too_many_arguments)]
pub fn distance_energy_star(
    m: &BlockTriangular<'_>,
    x: &BlockVector,
    y: &BlockVector,
    lambda: &DVector<f64>,
    set: Option<&SolutionSet>,
    big_gamma: &[f64],
    rho: f64,
    alpha: f64,
) -> Result<Option<f64>> {
    let Some(set) = set else { return Ok(None) };
    match set {
        SolutionSet::Singleton(r) => energy(m, x, y, lambda, r, big_gamma, rho, alpha).map(Some),
        SolutionSet::Affine {
            x0,
            x_basis,
            lambda0,
            lambda_basis,
        } => {
            let weight = |g: &f64| if g.is_infinite() { 0.0 } else { 1.0 / g };
            let dgam = |v: &BlockVector| {
                BlockVector::new(v.blocks().iter().zip(big_gamma).map(|(b, g)| b * weight(g)).collect())
            };
            // Primal part: ρ‖y − x0 − Xs‖²_P + αΣ‖x_i − x0_i − (Xs)_i‖²/Γ_i.
            let p = x_basis.len();
            let px: Vec<BlockVector> = x_basis.iter().map(|b| m.apply_p(b)).collect::<Result<_>>()?;
            let dx: Vec<BlockVector> = x_basis.iter().map(dgam).collect();
            let ry = y - x0;
            let rx = x - x0;
            let mut g = DMatrix::zeros(p, p);
            let mut rhs = DVector::zeros(p);
            for a in 0..p {
                for b in 0..p {
                    g[(a, b)] = rho * px[a].dot(&x_basis[b]) + alpha * dx[a].dot(&x_basis[b]);
                }
                rhs[a] = rho * px[a].dot(&ry) + alpha * dx[a].dot(&rx);
            }
            let s = solve_psd(g, rhs)?;
            let mut xs = x0.clone();
            for (sj, bj) in s.iter().zip(x_basis) {
                xs.axpy(*sj, bj);
            }
            // Dual part: least squares in the multiplier family.
            let q = lambda_basis.len();
            let lm = DMatrix::from_fn(lambda.len(), q, |r, c| lambda_basis[c][r]);
            let t = if q > 0 { solve_psd(lm.tr_mul(&lm), lm.tr_mul(&(lambda - lambda0)))? } else { DVector::zeros(0) };
            let ls = lambda0 + &lm * t;
            let parts = energy_parts(m, x, y, lambda, &xs, &ls, big_gamma, rho, alpha)?;
            Ok(Some(parts.iter().sum()))
        }
    }
}

fn solve_psd(g: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    if g.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    g.svd(true, true)
        .solve(&rhs, 1e-13)
        .map_err(|e| Error::numeric(format!("least-squares solve failed: {e}")))
}

/// One row of an inequality-check report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub check: String,
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
}

impl CheckRow {
    /// Row for `lhs ≤ rhs + slack`.
    pub fn le(check: impl Into<String>, k: usize, lhs: f64, rhs: f64, slack: f64) -> Self {
        Self {
            check: check.into(),
            k,
            lhs,
            rhs,
            slack,
            pass: lhs <= rhs + slack,
        }
    }
}

/// CSV with columns `check,k,lhs,rhs,slack,pass`.
pub fn rows_csv(rows: &[CheckRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_one() {
        for t in [1, 2, 7, 100] {
            for k0 in [0.0, 0.5, 16.0, 1e4] {
                let s: f64 = ergodic_weights(t, k0).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        let w = ergodic_weights(2, 0.0);
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-15 && (w[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(ergodic_weights(1, 7.0), vec![1.0]);
    }

    #[test]
    fn averages() {
        let z1 = BlockVector::new(vec![DVector::from_vec(vec![0.0, 0.0])]);
        let z2 = BlockVector::new(vec![DVector::from_vec(vec![2.0, 4.0])]);
        let zs = vec![z1.clone(), z2];
        assert_eq!(ergodic_average(&zs, 1).unwrap(), z1);
        assert_eq!(ergodic_average(&zs, 2).unwrap().to_flat(), DVector::from_vec(vec![1.0, 2.0]));
        assert!(ergodic_average(&zs, 3).is_err());
        assert!(weighted_ergodic(&zs, 0, 1.0).is_err());
    }

    #[test]
    fn power_law_slopes() {
        let s1: Vec<(f64, f64)> = (1..200).map(|k| (k as f64, 3.0 / k as f64)).collect();
        assert!((rate_fit(&s1, (1.0, 199.0)).unwrap().slope + 1.0).abs() < 1e-6);
        let s2: Vec<(f64, f64)> = (1..200).map(|k| (k as f64, 3.0 / (k * k) as f64)).collect();
        assert!((rate_fit(&s2, (10.0, 199.0)).unwrap().slope + 2.0).abs() < 1e-6);
        let bad = vec![(1.0, 1.0), (2.0, 0.0)];
        assert!(matches!(rate_fit(&bad, (1.0, 2.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn ratios() {
        let g: Vec<f64> = (0..20).map(|k| 2.0 * 0.5f64.powi(k)).collect();
        let r = two_step_ratio(&g, 5);
        assert!(r.ratios.iter().all(|x| (x - 0.25).abs() < 1e-15));
        assert!((r.tail_max - 0.25).abs() < 1e-15);
        let z = vec![1.0, 0.5, 0.25, 0.0, 0.0];
        let r = two_step_ratio(&z, 5);
        assert_eq!(r.truncated_at, Some(3));
        assert_eq!(r.ratios, vec![0.25]);
    }
}
