//! Property suites behind the `verify` command. Each suite returns one
//! [`CheckRow`] per checked inequality.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::blockspace::{BlockTriangular, BlockVector, LinearMap};
use crate::diagnostics::{rate_fit, two_step_ratio, CheckRow};
use crate::error::{Error, Result};
use crate::inner::{InnerLoop, InnerParams, StepRule, Subproblem};
use crate::oracle::subproblem_minimizer;
use crate::outer::{initial_gammas, GammaInit, Mode, SolveReport, Solver, SolverParams};
use crate::problem::{Block, ProblemSpec};
use crate::problems::{entry, CorpusEntry, HAAR_LEVELS};
use crate::proxlib::{ProxTerm, SmoothTerm};

pub const SUITES: [&str; 6] = ["inner", "decay", "ergodic", "strong", "linear", "operators"];

/// Absolute slack of the checked inequalities.
pub const SLACK: f64 = 1e-8;

pub fn run_suite(name: &str) -> Result<Vec<CheckRow>> {
    match name {
        "inner" => suite_inner(),
        "decay" => suite_decay(),
        "ergodic" => suite_ergodic(),
        "strong" => suite_strong(),
        "linear" => suite_linear(),
        "operators" => suite_operators(),
        other => Err(Error::InvalidConfig(format!(
            "unknown suite `{other}`; expected one of {SUITES:?}"
        ))),
    }
}

fn normal(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn decay_ids() -> Vec<String> {
    (0..10).map(|s| format!("qp-{s}-m3")).collect()
}

pub fn strong_ids() -> Vec<String> {
    (0..5).map(|s| format!("qp-{s}-m3-mu0.5")).collect()
}

pub fn lasso_ids() -> Vec<String> {
    (0..5).map(|s| format!("lasso-{s}")).collect()
}

/// Inner-loop properties: `ξ^l = 1` along runs from corpus subproblems and
/// the per-step accuracy bound against the oracle minimizer.
pub fn suite_inner() -> Result<Vec<CheckRow>> {
    let mut rows = xi_rows()?;
    rows.extend(accuracy_rows(20, 60)?);
    Ok(rows)
}

/// `|δ^l α^l γ^l − 1|` for 50 steps on every block of ten corpus problems
/// under both step rules.
pub fn xi_rows() -> Result<Vec<CheckRow>> {
    let ids = ["qp-0-m3", "qp-1-m3", "qp-2-m2", "qp-3-m4", "qp-0-m3-mu0.5", "qp-1-m2-mu1", "lasso-0", "lasso-1", "lasso-2", "qp-4-m1"];
    let mut rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for id in ids {
        let e = entry(id)?;
        let p = &e.problem;
        let gammas = initial_gammas(p, &GammaInit::PowerIteration)?;
        let lambda = normal(&mut rng, p.rows());
        for rule in [StepRule::Constant, StepRule::Adaptive] {
            let params = InnerParams {
                rule,
                ..InnerParams::default()
            };
            for (i, block) in p.blocks().iter().enumerate() {
                let x_k = normal(&mut rng, block.dim());
                let y_i = normal(&mut rng, block.dim());
                let b_i = normal(&mut rng, p.rows());
                let sub = Subproblem::new(block, &x_k, &y_i, &b_i, &lambda, 1.0, gammas[i]);
                let mut lp = InnerLoop::new(&sub, &params)?;
                for _ in 0..50 {
                    lp.step()?;
                    let s = lp.state();
                    rows.push(CheckRow::le(format!("xi:{id}:{rule:?}:{i}"), s.l, (s.xi() - 1.0).abs(), 0.0, 1e-9));
                }
            }
        }
    }
    Ok(rows)
}

/// A random block with strongly convex quadratic `f`, optional ℓ₁ term and
/// dense `A`, plus subproblem data.
pub struct RandomSubproblem {
    pub block: Block,
    pub x_k: DVector<f64>,
    pub y_i: DVector<f64>,
    pub b_i: DVector<f64>,
    pub lambda: DVector<f64>,
    pub rho: f64,
    pub gamma: f64,
}

pub fn random_subproblem(seed: u64) -> Result<RandomSubproblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAB5 ^ seed);
    let n = rng.random_range(2..=6);
    let rows = rng.random_range(1..=5);
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let h = g.tr_mul(&g) / n as f64 + DMatrix::identity(n, n) * 0.1;
    let c = normal(&mut rng, n);
    let a = DMatrix::from_fn(rows, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let prox = if seed.is_multiple_of(2) { ProxTerm::l1(rng.random_range(0.05..0.5), n) } else { ProxTerm::zero() };
    let op = LinearMap::Dense(a);
    let gamma = crate::blockspace::spectral_norm(&op)?.powi(2) * 1.01 + 0.1;
    Ok(RandomSubproblem {
        block: Block::new(SmoothTerm::quadratic(h, c)?, prox, op),
        x_k: normal(&mut rng, n),
        y_i: normal(&mut rng, n),
        b_i: normal(&mut rng, rows),
        lambda: normal(&mut rng, rows),
        rho: rng.random_range(0.5..2.0),
        gamma,
    })
}

/// `ρν‖a^L − x̄‖² + (μ_h/2) Σ_{l≤L} ‖a^l − x̄‖² + (σ/γ^L) Σ_{l≤L} ξ^l‖u^l − u^{l−1}‖²
/// ≤ ‖x^k − x̄‖²/γ^L` with `ν = γ_i`, for `L = 1..steps`.
pub fn accuracy_rows(count: u64, steps: usize) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for seed in 0..count {
        let sp = random_subproblem(seed)?;
        let xbar = subproblem_minimizer(&sp.block, &sp.y_i, &sp.b_i, &sp.lambda, sp.rho, sp.gamma, &sp.x_k, 1e-13)?;
        for rule in [StepRule::Adaptive, StepRule::Constant] {
            let params = InnerParams {
                rule,
                ..InnerParams::default()
            };
            let sub = Subproblem::new(&sp.block, &sp.x_k, &sp.y_i, &sp.b_i, &sp.lambda, sp.rho, sp.gamma);
            let mut lp = InnerLoop::new(&sub, &params)?;
            let mut weighted = 0.0;
            let mut spread = 0.0;
            let d0 = (&sp.x_k - &xbar).norm_squared();
            for _ in 0..steps {
                let prev_u = lp.state().u.clone();
                lp.step()?;
                let s = lp.state();
                weighted += s.xi() * (&s.u - prev_u).norm_squared();
                spread += (&s.a - &xbar).norm_squared();
                let lhs = sp.rho * sp.gamma * (&s.a - &xbar).norm_squared()
                    + 0.5 * sp.block.prox.modulus * spread
                    + params.sigma / s.gamma * weighted;
                rows.push(CheckRow::le(format!("accuracy:{seed}:{rule:?}"), s.l, lhs, d0 / s.gamma, SLACK));
            }
        }
    }
    Ok(rows)
}

fn qp_run(e: &CorpusEntry, params: SolverParams) -> Result<SolveReport> {
    let r = e
        .reference
        .as_ref()
        .ok_or_else(|| Error::Unavailable(format!("{} has no reference pair", e.id)))?;
    Solver::new(&e.problem, params).with_reference(r).run()
}

/// Energy decay and `Δ^k ≥ 0` on ten convex QPs with fixed `ρ`.
pub fn suite_decay() -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for id in decay_ids() {
        let e = entry(&id)?;
        let rep = qp_run(&e, SolverParams::default())?;
        rows.extend(decay_rows(&id, &rep));
    }
    Ok(rows)
}

pub fn decay_rows(id: &str, rep: &SolveReport) -> Vec<CheckRow> {
    let mut rows = Vec::new();
    for w in rep.history.windows(2) {
        let (a, b) = (w[0].reference.as_ref(), w[1].reference.as_ref());
        if let (Some(a), Some(b)) = (a, b) {
            rows.push(CheckRow::le(
                format!("decay:{id}"),
                w[0].k,
                a.decay_bound,
                a.energy - b.energy,
                SLACK * (1.0 + a.energy),
            ));
        }
    }
    for h in &rep.history {
        if let Some(d) = &h.reference {
            rows.push(CheckRow::le(format!("gap-nonnegative:{id}"), h.k, -d.delta, 0.0, 1e-9));
        }
    }
    rows
}

/// Settings of the long runs behind the ergodic rate checks.
pub fn long_run_params(max_outer: usize) -> SolverParams {
    SolverParams {
        tol: 0.0,
        zero_eps: 0.0,
        max_outer,
        ..SolverParams::default()
    }
}

/// `L(z̄^t, λ*) − Φ(x*) ≤ E₁/(2αt)` for all `t` and the fitted slope of the
/// gap over `t ∈ [50, 2000]`.
pub fn suite_ergodic() -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for id in decay_ids() {
        let e = entry(&id)?;
        let params = long_run_params(2000);
        let alpha = params.alpha;
        let rep = qp_run(&e, params)?;
        rows.extend(ergodic_rows(&id, &rep, alpha)?);
    }
    Ok(rows)
}

pub fn ergodic_rows(id: &str, rep: &SolveReport, alpha: f64) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let e1 = rep.history[0].reference.as_ref().map(|d| d.energy).unwrap_or(f64::NAN);
    let mut series = Vec::new();
    for h in &rep.history {
        if let Some(d) = &h.reference {
            let t = h.k as f64;
            rows.push(CheckRow::le(format!("ergodic-bound:{id}"), h.k, d.ergodic_gap, e1 / (2.0 * alpha * t), SLACK));
            series.push((t, d.ergodic_gap));
        }
    }
    let fit = rate_fit(&series, (50.0, 2000.0))?;
    rows.push(CheckRow::le(format!("ergodic-slope:{id}"), fit.points, fit.slope, -1.0 + 0.15, 0.0));
    Ok(rows)
}

/// Strong-mode settings for the accelerated-rate checks.
pub fn strong_params() -> SolverParams {
    SolverParams {
        mode: Mode::Strong,
        tol: 1e-10,
        max_outer: 5000,
        ..SolverParams::default()
    }
}

/// Accelerated weighted-ergodic bound, the `‖y^{t+1} − x*‖²` bound and the
/// fitted slopes on five strongly convex QPs.
pub fn suite_strong() -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for id in strong_ids() {
        let e = entry(&id)?;
        let params = strong_params();
        let alpha = params.alpha;
        let rep = qp_run(&e, params)?;
        rows.extend(strong_rows(&id, &rep, alpha)?);
    }
    Ok(rows)
}

/// Points of a decreasing series down to `floor` relative to its start.
fn above_floor(series: &[(f64, f64)], floor: f64) -> Vec<(f64, f64)> {
    let top = series.first().map(|p| p.1).unwrap_or(0.0);
    series.iter().take_while(|p| p.1 > floor * top).copied().collect()
}

pub fn strong_rows(id: &str, rep: &SolveReport, alpha: f64) -> Result<Vec<CheckRow>> {
    let c = rep
        .strong
        .ok_or_else(|| Error::Unavailable("strong-mode constants missing".into()))?;
    let cbar = rep
        .c_bar
        .ok_or_else(|| Error::Unavailable("c̄ needs a reference pair".into()))?;
    let slack = SLACK * (1.0 + cbar);
    let mut rows = Vec::new();
    let mut gaps = Vec::new();
    let mut dists = Vec::new();
    for h in &rep.history {
        let Some(d) = &h.reference else { continue };
        let t = h.k as f64;
        let wg = d.weighted_gap.unwrap_or(f64::NAN);
        rows.push(CheckRow::le(
            format!("accelerated-gap:{id}"),
            h.k,
            wg,
            2.0 * cbar / (alpha * (t * (t + 1.0) + 2.0 * c.k0 * t)),
            slack,
        ));
        gaps.push((t, wg));
        if let Some(y2) = d.y_next_dist_sq {
            rows.push(CheckRow::le(format!("y-distance:{id}"), h.k, y2, cbar / ((t + c.k0).powi(2) * c.theta), slack));
            dists.push((t, y2));
        }
    }
    let gaps = above_floor(&gaps[9.min(gaps.len())..], 1e-12);
    let dists = above_floor(&dists[9.min(dists.len())..], 1e-12);
    for (name, s) in [("accelerated-gap-slope", gaps), ("y-distance-slope", dists)] {
        let hi = s.last().map(|p| p.0).unwrap_or(0.0);
        let fit = rate_fit(&s, (10.0, hi))?;
        rows.push(CheckRow::le(format!("{name}:{id}"), fit.points, fit.slope, -2.0 + 0.2, 0.0));
    }
    Ok(rows)
}

/// Two-step energy ratios on the lasso family; the last 50 must stay below 1.
pub fn suite_linear() -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for id in lasso_ids() {
        let e = entry(&id)?;
        let rep = qp_run(&e, linear_params())?;
        let series: Vec<f64> = rep.history.iter().filter_map(|h| h.reference.as_ref().map(|d| d.energy)).collect();
        let r = two_step_ratio(&series, 50);
        rows.push(CheckRow::le(format!("two-step-ratio:{id}"), r.ratios.len(), r.tail_max, 1.0, -1e-12));
    }
    Ok(rows)
}

pub fn linear_params() -> SolverParams {
    SolverParams {
        tol: 1e-10,
        ..SolverParams::default()
    }
}

/// Entries exercised by the operator checks.
pub fn operator_ids() -> Vec<String> {
    let mut ids = decay_ids();
    ids.extend(strong_ids());
    ids.extend(lasso_ids());
    ids.push("img-0-s16".into());
    ids
}

/// Adjoint identities, Haar orthonormality, back-substitution residuals and
/// the `P`-norm against a dense assembly, on every corpus entry above.
pub fn suite_operators() -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for id in operator_ids() {
        rows.extend(operator_rows(&entry(&id)?)?);
    }
    Ok(rows)
}

pub fn operator_rows(e: &CorpusEntry) -> Result<Vec<CheckRow>> {
    let id = &e.id;
    let p = &e.problem;
    let mut rng = ChaCha8Rng::seed_from_u64(0x0be);
    let mut rows = Vec::new();
    let pairs = if p.dims().iter().sum::<usize>() > 500 { 10 } else { 100 };
    for (i, b) in p.blocks().iter().enumerate() {
        let mut worst: f64 = 0.0;
        for _ in 0..pairs {
            let x = normal(&mut rng, b.op.cols());
            let y = normal(&mut rng, b.op.rows());
            let ax = b.op.apply(&x);
            let aty = b.op.adjoint(&y);
            let scale = ax.norm() * y.norm() + x.norm() * aty.norm() + 1.0;
            worst = worst.max((ax.dot(&y) - x.dot(&aty)).abs() / scale);
        }
        rows.push(CheckRow::le(format!("adjoint:{id}:{i}"), i, worst, 0.0, 1e-10));
    }
    if let Some(d) = &e.imaging {
        let psi = LinearMap::haar(d.side, HAAR_LEVELS)?;
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let w = normal(&mut rng, d.side * d.side);
            worst = worst.max((psi.adjoint(&psi.apply(&w)) - &w).amax());
            worst = worst.max((psi.apply(&psi.adjoint(&w)) - &w).amax());
        }
        rows.push(CheckRow::le(format!("haar-orthonormal:{id}"), 0, worst, 0.0, 1e-12));
    }
    let gammas = initial_gammas(p, &GammaInit::PowerIteration)?;
    let m = BlockTriangular::new(p.ops(), gammas.clone())?;
    let dims = p.dims();
    for trial in 0..5 {
        let y = BlockVector::new(dims.iter().map(|&n| normal(&mut rng, n)).collect());
        let z = BlockVector::new(dims.iter().map(|&n| normal(&mut rng, n)).collect());
        let alpha = 0.3 + 0.1 * trial as f64;
        let yn = m.back_substitute(&y, &z, alpha)?;
        let lhs = m.apply_mt(&(&yn - &y))?;
        let rhs = BlockVector::new(
            (&z - &y)
                .blocks()
                .iter()
                .zip(&gammas)
                .map(|(b, g)| b * (alpha * g))
                .collect(),
        );
        let res = (&lhs - &rhs).norm() / (1.0 + rhs.norm());
        rows.push(CheckRow::le(format!("back-substitution:{id}"), trial, res, 0.0, 1e-10));
    }
    let pd = dense_p(p, &gammas);
    for trial in 0..5 {
        let x = normal(&mut rng, pd.nrows());
        let dense = x.dot(&(&pd * &x));
        let fast = m.p_norm_sq(&BlockVector::from_flat(&x, &dims)?)?;
        rows.push(CheckRow::le(format!("p-norm:{id}"), trial, (dense - fast).abs() / (1.0 + dense.abs()), 0.0, 1e-10));
    }
    Ok(rows)
}

/// Dense `P = M Q⁻¹ Mᵀ` assembled from dense copies of the operators.
pub fn dense_p(p: &ProblemSpec, gammas: &[f64]) -> DMatrix<f64> {
    let dims = p.dims();
    let n: usize = dims.iter().sum();
    let a: Vec<DMatrix<f64>> = p.ops().iter().map(|o| o.to_dense()).collect();
    let mut m = DMatrix::zeros(n, n);
    let mut qinv = DMatrix::zeros(n, n);
    let offs: Vec<usize> = dims.iter().scan(0, |s, d| {
        let o = *s;
        *s += d;
        Some(o)
    }).collect();
    for i in 0..dims.len() {
        for k in 0..dims[i] {
            m[(offs[i] + k, offs[i] + k)] = gammas[i];
            qinv[(offs[i] + k, offs[i] + k)] = 1.0 / gammas[i];
        }
        for j in 0..i {
            m.view_mut((offs[i], offs[j]), (dims[i], dims[j])).copy_from(&a[i].tr_mul(&a[j]));
        }
    }
    &m * qinv * m.transpose()
}
