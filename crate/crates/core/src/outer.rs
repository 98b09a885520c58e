//! The outer iteration: Gauss–Seidel block sweep with inexact inner
//! solves, error estimate, back-substitution correction and multiplier
//! update.

use std::time::{Duration, Instant};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::blockspace::{spectral_norm, BlockTriangular, BlockVector, LinearMap};
use crate::diagnostics::{self, ReferencePair};
use crate::error::{Error, Result};
use crate::inner::{run_inner, InnerParams, StepRule, StopContext, Subproblem};
use crate::oracle;
use crate::problem::ProblemSpec;

/// Power-iteration estimates of `‖A_iᵀA_i‖` are inflated by this factor so
/// `γ_i I − A_iᵀA_i` stays positive semidefinite despite estimation error.
pub const GAMMA_MARGIN: f64 = 1e-6;

/// Number of scalars kept across all stored iterates.
const STORE_BUDGET: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Fixed penalty `ρ`.
    Convex,
    /// Growing penalty `ρ_k = (k₀ + k)θ`.
    Strong,
    /// Block subproblems solved to high accuracy by the oracle; `r_i^k = 0`.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GammaInit {
    /// `γ_i = ‖A_iᵀA_i‖(1 + margin)` by power iteration.
    PowerIteration,
    /// Start every `γ_i` at `start` and multiply by `factor` whenever
    /// `γ_i‖z_i − y_i‖² < ‖A_i(z_i − y_i)‖²`.
    Safeguard { start: f64, factor: f64 },
    Fixed(Vec<f64>),
}

impl GammaInit {
    pub fn safeguard() -> Self {
        GammaInit::Safeguard { start: 4.0, factor: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub mode: Mode,
    /// Penalty in convex and exact mode.
    pub rho: f64,
    /// Strong-convexity level for the strong mode; defaults to the
    /// aggregated modulus of the problem.
    pub mu: Option<f64>,
    pub alpha: f64,
    /// Weights of `‖z − y‖`, `‖Az − b‖` and `√R` in `ε`.
    pub theta: [f64; 3],
    pub tol: f64,
    /// `ε` at or below this value counts as exactly zero.
    pub zero_eps: f64,
    pub max_outer: usize,
    pub inner: InnerParams,
    pub gamma_init: GammaInit,
    /// Accuracy of the block minimizers in exact mode.
    pub exact_tol: f64,
    /// Keep `(x^k, y^k, z^k, λ^k)` for every iteration (bounded).
    pub store_iterates: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            mode: Mode::Convex,
            rho: 1.0,
            mu: None,
            alpha: 0.5,
            theta: [1.0; 3],
            tol: 1e-8,
            zero_eps: 1e-12,
            max_outer: 100_000,
            inner: InnerParams::default(),
            gamma_init: GammaInit::PowerIteration,
            exact_tol: 1e-10,
            store_iterates: false,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("α = {} must lie in (0, 1)", self.alpha)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidConfig(format!("ρ = {} must be positive", self.rho)));
        }
        if self.theta.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::InvalidConfig(format!("ε weights {:?} must be positive", self.theta)));
        }
        if !(self.tol >= 0.0) || !(self.zero_eps >= 0.0) {
            return Err(Error::InvalidConfig("tolerances must be nonnegative".into()));
        }
        if self.max_outer == 0 {
            return Err(Error::InvalidConfig("max_outer must be positive".into()));
        }
        if let GammaInit::Safeguard { start, factor } = self.gamma_init {
            if !(start > 0.0 && factor > 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "safeguard needs start > 0 and factor > 1, got {start}, {factor}"
                )));
            }
        }
        self.inner.validate()
    }

    pub fn with_rule(mut self, rule: StepRule) -> Self {
        self.inner.rule = rule;
        self
    }
}

/// Iterate of the outer loop after Step 1 (and Step 3 once it ran).
#[derive(Debug, Clone)]
pub struct OuterState {
    pub k: usize,
    pub x: BlockVector,
    pub y: BlockVector,
    pub z: BlockVector,
    pub lambda: DVector<f64>,
    /// `Γ_i^k`
    pub big_gamma: Vec<f64>,
    pub eps: f64,
    pub r_sum: f64,
    pub rho: f64,
    /// Diagonal `γ_i` of `Q`.
    pub gammas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Tolerance,
    ExactZero,
    MaxIterations,
    NumericError(String),
}

impl Termination {
    pub fn converged(&self) -> bool {
        matches!(self, Termination::Tolerance | Termination::ExactZero)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Termination::Tolerance => "tolerance",
            Termination::ExactZero => "exact-zero",
            Termination::MaxIterations => "max-iterations",
            Termination::NumericError(_) => "numeric-error",
        }
    }
}

/// Quantities that need a reference pair `(x*, λ*)`.
#[derive(Debug, Clone, Default)]
pub struct RefDiag {
    /// `E_k`
    pub energy: f64,
    /// KKT error of `(z^k, λ^k)`.
    pub kkt: f64,
    /// `Δ^k = L(z^k, λ*) − Φ(x*)`
    pub delta: f64,
    /// `α(2Δ^k + σR^k + ρ(1−α)(‖y^k − z^k‖²_Q + ‖Az^k − b‖²))`
    pub decay_bound: f64,
    /// `L(z̄^k, λ*) − Φ(x*)` for the uniform average.
    pub ergodic_gap: f64,
    /// `L(z̃^k, λ*) − Φ(x*)` for the `(k₀ + j)`-weighted average (strong mode).
    pub weighted_gap: Option<f64>,
    /// `‖y^{k+1} − x*‖²`, absent when the run stopped at `k`.
    pub y_next_dist_sq: Option<f64>,
    /// `‖y^{k+1} − x*‖²_P`
    pub y_next_pdist_sq: Option<f64>,
    /// `Σ_i e_i(y^{k+1}, λ^{k+1})`
    pub stationarity_next: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct IterRecord {
    pub k: usize,
    pub eps: f64,
    /// `‖Az^k − b‖`
    pub feas: f64,
    /// `‖y^k − z^k‖`
    pub yz_gap: f64,
    /// `R^k`
    pub r_sum: f64,
    /// `Φ(z^k)`
    pub obj: f64,
    pub rho: f64,
    pub gammas: Vec<f64>,
    pub big_gamma: Vec<f64>,
    pub inner_iters: Vec<usize>,
    /// `d_k = ‖y^k − z^k‖ + ‖Az^k − b‖ + √R^k`
    pub d_k: f64,
    /// User functional evaluated at the uniform average `z̄^k`.
    pub ergodic_value: Option<f64>,
    pub reference: Option<RefDiag>,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub x: BlockVector,
    pub y: BlockVector,
    pub z: BlockVector,
    pub lambda: DVector<f64>,
    pub big_gamma: Vec<f64>,
    pub rho: f64,
    pub gammas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafeguardEvent {
    pub k: usize,
    pub block: usize,
    pub old: f64,
    pub new: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrongConstants {
    pub mu: f64,
    /// `θ = αμ/(8‖P‖)`
    pub theta: f64,
    /// `k₀ = 4‖Q^{-1/2}PQ^{-1/2}‖/(α(1−α))`
    pub k0: f64,
    pub p_norm: f64,
    pub scaled_p_norm: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub state: OuterState,
    pub cause: Termination,
    pub history: Vec<IterRecord>,
    pub iterates: Vec<Snapshot>,
    pub safeguard_events: Vec<SafeguardEvent>,
    pub strong: Option<StrongConstants>,
    /// `c̄` of the strong-mode bounds (needs a reference pair).
    pub c_bar: Option<f64>,
    /// KKT error of `(x^k, λ^k)` when the run stopped with `ε = 0`.
    pub certificate_kkt: Option<f64>,
    pub elapsed: Duration,
}

impl SolveReport {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    /// `(z^k, λ^k)` of the last iteration.
    pub fn solution(&self) -> (&BlockVector, &DVector<f64>) {
        (&self.state.z, &self.state.lambda)
    }

    /// History as CSV with header `k,eps,feas,yz_gap,R,obj,E,kkt,rho,gamma1`.
    pub fn history_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["k", "eps", "feas", "yz_gap", "R", "obj", "E", "kkt", "rho", "gamma1"])
            .map_err(io)?;
        for h in &self.history {
            let (e, kkt) = match &h.reference {
                Some(r) => (r.energy.to_string(), r.kkt.to_string()),
                None => (String::new(), String::new()),
            };
            w.write_record([
                h.k.to_string(),
                h.eps.to_string(),
                h.feas.to_string(),
                h.yz_gap.to_string(),
                h.r_sum.to_string(),
                h.obj.to_string(),
                e,
                kkt,
                h.rho.to_string(),
                h.gammas[0].to_string(),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// `ε = θ₁‖z − y‖ + θ₂‖Az − b‖ + θ₃√R`
pub fn step2_epsilon(z: &BlockVector, y: &BlockVector, az_minus_b: &DVector<f64>, r: f64, theta: [f64; 3]) -> f64 {
    theta[0] * (z - y).norm() + theta[1] * az_minus_b.norm() + theta[2] * r.max(0.0).sqrt()
}

/// Back substitution for `y` and the multiplier step `λ + αρ(Az − b)`.
pub fn step3_update(
    m: &BlockTriangular<'_>,
    y: &BlockVector,
    z: &BlockVector,
    lambda: &DVector<f64>,
    az_minus_b: &DVector<f64>,
    alpha: f64,
    rho: f64,
) -> Result<(BlockVector, DVector<f64>)> {
    let y_next = m.back_substitute(y, z, alpha)?;
    let mut l = lambda.clone();
    l.axpy(alpha * rho, az_minus_b, 1.0);
    Ok((y_next, l))
}

/// `θ` and `k₀` of the strong-mode schedule for the current `M`.
pub fn strong_constants(mu: f64, alpha: f64, m: &BlockTriangular<'_>) -> Result<StrongConstants> {
    if !(mu > 0.0) {
        return Err(Error::Unavailable(format!(
            "strong mode needs a positive strong-convexity modulus, got {mu}"
        )));
    }
    let p_norm = m.p_spectral_norm()?;
    let scaled_p_norm = m.scaled_p_spectral_norm()?;
    Ok(strong_constants_from(mu, alpha, p_norm, scaled_p_norm))
}

pub fn strong_constants_from(mu: f64, alpha: f64, p_norm: f64, scaled_p_norm: f64) -> StrongConstants {
    StrongConstants {
        mu,
        theta: alpha * mu / (8.0 * p_norm),
        k0: 4.0 * scaled_p_norm / (alpha * (1.0 - alpha)),
        p_norm,
        scaled_p_norm,
    }
}

/// `ρ_k = (k₀ + k)θ`
pub fn rho_strong(k: usize, c: &StrongConstants) -> f64 {
    (c.k0 + k as f64) * c.theta
}

/// One safeguard test: `factor·γ` if `γ‖z_i − y_i‖² < ‖A_i(z_i − y_i)‖²`.
pub fn gamma_safeguard(gamma: f64, z_i: &DVector<f64>, y_i: &DVector<f64>, op: &LinearMap, factor: f64) -> f64 {
    let d = z_i - y_i;
    if gamma * d.norm_squared() < op.apply(&d).norm_squared() {
        gamma * factor
    } else {
        gamma
    }
}

/// Initial `γ_i` for each block.
pub fn initial_gammas(problem: &ProblemSpec, init: &GammaInit) -> Result<Vec<f64>> {
    match init {
        GammaInit::PowerIteration => problem
            .ops()
            .iter()
            .map(|a| {
                let s = spectral_norm(a)?;
                Ok(if s > 0.0 { s * s * (1.0 + GAMMA_MARGIN) } else { 1.0 })
            })
            .collect(),
        GammaInit::Safeguard { start, .. } => Ok(vec![*start; problem.num_blocks()]),
        GammaInit::Fixed(g) => {
            if g.len() != problem.num_blocks() {
                return Err(Error::Dimension(format!(
                    "{} fixed γ values for {} blocks",
                    g.len(),
                    problem.num_blocks()
                )));
            }
            Ok(g.clone())
        }
    }
}

type Functional<'a> = Box<dyn Fn(&BlockVector) -> f64 + 'a>;

/// Configured run of the outer loop.
pub struct Solver<'a> {
    problem: &'a ProblemSpec,
    params: SolverParams,
    x0: Option<BlockVector>,
    lambda0: Option<DVector<f64>>,
    reference: Option<&'a ReferencePair>,
    ergodic_functional: Option<Functional<'a>>,
}

impl<'a> Solver<'a> {
    pub fn new(problem: &'a ProblemSpec, params: SolverParams) -> Self {
        Self {
            problem,
            params,
            x0: None,
            lambda0: None,
            reference: None,
            ergodic_functional: None,
        }
    }

    pub fn with_start(mut self, x: BlockVector, lambda: DVector<f64>) -> Self {
        self.x0 = Some(x);
        self.lambda0 = Some(lambda);
        self
    }

    /// Track energy, gaps and KKT error against `(x*, λ*)`.
    pub fn with_reference(mut self, reference: &'a ReferencePair) -> Self {
        self.reference = Some(reference);
        self
    }

    /// Evaluate `g(z̄^k)` at every iteration.
    pub fn with_ergodic_functional(mut self, g: impl Fn(&BlockVector) -> f64 + 'a) -> Self {
        self.ergodic_functional = Some(Box::new(g));
        self
    }

    pub fn run(self) -> Result<SolveReport> {
        Run::new(self)?.execute()
    }
}

/// Runs with default extras; see [`Solver`] for the full set of options.
pub fn solve(problem: &ProblemSpec, params: SolverParams, reference: Option<&ReferencePair>) -> Result<SolveReport> {
    let mut s = Solver::new(problem, params);
    if let Some(r) = reference {
        s = s.with_reference(r);
    }
    s.run()
}

struct Run<'a> {
    problem: &'a ProblemSpec,
    p: SolverParams,
    reference: Option<&'a ReferencePair>,
    ergodic_functional: Option<Functional<'a>>,
    phi_star: f64,
    state: OuterState,
    eps_prev: f64,
    strong: Option<StrongConstants>,
    c_bar: Option<f64>,
    sum_z: BlockVector,
    sum_wz: BlockVector,
    sum_w: f64,
    history: Vec<IterRecord>,
    iterates: Vec<Snapshot>,
    store_cap: usize,
    events: Vec<SafeguardEvent>,
}

impl<'a> Run<'a> {
    fn new(s: Solver<'a>) -> Result<Self> {
        let problem = s.problem;
        let mut p = s.params;
        p.validate()?;
        p.inner.strong_gamma = p.mode == Mode::Strong;
        let dims = problem.dims();
        let x = s.x0.unwrap_or_else(|| BlockVector::zeros(&dims));
        let lambda = s.lambda0.unwrap_or_else(|| DVector::zeros(problem.rows()));
        problem.check_point(&x)?;
        problem.check_dual(&lambda)?;
        if let Some(r) = s.reference {
            problem.check_point(&r.x_star)?;
            problem.check_dual(&r.lambda_star)?;
        }
        let gammas = initial_gammas(problem, &p.gamma_init)?;
        let m = BlockTriangular::new(problem.ops(), gammas.clone())?;
        let strong = if p.mode == Mode::Strong {
            let mu = p.mu.unwrap_or_else(|| problem.strong_modulus());
            Some(strong_constants(mu, p.alpha, &m)?)
        } else {
            None
        };
        let n: usize = dims.iter().sum::<usize>() * 3 + problem.rows();
        let store_cap = if p.store_iterates { (STORE_BUDGET / n.max(1)).clamp(1, 50_000) } else { 0 };
        let phi_star = s.reference.map(|r| problem.objective(&r.x_star)).unwrap_or(0.0);
        Ok(Self {
            problem,
            reference: s.reference,
            ergodic_functional: s.ergodic_functional,
            phi_star,
            state: OuterState {
                k: 1,
                y: x.clone(),
                z: x.clone(),
                x,
                lambda,
                big_gamma: vec![0.0; dims.len()],
                eps: f64::INFINITY,
                r_sum: 0.0,
                rho: p.rho,
                gammas,
            },
            eps_prev: f64::INFINITY,
            strong,
            c_bar: None,
            sum_z: BlockVector::zeros(&dims),
            sum_wz: BlockVector::zeros(&dims),
            sum_w: 0.0,
            history: Vec::new(),
            iterates: Vec::new(),
            store_cap,
            events: Vec::new(),
            p,
        })
    }

    fn execute(mut self) -> Result<SolveReport> {
        let start = Instant::now();
        let mut certificate_kkt = None;
        let cause = loop {
            match self.iterate() {
                Ok(Some(cause)) => {
                    if cause == Termination::ExactZero {
                        certificate_kkt = Some(diagnostics::kkt_error(self.problem, &self.state.x, &self.state.lambda)?);
                    }
                    break cause;
                }
                Ok(None) => {}
                Err(e @ (Error::Inner { .. } | Error::Numeric { .. })) => break Termination::NumericError(e.to_string()),
                Err(e) => return Err(e),
            }
        };
        Ok(SolveReport {
            state: self.state,
            cause,
            history: self.history,
            iterates: self.iterates,
            safeguard_events: self.events,
            strong: self.strong,
            c_bar: self.c_bar,
            certificate_kkt,
            elapsed: start.elapsed(),
        })
    }

    /// Steps 1–3 of iteration `k`; returns the termination cause if any.
    fn iterate(&mut self) -> Result<Option<Termination>> {
        let problem = self.problem;
        let k = self.state.k;
        if let Some(c) = &self.strong {
            self.state.rho = rho_strong(k, c);
        }
        let rho = self.state.rho;

        // Step 1: Gauss–Seidel sweep.
        let m_blocks = problem.num_blocks();
        let mut s = problem.apply_a(&self.state.y)?;
        let mut z_blocks = Vec::with_capacity(m_blocks);
        let mut x_next = Vec::with_capacity(m_blocks);
        let mut r_sum = 0.0;
        let mut inner_iters = Vec::with_capacity(m_blocks);
        for i in 0..m_blocks {
            let block = problem.block(i);
            let y_i = self.state.y.block(i);
            let ay_i = block.op.apply(y_i);
            let b_i = problem.rhs() - &s + &ay_i;
            let x_k = self.state.x.block(i);
            let gamma_q = self.state.gammas[i];
            let (z_i, xn_i, big_g, r_i, iters) = if self.p.mode == Mode::Exact {
                let xb = oracle::subproblem_minimizer(block, y_i, &b_i, &self.state.lambda, rho, gamma_q, x_k, self.p.exact_tol)
                    .map_err(|e| Error::Inner {
                        k,
                        block: i,
                        l: 0,
                        msg: e.to_string(),
                    })?;
                (xb.clone(), xb, f64::INFINITY, 0.0, 0)
            } else {
                let sub = Subproblem::new(block, x_k, y_i, &b_i, &self.state.lambda, rho, gamma_q);
                let ctx = StopContext {
                    k,
                    block: i,
                    gamma_prev: self.state.big_gamma[i],
                    eps_prev: self.eps_prev,
                };
                let res = run_inner(&sub, &self.p.inner, ctx)?;
                (res.z, res.x_next, res.gamma, res.r, res.iters)
            };
            s += block.op.apply(&z_i) - ay_i;
            r_sum += r_i;
            inner_iters.push(iters);
            self.state.big_gamma[i] = big_g;
            z_blocks.push(z_i);
            x_next.push(xn_i);
        }
        self.state.z = BlockVector::new(z_blocks);
        self.state.r_sum = r_sum;
        let x_next = BlockVector::new(x_next);
        let resid = problem.residual(&self.state.z)?;
        if !self.state.z.is_finite() || resid.iter().any(|t| !t.is_finite()) {
            return Err(Error::numeric(format!("non-finite iterate at outer iteration {k}")));
        }

        // Step 2: error estimate.
        let eps = step2_epsilon(&self.state.z, &self.state.y, &resid, r_sum, self.p.theta);
        self.state.eps = eps;

        if let GammaInit::Safeguard { factor, .. } = self.p.gamma_init {
            self.apply_safeguard(k, factor)?;
        }
        let m = BlockTriangular::new(problem.ops(), self.state.gammas.clone())?;

        self.sum_z.axpy(1.0, &self.state.z);
        let w = self.strong.map(|c| c.k0 + k as f64).unwrap_or(1.0);
        self.sum_wz.axpy(w, &self.state.z);
        self.sum_w += w;
        let z_bar = self.sum_z.scale(1.0 / k as f64);

        let mut rec = IterRecord {
            k,
            eps,
            feas: resid.norm(),
            yz_gap: (&self.state.y - &self.state.z).norm(),
            r_sum,
            obj: problem.objective(&self.state.z),
            rho,
            gammas: self.state.gammas.clone(),
            big_gamma: self.state.big_gamma.clone(),
            inner_iters,
            d_k: 0.0,
            ergodic_value: self.ergodic_functional.as_ref().map(|g| g(&z_bar)),
            reference: None,
        };
        rec.d_k = rec.yz_gap + rec.feas + r_sum.max(0.0).sqrt();
        if let Some(r) = self.reference {
            rec.reference = Some(self.reference_diag(r, &m, &resid, &z_bar)?);
            if k == 1 {
                if let Some(c) = &self.strong {
                    self.c_bar = Some(self.c_bar_value(r, c, &m)?);
                }
            }
        }
        if self.iterates.len() < self.store_cap {
            self.iterates.push(Snapshot {
                x: self.state.x.clone(),
                y: self.state.y.clone(),
                z: self.state.z.clone(),
                lambda: self.state.lambda.clone(),
                big_gamma: self.state.big_gamma.clone(),
                rho,
                gammas: self.state.gammas.clone(),
            });
        }

        let stop = if eps <= self.p.zero_eps {
            Some(Termination::ExactZero)
        } else if eps <= self.p.tol {
            Some(Termination::Tolerance)
        } else {
            None
        };
        if stop.is_some() {
            self.history.push(rec);
            return Ok(stop);
        }

        // Step 3: correction and multiplier update.
        let (y_next, lambda_next) = step3_update(&m, &self.state.y, &self.state.z, &self.state.lambda, &resid, self.p.alpha, rho)?;
        if let (Some(r), Some(d)) = (self.reference, rec.reference.as_mut()) {
            let dy = &y_next - &r.x_star;
            d.y_next_dist_sq = Some(dy.norm_sq());
            d.y_next_pdist_sq = Some(m.p_norm_sq(&dy)?);
            d.stationarity_next = Some(diagnostics::block_stationarity(problem, &y_next, &lambda_next)?.iter().sum());
        }
        self.history.push(rec);
        self.state.y = y_next;
        self.state.lambda = lambda_next;
        self.state.x = x_next;
        self.eps_prev = eps;
        if k >= self.p.max_outer {
            return Ok(Some(Termination::MaxIterations));
        }
        self.state.k = k + 1;
        Ok(None)
    }

    fn apply_safeguard(&mut self, k: usize, factor: f64) -> Result<()> {
        let mut changed = false;
        for i in 0..self.problem.num_blocks() {
            let op = &self.problem.block(i).op;
            let old = self.state.gammas[i];
            let mut g = old;
            for _ in 0..200 {
                let next = gamma_safeguard(g, self.state.z.block(i), self.state.y.block(i), op, factor);
                if next == g {
                    break;
                }
                g = next;
            }
            if g != old {
                self.state.gammas[i] = g;
                self.events.push(SafeguardEvent { k, block: i, old, new: g });
                changed = true;
            }
        }
        if changed {
            if let Some(c) = self.strong {
                let m = BlockTriangular::new(self.problem.ops(), self.state.gammas.clone())?;
                self.strong = Some(strong_constants(c.mu, self.p.alpha, &m)?);
            }
        }
        Ok(())
    }

    fn reference_diag(&self, r: &ReferencePair, m: &BlockTriangular<'_>, resid: &DVector<f64>, z_bar: &BlockVector) -> Result<RefDiag> {
        let problem = self.problem;
        let st = &self.state;
        let energy = diagnostics::energy(m, &st.x, &st.y, &st.lambda, r, &st.big_gamma, st.rho, self.p.alpha)?;
        let delta = problem.lagrangian(&st.z, &r.lambda_star)? - self.phi_star;
        let yz = &st.y - &st.z;
        let sigma = if self.p.mode == Mode::Exact { 0.0 } else { self.p.inner.sigma };
        let a = self.p.alpha;
        let decay_bound = a * (2.0 * delta + sigma * st.r_sum + st.rho * (1.0 - a) * (m.q_norm_sq(&yz) + resid.norm_squared()));
        let ergodic_gap = problem.lagrangian(z_bar, &r.lambda_star)? - self.phi_star;
        let weighted_gap = match &self.strong {
            Some(_) => {
                let zt = self.sum_wz.scale(1.0 / self.sum_w);
                Some(problem.lagrangian(&zt, &r.lambda_star)? - self.phi_star)
            }
            None => None,
        };
        Ok(RefDiag {
            energy,
            kkt: diagnostics::kkt_error(problem, &st.z, &st.lambda)?,
            delta,
            decay_bound,
            ergodic_gap,
            weighted_gap,
            ..RefDiag::default()
        })
    }

    fn c_bar_value(&self, r: &ReferencePair, c: &StrongConstants, m: &BlockTriangular<'_>) -> Result<f64> {
        let st = &self.state;
        let dl = (&st.lambda - &r.lambda_star).norm_squared();
        let dx: f64 = st
            .x
            .blocks()
            .iter()
            .zip(r.x_star.blocks())
            .zip(&st.big_gamma)
            .map(|((x, xs), g)| (x - xs).norm_squared() / g)
            .sum();
        let dy = m.p_norm_sq(&(&st.y - &r.x_star))?;
        Ok(dl / c.theta + self.p.alpha * (c.k0 + 1.0) * dx + c.k0 * c.k0 * c.theta * dy)
    }
}
