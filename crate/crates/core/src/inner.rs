//! Accelerated gradient inner loop for one block subproblem.
//!
//! At outer iteration `k` the loop approximately minimizes
//!
//! ```text
//! L̄_i(u) = f_i(u) + h_i(u) + (ρ/2)‖A_i u − b_i + λ/ρ‖² + (ρ/2)‖u − y_i‖²_{γ_i I − A_iᵀA_i}
//! ```
//!
//! by linearizing `f_i` at an extrapolated point `ā^l` and the penalty
//! at `y_i`. With `Q_i = γ_i I` the smooth part of each step has Hessian
//! `(δ^l + ργ_i) I`, so the step is one prox evaluation of `h_i`.
//!
//! Both step rules keep `ξ^l = δ^l α^l γ^l = 1`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::blockspace::LinearMap;
use crate::error::{Error, Result};
use crate::problem::Block;
use crate::proxlib::{ProxTerm, SmoothTerm};

/// Line-search trials per inner step before giving up.
pub const MAX_LINE_SEARCH_TRIALS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepRule {
    /// `δ^l = 2ζ/((1−σ)l)`, `α^l = 2/(l+1)`; needs a Lipschitz constant.
    Constant,
    /// Backtracking on `δ^l/α^l = δ₀^l η^j`.
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerParams {
    pub rule: StepRule,
    pub sigma: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    pub eta: f64,
    /// Slope of the linear stopping function `ψ(t) = c_ψ t`.
    pub c_psi: f64,
    pub max_iters: usize,
    /// Require `γ^l ≥ Γ_prev·k/(k−1)` (strongly convex mode).
    pub strong_gamma: bool,
    /// Take exactly one step and skip the stopping test. No convergence
    /// guarantee; for benchmarking against one-linearization schemes.
    pub one_step: bool,
}

impl Default for InnerParams {
    fn default() -> Self {
        Self {
            rule: StepRule::Adaptive,
            sigma: 0.5,
            delta_min: 1e-6,
            delta_max: 1e6,
            eta: 2.0,
            c_psi: 1.0,
            max_iters: 10_000,
            strong_gamma: false,
            one_step: false,
        }
    }
}

impl InnerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::InvalidConfig(format!("σ = {} must lie in (0, 1)", self.sigma)));
        }
        if !(self.delta_min > 0.0 && self.delta_min < self.delta_max && self.delta_max.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < δ_min < δ_max < ∞, got [{}, {}]",
                self.delta_min, self.delta_max
            )));
        }
        if !(self.eta > 1.0) {
            return Err(Error::InvalidConfig(format!("η = {} must exceed 1", self.eta)));
        }
        if !(self.c_psi > 0.0) {
            return Err(Error::InvalidConfig(format!("c_ψ = {} must be positive", self.c_psi)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("inner iteration cap must be positive".into()));
        }
        Ok(())
    }

    pub fn psi(&self, t: f64) -> f64 {
        if t.is_infinite() {
            f64::INFINITY
        } else {
            self.c_psi * t
        }
    }
}

/// `(δ^l, α^l)` of the constant rule.
pub fn params_constant(l: usize, zeta: f64, sigma: f64) -> Result<(f64, f64)> {
    if l == 0 {
        return Err(Error::InvalidConfig("inner index l starts at 1".into()));
    }
    if !(zeta > 0.0 && zeta.is_finite()) {
        return Err(Error::Unavailable(
            "constant step rule needs a positive Lipschitz constant; use the adaptive rule".into(),
        ));
    }
    let l = l as f64;
    Ok((2.0 * zeta / ((1.0 - sigma) * l), 2.0 / (l + 1.0)))
}

/// `(δ, α)` from `θ = 1/(δ₀ηʲ)` and the accumulator `Λ^{l−1}`.
pub fn adaptive_pair(theta: f64, lambda_prev: f64) -> (f64, f64) {
    let delta = 2.0 / (theta + (theta * theta + 4.0 * theta * lambda_prev).sqrt());
    let alpha = 1.0 / (1.0 + delta * lambda_prev);
    (delta, alpha)
}

/// Smallest `j ≥ 0` whose pair passes `accept`; returns `(δ, α, j)`.
pub fn params_adaptive<F>(lambda_prev: f64, delta0: f64, eta: f64, mut accept: F) -> Result<(f64, f64, usize)>
where
    F: FnMut(f64, f64) -> Result<bool>,
{
    let mut scale = delta0;
    for j in 0..=MAX_LINE_SEARCH_TRIALS {
        let (delta, alpha) = adaptive_pair(1.0 / scale, lambda_prev);
        if accept(delta, alpha)? {
            return Ok((delta, alpha, j));
        }
        scale *= eta;
    }
    Err(Error::numeric(format!(
        "line search exceeded {MAX_LINE_SEARCH_TRIALS} trials (gradient oracle inconsistent?)"
    )))
}

/// The sufficient-decrease test of the inner step:
/// `f(ā) + ⟨∇f(ā), a − ā⟩ + ((1−σ)δ/2α)‖a − ā‖² ≥ f(a)`. The left minus
/// right side is formed from `a − ā` directly, with a few ulps of allowance.
pub fn line_search_accept(f: &SmoothTerm, a_bar: &DVector<f64>, a: &DVector<f64>, delta: f64, alpha: f64, sigma: f64) -> bool {
    if f.is_zero() {
        return true;
    }
    let bound = (1.0 - sigma) * delta / (2.0 * alpha) * (a - a_bar).norm_squared();
    f.linearization_gap(a, a_bar) <= bound * (1.0 + 8.0 * f64::EPSILON)
}

/// Stopping test: `γ^l ≥ Γ_prev` and `‖a^l − x^k‖/√γ^l ≤ ψ(ε_prev)`.
/// `ε_prev = ∞` makes the second condition vacuous.
pub fn step1b_check<P>(gamma_l: f64, gamma_prev: f64, a_l: &DVector<f64>, x_k: &DVector<f64>, psi: P, eps_prev: f64) -> bool
where
    P: Fn(f64) -> f64,
{
    if gamma_l < gamma_prev {
        return false;
    }
    if eps_prev.is_infinite() {
        return true;
    }
    (a_l - x_k).norm() / gamma_l.sqrt() <= psi(eps_prev)
}

/// Exact minimizer of the linearized step objective:
/// `prox_h(v, 1/(δ+ργ))` with
/// `v = [δ u_prev + ργ y_i − ∇f(ā) − ρ A_iᵀ(A_i y_i − b_i + λ/ρ)]/(δ+ργ)`.
#[allow(clippy::too_many_arguments)]
pub fn inner_prox_step(
    op: &LinearMap,
    grad_abar: &DVector<f64>,
    u_prev: &DVector<f64>,
    y_i: &DVector<f64>,
    b_i: &DVector<f64>,
    lambda: &DVector<f64>,
    delta: f64,
    rho: f64,
    gamma: f64,
    h: &ProxTerm,
) -> Result<DVector<f64>> {
    let pen = penalty_gradient(op, y_i, b_i, lambda, rho);
    prox_step(grad_abar, u_prev, y_i, &pen, delta, rho, gamma, h)
}

/// `ρ A_iᵀ(A_i y_i − b_i + λ/ρ)`, constant over one inner run.
pub fn penalty_gradient(op: &LinearMap, y_i: &DVector<f64>, b_i: &DVector<f64>, lambda: &DVector<f64>, rho: f64) -> DVector<f64> {
    let mut r = op.apply(y_i) - b_i;
    r *= rho;
    r += lambda;
    op.adjoint(&r)
}

#[allow(clippy::too_many_arguments)]
fn prox_step(
    grad_abar: &DVector<f64>,
    u_prev: &DVector<f64>,
    y_i: &DVector<f64>,
    penalty_grad: &DVector<f64>,
    delta: f64,
    rho: f64,
    gamma: f64,
    h: &ProxTerm,
) -> Result<DVector<f64>> {
    let w = delta + rho * gamma;
    let mut v = u_prev * delta;
    v.axpy(rho * gamma, y_i, 1.0);
    v -= grad_abar;
    v -= penalty_grad;
    v /= w;
    if v.iter().any(|t| !t.is_finite()) {
        return Err(Error::numeric("non-finite prox argument in inner step"));
    }
    h.prox(&v, 1.0 / w)
}

/// Data of one block subproblem at one outer iteration.
#[derive(Debug, Clone)]
pub struct Subproblem<'a> {
    pub smooth: &'a SmoothTerm,
    pub prox: &'a ProxTerm,
    /// Starting point `x_i^k`.
    pub x_k: &'a DVector<f64>,
    pub y_i: &'a DVector<f64>,
    pub penalty_grad: DVector<f64>,
    pub rho: f64,
    /// `γ_i` of `Q_i = γ_i I`.
    pub gamma_q: f64,
}

impl<'a> Subproblem<'a> {
    pub fn new(
        block: &'a Block,
        x_k: &'a DVector<f64>,
        y_i: &'a DVector<f64>,
        b_i: &DVector<f64>,
        lambda: &DVector<f64>,
        rho: f64,
        gamma_q: f64,
    ) -> Self {
        Self {
            smooth: &block.smooth,
            prox: &block.prox,
            x_k,
            y_i,
            penalty_grad: penalty_gradient(&block.op, y_i, b_i, lambda, rho),
            rho,
            gamma_q,
        }
    }
}

/// One iterate of the inner loop.
#[derive(Debug, Clone)]
pub struct InnerState {
    pub l: usize,
    pub u_prev: DVector<f64>,
    pub u: DVector<f64>,
    pub a_prev: DVector<f64>,
    pub a: DVector<f64>,
    pub a_bar: DVector<f64>,
    pub delta: f64,
    pub alpha: f64,
    /// `γ^l = (1/δ¹) Π_{j=2}^l (1−α^j)^{-1}`
    pub gamma: f64,
    /// `Λ^l = Σ_{j≤l} 1/δ^j`
    pub big_lambda: f64,
    /// `Σ_{j≤l} ‖u^j − u^{j−1}‖²`
    pub sum_sq: f64,
    /// Line-search trials spent in the last step.
    pub trials: usize,
    delta0: f64,
}

impl InnerState {
    /// `ξ^l = δ^l α^l γ^l`
    pub fn xi(&self) -> f64 {
        self.delta * self.alpha * self.gamma
    }
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    pub x_next: DVector<f64>,
    pub z: DVector<f64>,
    /// `Γ_i^k`
    pub gamma: f64,
    /// `r_i^k = Σ‖u^j − u^{j−1}‖²/Γ_i^k`
    pub r: f64,
    pub iters: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Rule {
    /// `f ≡ 0` or `ζ = 0`: `δ` pinned at `δ_min`, no line search needed.
    Pinned,
    Constant(f64),
    Adaptive,
}

/// Stepper over the inner iterates; [`run_inner`] adds the stopping rule.
pub struct InnerLoop<'s, 'a> {
    sub: &'s Subproblem<'a>,
    params: &'s InnerParams,
    rule: Rule,
    state: InnerState,
}

impl<'s, 'a> InnerLoop<'s, 'a> {
    pub fn new(sub: &'s Subproblem<'a>, params: &'s InnerParams) -> Result<Self> {
        let trivial = sub.smooth.is_zero() || sub.smooth.lipschitz == Some(0.0);
        let rule = match (trivial, params.rule) {
            (true, _) => Rule::Pinned,
            (false, StepRule::Constant) => match sub.smooth.lipschitz {
                Some(z) if z > 0.0 => Rule::Constant(z),
                _ => {
                    return Err(Error::Unavailable(
                        "constant step rule needs the Lipschitz constant of every nonzero f_i".into(),
                    ))
                }
            },
            (false, StepRule::Adaptive) => Rule::Adaptive,
        };
        let x0 = sub.x_k.clone();
        Ok(Self {
            sub,
            params,
            rule,
            state: InnerState {
                l: 0,
                u_prev: x0.clone(),
                u: x0.clone(),
                a_prev: x0.clone(),
                a: x0.clone(),
                a_bar: x0,
                delta: 0.0,
                alpha: 1.0,
                gamma: 0.0,
                big_lambda: 0.0,
                sum_sq: 0.0,
                trials: 0,
                delta0: 1.0_f64.clamp(params.delta_min, params.delta_max),
            },
        })
    }

    pub fn state(&self) -> &InnerState {
        &self.state
    }

    fn candidate(&self, delta: f64, alpha: f64) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let s = &self.state;
        let a_bar = &s.a * (1.0 - alpha) + &s.u * alpha;
        let g_bar = self.sub.smooth.grad(&a_bar);
        let u = prox_step(
            &g_bar,
            &s.u,
            self.sub.y_i,
            &self.sub.penalty_grad,
            delta,
            self.sub.rho,
            self.sub.gamma_q,
            self.sub.prox,
        )?;
        let a = &s.a * (1.0 - alpha) + &u * alpha;
        Ok((a_bar, u, a))
    }

    /// Advances from `l` to `l + 1`.
    pub fn step(&mut self) -> Result<()> {
        let l = self.state.l + 1;
        let sigma = self.params.sigma;
        let (delta, alpha, a_bar, u, a, trials) = match self.rule {
            Rule::Pinned => {
                let delta = self.params.delta_min;
                let alpha = 1.0 / (1.0 + delta * self.state.big_lambda);
                let (a_bar, u, a) = self.candidate(delta, alpha)?;
                (delta, alpha, a_bar, u, a, 1)
            }
            Rule::Constant(zeta) => {
                let (delta, alpha) = params_constant(l, zeta, sigma)?;
                let (a_bar, u, a) = self.candidate(delta, alpha)?;
                if !line_search_accept(self.sub.smooth, &a_bar, &a, delta, alpha, sigma) {
                    return Err(Error::numeric(
                        "constant rule failed the decrease test; the Lipschitz constant is too small",
                    ));
                }
                (delta, alpha, a_bar, u, a, 1)
            }
            Rule::Adaptive => {
                let mut accepted = None;
                let (delta, alpha, j) =
                    params_adaptive(self.state.big_lambda, self.state.delta0, self.params.eta, |d, al| {
                        let (a_bar, u, a) = self.candidate(d, al)?;
                        let ok = line_search_accept(self.sub.smooth, &a_bar, &a, d, al, sigma);
                        if ok {
                            accepted = Some((a_bar, u, a));
                        }
                        Ok(ok)
                    })?;
                let (a_bar, u, a) = accepted.expect("accepted candidate recorded");
                let ratio = self.state.delta0 * self.params.eta.powi(j as i32);
                self.state.delta0 = (ratio / self.params.eta).clamp(self.params.delta_min, self.params.delta_max);
                (delta, alpha, a_bar, u, a, j + 1)
            }
        };

        let s = &mut self.state;
        s.gamma = if l == 1 { 1.0 / delta } else { s.gamma / (1.0 - alpha) };
        s.big_lambda += 1.0 / delta;
        s.sum_sq += (&u - &s.u).norm_squared();
        s.u_prev = std::mem::replace(&mut s.u, u);
        s.a_prev = std::mem::replace(&mut s.a, a);
        s.a_bar = a_bar;
        s.delta = delta;
        s.alpha = alpha;
        s.trials = trials;
        s.l = l;
        Ok(())
    }
}

/// Where the inner loop sits inside the outer iteration.
#[derive(Debug, Clone, Copy)]
pub struct StopContext {
    /// Outer iteration `k ≥ 1`.
    pub k: usize,
    pub block: usize,
    /// `Γ_i^{k−1}`
    pub gamma_prev: f64,
    /// `ε^{k−1}` (`∞` at `k = 1`).
    pub eps_prev: f64,
}

/// Runs the inner loop until the stopping test passes.
pub fn run_inner(sub: &Subproblem<'_>, params: &InnerParams, ctx: StopContext) -> Result<InnerResult> {
    let wrap = |l: usize, e: Error| Error::Inner {
        k: ctx.k,
        block: ctx.block,
        l,
        msg: e.to_string(),
    };
    let mut lp = InnerLoop::new(sub, params).map_err(|e| match e {
        Error::Unavailable(_) => e,
        other => wrap(0, other),
    })?;
    let mut trials = 0;
    loop {
        let l = lp.state().l + 1;
        lp.step().map_err(|e| wrap(l, e))?;
        let s = lp.state();
        trials += s.trials;
        if params.one_step {
            break;
        }
        let mut stop = step1b_check(s.gamma, ctx.gamma_prev, &s.a, sub.x_k, |t| params.psi(t), ctx.eps_prev);
        if stop && params.strong_gamma && ctx.k >= 2 {
            stop = s.gamma >= ctx.gamma_prev * ctx.k as f64 / (ctx.k - 1) as f64;
        }
        if stop {
            break;
        }
        if s.l >= params.max_iters {
            return Err(wrap(
                s.l,
                Error::numeric(format!("inner iteration cap {} reached", params.max_iters)),
            ));
        }
    }
    let s = lp.state();
    Ok(InnerResult {
        x_next: s.u.clone(),
        z: s.a.clone(),
        gamma: s.gamma,
        r: s.sum_sq / s.gamma,
        iters: s.l,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    #[test]
    fn constant_rule_values() {
        let (d, a) = params_constant(1, 2.0, 0.5).unwrap();
        assert_eq!((d, a), (8.0, 1.0));
        let (d, a) = params_constant(3, 1.0, 0.0).unwrap();
        assert!((d - 2.0 / 3.0).abs() < 1e-15 && (a - 0.5).abs() < 1e-15);
        // γ³ = (1/δ¹)(1−α²)^{-1}(1−α³)^{-1} = ½ · 3 · 2 = 3 and ξ³ = 1.
        let g3: f64 = 0.5 * (1.0 / (1.0 - 2.0 / 3.0)) * (1.0 / (1.0 - 0.5));
        assert!((g3 - 3.0).abs() < 1e-12);
        assert!((d * a * g3 - 1.0).abs() < 1e-12);
        for l in 1..200 {
            let (_, a) = params_constant(l, 1.0, 0.3).unwrap();
            assert!(a > 0.0 && a <= 1.0);
        }
        assert!(matches!(params_constant(1, 0.0, 0.5), Err(Error::Unavailable(_))));
    }

    #[test]
    fn adaptive_first_iteration_collapses() {
        let (d, a, j) = params_adaptive(0.0, 0.7, 2.0, |_, _| Ok(true)).unwrap();
        assert!((d - 0.7).abs() < 1e-15);
        assert_eq!(a, 1.0);
        assert_eq!(j, 0);
    }

    #[test]
    fn adaptive_ratio_identity() {
        let mut seen = Vec::new();
        let (d, a, j) = params_adaptive(3.7, 0.01, 2.0, |d, a| {
            seen.push((d, a));
            Ok(seen.len() == 5)
        })
        .unwrap();
        assert_eq!(j, 4);
        assert!((d / a - 0.01 * 16.0).abs() < 1e-12);
        for (k, (d, a)) in seen.iter().enumerate() {
            assert!((d / a - 0.01 * 2f64.powi(k as i32)).abs() < 1e-12 * (1.0 + d / a));
        }
    }

    #[test]
    fn adaptive_quadratic_accepts_when_curvature_covered() {
        // f(x) = x² (curvature 2), σ = 0.9 → needs (1−σ)δ/α ≥ 2.
        let h = DMatrix::from_element(1, 1, 2.0);
        let f = SmoothTerm::quadratic(h, v(&[0.0])).unwrap();
        let (a_bar, a) = (v(&[0.3]), v(&[-1.2]));
        let (d, al, j) = params_adaptive(0.0, 1e-6, 2.0, |d, al| Ok(line_search_accept(&f, &a_bar, &a, d, al, 0.9))).unwrap();
        assert!(j < MAX_LINE_SEARCH_TRIALS);
        assert!((1.0 - 0.9) * d / al >= 2.0);
        assert!((1.0 - 0.9) * d / al / 2.0 < 2.0);
    }

    #[test]
    fn adaptive_diverges_on_never_accept() {
        let err = params_adaptive(0.0, 1.0, 2.0, |_, _| Ok(false)).unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }));
    }

    #[test]
    fn line_search_examples() {
        let l = 3.0;
        let f = SmoothTerm::quadratic(DMatrix::from_element(1, 1, l), v(&[0.0])).unwrap();
        assert!(line_search_accept(&f, &v(&[0.4]), &v(&[0.4]), 1.0, 1.0, 0.5));
        assert!(line_search_accept(&f, &v(&[0.0]), &v(&[1.0]), l, 1.0, 0.0));
        assert!(line_search_accept(&f, &v(&[-2.0]), &v(&[5.0]), 2.0 * l, 1.0, 0.5));
        // (1−σ)δ/α = L/2: lhs = L/4 < f(1) = L/2.
        assert!(!line_search_accept(&f, &v(&[0.0]), &v(&[1.0]), l / 2.0, 1.0, 0.0));
        assert!(line_search_accept(&SmoothTerm::zero(), &v(&[0.0]), &v(&[9.0]), 1e-9, 1.0, 0.5));
    }

    #[test]
    fn step1b_examples() {
        let x = v(&[1.0, 2.0]);
        assert!(step1b_check(1.0, 0.5, &x, &x, |t| t, 0.0));
        assert!(step1b_check(1.0, 0.5, &x, &x, |t| t, f64::INFINITY));
        assert!(!step1b_check(0.4, 0.5, &x, &x, |t| t, f64::INFINITY));
        let a = v(&[1.0, 3.0]);
        assert!(step1b_check(400.0, 399.0, &a, &x, |t| t, 0.1));
        assert!(!step1b_check(25.0, 1.0, &a, &x, |t| t, 0.1));
    }

    #[test]
    fn prox_step_stationary_point() {
        let op = LinearMap::Identity(2);
        let y = v(&[0.5, -1.0]);
        let b = op.apply(&y);
        let u = inner_prox_step(&op, &v(&[0.0, 0.0]), &y, &y, &b, &v(&[0.0, 0.0]), 0.3, 2.0, 1.5, &ProxTerm::zero()).unwrap();
        assert!((u - y).norm() < 1e-15);
    }
}
