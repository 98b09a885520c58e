mod common;

use common::loglog_slope;
use iadmm::blockspace::LinearMap;
use iadmm::inner::{inner_prox_step, run_inner, InnerLoop, InnerParams, StepRule, StopContext, Subproblem};
use iadmm::oracle::subproblem_minimizer;
use iadmm::problem::Block;
use iadmm::problems::entry;
use iadmm::proxlib::{ProxTerm, SmoothTerm};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_vec(xs.to_vec())
}

fn params(rule: StepRule) -> InnerParams {
    InnerParams {
        rule,
        ..InnerParams::default()
    }
}

fn quad_block(h: &[f64], c: &[f64], a: DMatrix<f64>, prox: ProxTerm) -> Block {
    let n = c.len();
    Block::new(
        SmoothTerm::quadratic(DMatrix::from_row_slice(n, n, h), v(c)).unwrap(),
        prox,
        LinearMap::Dense(a),
    )
}

#[test]
fn gamma_grows_at_least_quadratically() {
    let b = quad_block(&[2.0, 0.5, 0.5, 1.0], &[1.0, -1.0], DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), ProxTerm::l1(0.1, 2));
    let (x, y, rhs, l) = (v(&[1.0, 2.0]), v(&[0.0, 1.0]), v(&[0.5]), v(&[0.3]));
    for rule in [StepRule::Constant, StepRule::Adaptive] {
        let p = params(rule);
        let sub = Subproblem::new(&b, &x, &y, &rhs, &l, 1.0, 2.5);
        let mut lp = InnerLoop::new(&sub, &p).unwrap();
        let mut pts = Vec::new();
        for _ in 0..200 {
            lp.step().unwrap();
            let s = lp.state();
            if s.l >= 20 {
                pts.push((s.l as f64, s.gamma));
            }
        }
        assert!(loglog_slope(&pts) >= 2.0 - 0.05, "{rule:?}: slope {}", loglog_slope(&pts));
    }
}

#[test]
fn fixed_point_start_stays_put() {
    let e = entry("qp-3-m3").unwrap();
    let r = e.reference.as_ref().unwrap();
    let p = &e.problem;
    let ax = p.apply_a(&r.x_star).unwrap();
    for i in 0..p.num_blocks() {
        let block = p.block(i);
        let xi = r.x_star.block(i);
        let b_i = p.rhs() - &ax + block.op.apply(xi);
        let gamma = iadmm::blockspace::spectral_norm(&block.op).unwrap().powi(2) * 1.01;
        let sub = Subproblem::new(block, xi, xi, &b_i, &r.lambda_star, 1.0, gamma);
        let res = run_inner(
            &sub,
            &params(StepRule::Adaptive),
            StopContext {
                k: 1,
                block: i,
                gamma_prev: 0.0,
                eps_prev: f64::INFINITY,
            },
        )
        .unwrap();
        assert!((&res.z - xi).amax() <= 1e-9);
        assert!((&res.x_next - xi).amax() <= 1e-9);
        assert!(res.r <= 1e-18);
    }
}

/// Coordinate-wise golden-section minimization of the separable step
/// objective `⟨g, u⟩ + Σ w_j|u_j| + (δ/2)‖u − u_prev‖² + (ργ/2)‖u − y‖²`.
fn separable_argmin(g: &DVector<f64>, w: &DVector<f64>, up: &DVector<f64>, y: &DVector<f64>, delta: f64, rg: f64) -> DVector<f64> {
    DVector::from_fn(g.len(), |j, _| {
        let phi = |u: f64| g[j] * u + w[j] * u.abs() + 0.5 * delta * (u - up[j]).powi(2) + 0.5 * rg * (u - y[j]).powi(2);
        let (mut lo, mut hi) = (-100.0, 100.0);
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let (a, b) = (hi - r * (hi - lo), lo + r * (hi - lo));
            if phi(a) < phi(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        0.5 * (lo + hi)
    })
}

#[test]
fn prox_step_matches_direct_minimization() {
    let a = DMatrix::from_row_slice(2, 5, &[1.0, -0.5, 0.3, 0.0, 2.0, 0.2, 0.7, -1.0, 0.4, 0.1]);
    let w = v(&[0.3, 0.1, 0.0, 0.5, 0.2]);
    let h = ProxTerm::weighted_l1(w.clone());
    let op = LinearMap::Dense(a.clone());
    let grad = v(&[0.5, -1.0, 0.2, 0.0, 0.3]);
    let up = v(&[0.1, 0.2, -0.3, 0.4, -0.5]);
    let y = v(&[1.0, 0.0, -1.0, 0.5, 0.2]);
    let (b, l) = (v(&[0.3, -0.2]), v(&[0.1, 0.4]));
    let (delta, rho, gamma) = (1.7, 0.8, 5.0);
    let u = inner_prox_step(&op, &grad, &up, &y, &b, &l, delta, rho, gamma, &h).unwrap();
    let pen = a.transpose() * ((&a * &y - &b) * rho + &l);
    let want = separable_argmin(&(&grad + pen), &w, &up, &y, delta, rho * gamma);
    assert!((u - want).amax() <= 1e-8);
}

#[test]
fn accuracy_bound_on_strongly_convex_scalar() {
    let b = quad_block(&[3.0], &[-1.0], DMatrix::from_element(1, 1, 2.0), ProxTerm::l1(0.2, 1));
    let (x, y, rhs, l) = (v(&[4.0]), v(&[1.0]), v(&[0.5]), v(&[0.2]));
    let (rho, gamma) = (1.5, 4.5);
    let xbar = subproblem_minimizer(&b, &y, &rhs, &l, rho, gamma, &x, 1e-14).unwrap();
    let p = params(StepRule::Adaptive);
    let sub = Subproblem::new(&b, &x, &y, &rhs, &l, rho, gamma);
    let mut lp = InnerLoop::new(&sub, &p).unwrap();
    let d0 = (&x - &xbar).norm_squared();
    for _ in 0..100 {
        lp.step().unwrap();
        let s = lp.state();
        assert!((&s.a - &xbar).norm_squared() <= d0 / (rho * gamma * s.gamma) + 1e-14);
    }
    assert!((&lp.state().a - &xbar).norm() < 1e-2 * d0.sqrt());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inner_invariants(
        seed in any::<u64>(),
        adaptive in any::<bool>(),
        gamma_prev in 0.0f64..50.0,
        eps_prev in 1e-6f64..10.0,
        rho in 0.1f64..5.0,
    ) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let n = 3;
        let g = DMatrix::from_fn(n, n, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let h: Vec<f64> = (g.transpose() * &g).iter().copied().collect();
        let a = DMatrix::from_fn(2, n, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let gamma = (a.transpose() * &a).symmetric_eigenvalues().max() + 0.1;
        let b = quad_block(&h, &[0.5, -0.5, 1.0], a, ProxTerm::l1(0.2, n));
        let (x, y) = (common::random_vector(&mut rng, n), common::random_vector(&mut rng, n));
        let (rhs, l) = (common::random_vector(&mut rng, 2), common::random_vector(&mut rng, 2));
        let p = params(if adaptive { StepRule::Adaptive } else { StepRule::Constant });
        let sub = Subproblem::new(&b, &x, &y, &rhs, &l, rho, gamma);

        let mut lp = InnerLoop::new(&sub, &p).unwrap();
        let mut gam = 0.0;
        for _ in 0..40 {
            lp.step().unwrap();
            let s = lp.state();
            prop_assert!((s.xi() - 1.0).abs() <= 1e-9);
            prop_assert!(s.alpha > 0.0 && s.alpha <= 1.0);
            let comb = &s.a_prev * (1.0 - s.alpha) + &s.u * s.alpha;
            prop_assert!((&s.a - comb).amax() <= 1e-12 * (1.0 + s.a.amax()));
            gam = if s.l == 1 { 1.0 / s.delta } else { gam / (1.0 - s.alpha) };
            prop_assert!((s.gamma - gam).abs() <= 1e-10 * gam);
        }

        let res = run_inner(&sub, &p, StopContext { k: 2, block: 0, gamma_prev, eps_prev }).unwrap();
        prop_assert!(res.gamma >= gamma_prev);
        prop_assert!(res.r >= 0.0);
        prop_assert!((&res.z - &x).norm() / res.gamma.sqrt() <= eps_prev * (1.0 + 1e-12));
    }
}
