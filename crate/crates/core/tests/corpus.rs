mod common;

use common::*;
use iadmm::blockspace::{BlockVector, LinearMap};
use iadmm::oracle::{solve_qp_kkt, QpInstance};
use iadmm::outer::{Solver, SolverParams, Termination};
use iadmm::problems::{
    entry, fingerprint, fingerprint_csv, gen_imaging, gen_lasso_weighted, gen_qp, imaging_params, imaging_start, parse_id,
    reseed_id, Tag, HAAR_LEVELS,
};
use iadmm::textio::{format_reference, parse_reference};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const IDS: [&str; 8] = ["qp-0-m1", "qp-1-m2", "qp-2-m3", "qp-3-m4-mu0.5", "lasso-0", "lasso-3", "img-0-s16", "img-2-s32"];

#[test]
fn strongly_convex_qp_is_tagged_with_its_modulus() {
    let e = gen_qp(1, 3, 4, 5, 0.25).unwrap();
    assert!(e.has_tag(Tag::StronglyConvex));
    assert_eq!(e.problem.strong_modulus(), 0.25);
    for h in &e.qp.as_ref().unwrap().hessians {
        assert!(h.clone().symmetric_eigenvalues().min() >= 0.25 - 1e-12);
    }
    let c = gen_qp(1, 3, 4, 5, 0.0).unwrap();
    assert!(!c.has_tag(Tag::StronglyConvex));
    for h in &c.qp.as_ref().unwrap().hessians {
        // Rank-deficient Hessians: f_i is convex but not strongly convex.
        assert!(h.clone().symmetric_eigenvalues().min().abs() <= 1e-12);
    }
}

#[test]
fn qp_with_identity_constraint_and_zero_data_has_zero_solution() {
    let qp = QpInstance {
        hessians: vec![DMatrix::identity(3, 3) * 2.0],
        linear: vec![DVector::zeros(3)],
        ops: vec![DMatrix::identity(3, 3)],
        rhs: DVector::zeros(3),
    };
    let r = solve_qp_kkt(&qp).unwrap();
    assert_eq!(r.x_star.to_flat().amax(), 0.0);
}

#[test]
fn generated_references_are_feasible() {
    for id in ["qp-0-m2", "qp-6-m3", "qp-9-m5-mu1", "lasso-1", "lasso-4"] {
        let e = entry(id).unwrap();
        let r = e.reference.as_ref().unwrap();
        assert!(e.problem.residual(&r.x_star).unwrap().norm() <= 1e-9, "{id}");
        if e.qp.is_some() {
            assert!(qp_kkt_residual(&e, &r.x_star, &r.lambda_star) <= 1e-9, "{id}");
        }
    }
}

#[test]
fn generation_is_deterministic() {
    for id in IDS {
        let (a, b) = (entry(id).unwrap(), entry(id).unwrap());
        assert_eq!(fingerprint_csv(&a), fingerprint_csv(&b), "{id}");
        assert_eq!(fingerprint(&a), fingerprint(&b));
    }
    assert_ne!(fingerprint(&entry("qp-0-m3").unwrap()), fingerprint(&entry("qp-1-m3").unwrap()));
    assert_eq!(reseed_id("qp-0-m3-mu0.5", 7).unwrap(), "qp-7-m3-mu0.5");
    assert_eq!(reseed_id("img-1-s32", 4).unwrap(), "img-4-s32");
}

#[test]
fn malformed_ids_are_rejected() {
    for id in ["qp-1", "qp-x-m3", "qp-1-m0", "qp-1-m3-nu2", "lasso", "img-1-32", "foo-1"] {
        assert!(parse_id(id).is_err(), "{id}");
    }
    assert!(gen_imaging(0, 24, 0.0, 0.0, 1.0).is_err());
    assert!(gen_imaging(0, 8, 0.0, 0.0, 1.0).is_err());
}

#[test]
fn unweighted_lasso_is_a_qp() {
    let e = gen_lasso_weighted(2, 3, 4, 5, 0.0).unwrap();
    let qp = QpInstance::from_problem(&e.problem).unwrap();
    let want = solve_qp_kkt(&qp).unwrap();
    let got = e.reference.as_ref().unwrap();
    assert!((got.x_star.to_flat() - want.x_star.to_flat()).amax() <= 1e-8);
    assert!((&got.lambda_star - &want.lambda_star).amax() <= 1e-8);
}

#[test]
fn constant_image_has_no_total_variation() {
    let e = entry("img-0-s16").unwrap();
    let n = 256;
    let a1 = e.problem.block(0).op.apply(&DVector::from_element(n, 0.3));
    assert_eq!(a1.rows(0, 2 * n).amax(), 0.0);
}

#[test]
fn haar_rows_are_orthonormal() {
    let psi = LinearMap::haar(32, HAAR_LEVELS).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5 {
        let w = random_vector(&mut rng, 1024);
        assert!((psi.apply(&psi.adjoint(&w)) - &w).amax() <= 1e-12);
    }
}

#[test]
fn unregularized_deblur_matches_normal_equations() {
    let e = gen_imaging(0, 16, 0.0, 0.0, 0.5).unwrap();
    let d = e.imaging.as_ref().unwrap();
    let f = d.blur.to_dense();
    let want = (f.tr_mul(&f)).cholesky().unwrap().solve(&f.tr_mul(&d.observed));
    let rep = Solver::new(&e.problem, SolverParams { tol: 1e-9, ..imaging_params() })
        .with_start(imaging_start(&e).unwrap(), DVector::zeros(e.problem.rows()))
        .run()
        .unwrap();
    assert_eq!(rep.cause, Termination::Tolerance);
    assert!((rep.state.z.block(0) - want).amax() <= 1e-6);
}

#[test]
fn reference_text_round_trip() {
    let e = entry("lasso-2").unwrap();
    let r = e.reference.as_ref().unwrap();
    let back = parse_reference(&e.problem, &format_reference(r), "file").unwrap();
    assert_eq!(back.x_star, r.x_star);
    assert_eq!(back.lambda_star, r.lambda_star);
    let other = entry("lasso-3").unwrap();
    assert!(parse_reference(&other.problem, &format_reference(r), "file").is_err());
}

/// Adjoint identity, finite-difference gradients and dimension bookkeeping.
fn check_entry(id: &str, seed: u64) {
    let e = entry(id).unwrap();
    let p = &e.problem;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = p.dims();
    assert_eq!(dims.iter().sum::<usize>(), BlockVector::zeros(&dims).len());
    for (i, b) in p.blocks().iter().enumerate() {
        assert_eq!(b.op.rows(), p.rows());
        assert_eq!(b.op.cols(), dims[i]);
        let x = random_vector(&mut rng, dims[i]);
        let w = random_vector(&mut rng, p.rows());
        let (ax, aw) = (b.op.apply(&x), b.op.adjoint(&w));
        assert!((ax.dot(&w) - x.dot(&aw)).abs() <= 1e-10 * (1.0 + ax.norm() * w.norm()), "{id} block {i}");

        let g = b.smooth.grad(&x);
        let h = 1e-5;
        for k in (0..dims[i]).step_by((dims[i] / 8).max(1)) {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[k] += h;
            xm[k] -= h;
            let fd = (b.smooth.eval(&xp) - b.smooth.eval(&xm)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-5 * (1.0 + g[k].abs()), "{id} block {i} coord {k}");
        }
    }
    if let Some(r) = &e.reference {
        assert!(r.x_star.conforms_to(&dims));
        assert!(p.residual(&r.x_star).unwrap().norm() <= 1e-9);
    }
    if let Some(x0) = imaging_start(&e) {
        // The starting point satisfies w = Bu, v = Ψᵀu exactly.
        assert!(p.residual(&x0).unwrap().amax() <= 1e-12);
    }
}

#[test]
fn every_corpus_entry_is_well_formed() {
    for (s, id) in IDS.iter().enumerate() {
        check_entry(id, s as u64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn random_qp_entries_are_well_formed(seed in 0u64..1000, m in 1usize..5, strong in any::<bool>()) {
        let id = if strong { format!("qp-{seed}-m{m}-mu0.5") } else { format!("qp-{seed}-m{m}") };
        check_entry(&id, seed);
    }
}
