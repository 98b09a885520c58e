mod common;

use common::*;
use iadmm::blockspace::{apply_blocks, spectral_norm, BlockTriangular, BlockVector, LinearMap};
use iadmm::problem::{Block, ProblemSpec};
use iadmm::proxlib::{ProxTerm, SmoothTerm};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dense(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(r, c, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0))
}

fn problem_from(ops: Vec<DMatrix<f64>>) -> ProblemSpec {
    let rows = ops[0].nrows();
    let blocks = ops
        .into_iter()
        .map(|a| Block::new(SmoothTerm::zero(), ProxTerm::zero(), LinearMap::Dense(a)))
        .collect();
    ProblemSpec::new(blocks, DVector::zeros(rows)).unwrap()
}

#[test]
fn apply_a_scalar_blocks() {
    let p = problem_from(vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)]);
    let x = BlockVector::new(vec![DVector::from_element(1, 1.0), DVector::from_element(1, 1.0)]);
    assert_eq!(p.apply_a(&x).unwrap()[0], 2.0);
    assert_eq!(p.apply_a(&BlockVector::zeros(&[1, 1])).unwrap()[0], 0.0);
}

#[test]
fn apply_a_matches_dense_assembly() {
    let p = problem_from(vec![dense(5, 3, 1), dense(5, 2, 2), dense(5, 4, 3)]);
    // Dense A from images of unit vectors.
    let dims = p.dims();
    let n: usize = dims.iter().sum();
    let mut a = DMatrix::zeros(5, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        a.set_column(j, &p.apply_a(&BlockVector::from_flat(&e, &dims).unwrap()).unwrap());
    }
    let x = DVector::from_fn(n, |i, _| (i as f64).sin());
    let got = apply_blocks(&p.ops(), &BlockVector::from_flat(&x, &dims).unwrap()).unwrap();
    assert!((got - &a * &x).amax() <= 1e-12);
    assert!((a - dense_a(&p)).amax() == 0.0);
}

#[test]
fn p_norm_matches_dense_two_blocks() {
    let p = problem_from(vec![dense(4, 3, 4), dense(4, 2, 5)]);
    let gammas = vec![3.5, 2.25];
    let m = BlockTriangular::new(p.ops(), gammas.clone()).unwrap();
    let pd = dense_p(&p, &gammas);
    for s in 0..10 {
        let x = dense(5, 1, 100 + s).column(0).into_owned();
        let want = x.dot(&(&pd * &x));
        let got = m.p_norm_sq(&BlockVector::from_flat(&x, &[3, 2]).unwrap()).unwrap();
        assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0));
    }
    assert_eq!(m.p_norm_sq(&BlockVector::zeros(&[3, 2])).unwrap(), 0.0);
}

#[test]
fn back_substitution_two_scalar_blocks_by_dense_solve() {
    let p = problem_from(vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)]);
    let m = BlockTriangular::new(p.ops(), vec![2.0, 2.0]).unwrap();
    let y = BlockVector::zeros(&[1, 1]);
    let z = BlockVector::new(vec![DVector::from_element(1, 2.0), DVector::from_element(1, 2.0)]);
    let got = m.back_substitute(&y, &z, 0.5).unwrap().to_flat();
    let (md, q) = dense_m_q(&p, &[2.0, 2.0]);
    let want = md.transpose().lu().solve(&(q * DVector::from_vec(vec![1.0, 1.0]))).unwrap();
    assert!((got - &want).amax() < 1e-14);
    assert!((want - DVector::from_vec(vec![0.5, 1.0])).amax() < 1e-14);
}

#[test]
fn spectral_norm_examples() {
    assert!((spectral_norm(&LinearMap::Identity(5)).unwrap() - 1.0).abs() < 1e-8);
    let d = LinearMap::Dense(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0])));
    assert!((spectral_norm(&d).unwrap() - 3.0).abs() < 1e-6);
}

#[test]
fn spectral_norm_of_random_psd_matches_eigensolver() {
    let g = dense(20, 20, 9);
    let s = g.transpose() * &g;
    let want = s.clone().symmetric_eigenvalues().max();
    let got = spectral_norm(&LinearMap::Dense(s)).unwrap();
    assert!((got - want).abs() <= 1e-6 * want);
}

#[test]
fn structured_maps_match_their_dense_copies() {
    let maps = vec![
        LinearMap::FiniteDiff2D { side: 4 },
        LinearMap::haar(8, 3).unwrap(),
        LinearMap::separable_conv(5, vec![0.25, 0.5, 0.25]).unwrap(),
        LinearMap::vstack(vec![LinearMap::Identity(3), LinearMap::NegIdentity(3), LinearMap::Zero { rows: 2, cols: 3 }]).unwrap(),
        LinearMap::compose(LinearMap::Dense(dense(3, 4, 1)), LinearMap::Dense(dense(4, 5, 2))).unwrap(),
    ];
    for m in maps {
        let d = m.to_dense();
        let x = dense(m.cols(), 1, 7).column(0).into_owned();
        let w = dense(m.rows(), 1, 8).column(0).into_owned();
        assert!((m.apply(&x) - &d * &x).amax() < 1e-12, "{}", m.kind());
        assert!((m.adjoint(&w) - d.transpose() * &w).amax() < 1e-12, "{}", m.kind());
    }
}

#[test]
fn finite_differences_of_constant_image_vanish() {
    let b = LinearMap::FiniteDiff2D { side: 16 };
    assert_eq!(b.apply(&DVector::from_element(256, 0.7)).amax(), 0.0);
}

fn any_map() -> impl Strategy<Value = LinearMap> {
    prop_oneof![
        (1usize..6, 1usize..6, any::<u64>()).prop_map(|(r, c, s)| LinearMap::Dense(dense(r, c, s))),
        (1usize..7).prop_map(|s| LinearMap::FiniteDiff2D { side: s }),
        (2u32..5, 1usize..4).prop_map(|(p, l)| LinearMap::haar(1 << p, l.min(p as usize)).unwrap()),
        (2usize..9, 1usize..3).prop_map(|(s, r)| LinearMap::separable_conv(s, vec![1.0 / (2 * r + 1) as f64; 2 * r + 1]).unwrap()),
        (1usize..6).prop_map(|n| LinearMap::vstack(vec![LinearMap::NegIdentity(n), LinearMap::Identity(n)]).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjoint_identity_holds(m in any_map(), seed in any::<u64>()) {
        let x = dense(m.cols(), 1, seed).column(0).into_owned();
        let w = dense(m.rows(), 1, seed ^ 1).column(0).into_owned();
        let (ax, aw) = (m.apply(&x), m.adjoint(&w));
        let scale = ax.norm() * w.norm() + x.norm() * aw.norm() + f64::MIN_POSITIVE;
        prop_assert!((ax.dot(&w) - x.dot(&aw)).abs() <= 1e-10 * scale);
    }

    #[test]
    fn haar_is_orthonormal(p in 1u32..6, seed in any::<u64>()) {
        let side = 1usize << p;
        let h = LinearMap::haar(side, p as usize).unwrap();
        let w = dense(side * side, 1, seed).column(0).into_owned();
        prop_assert!((h.apply(&h.adjoint(&w)) - &w).amax() <= 1e-12);
        prop_assert!((h.adjoint(&h.apply(&w)) - &w).amax() <= 1e-12);
    }

    #[test]
    fn back_substitution_residual_is_small(m in 1usize..4, seed in any::<u64>(), alpha in 0.05f64..0.95) {
        let ops: Vec<DMatrix<f64>> = (0..m).map(|i| dense(3, 2 + i, seed.wrapping_add(i as u64))).collect();
        let p = problem_from(ops);
        let gammas: Vec<f64> = p.ops().iter().map(|a| spectral_norm(a).unwrap().powi(2) + 0.5).collect();
        let t = BlockTriangular::new(p.ops(), gammas.clone()).unwrap();
        let dims = p.dims();
        let n: usize = dims.iter().sum();
        let y = BlockVector::from_flat(&dense(n, 1, seed ^ 3).column(0).into_owned(), &dims).unwrap();
        let z = BlockVector::from_flat(&dense(n, 1, seed ^ 5).column(0).into_owned(), &dims).unwrap();
        let yn = t.back_substitute(&y, &z, alpha).unwrap();
        let (md, q) = dense_m_q(&p, &gammas);
        let r = md.transpose() * (yn.to_flat() - y.to_flat()) - q * (z.to_flat() - y.to_flat()) * alpha;
        prop_assert!(r.norm() <= 1e-10 * (1.0 + z.norm()));
        // z = y leaves y unchanged.
        prop_assert_eq!(t.back_substitute(&y, &y, alpha).unwrap(), y.clone());
    }

    #[test]
    fn p_norm_is_nonnegative_and_matches_dense(seed in any::<u64>()) {
        let p = problem_from(vec![dense(3, 2, seed), dense(3, 3, seed ^ 9)]);
        let g = vec![2.0, 3.0];
        let t = BlockTriangular::new(p.ops(), g.clone()).unwrap();
        let x = dense(5, 1, seed ^ 11).column(0).into_owned();
        let got = t.p_norm_sq(&BlockVector::from_flat(&x, &[2, 3]).unwrap()).unwrap();
        let want = x.dot(&(dense_p(&p, &g) * &x));
        prop_assert!(got >= 0.0);
        prop_assert!((got - want).abs() <= 1e-10 * (1.0 + want));
    }
}
