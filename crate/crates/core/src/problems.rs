//! Seeded problem generators: multi-block QPs, an ℓ₁-regularized family
//! with polyhedral structure, and a three-block deblurring problem.
//!
//! Entries are addressed by ids `qp-<seed>-m<m>[-mu<μ>]`, `lasso-<seed>` and
//! `img-<seed>-s<side>`.

use std::fmt::Write as _;
use std::hash::{DefaultHasher, Hash, Hasher};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::blockspace::{BlockVector, LinearMap};
use crate::diagnostics::{ReferencePair, SolutionSet};
use crate::error::{Error, Result};
use crate::oracle::{certify_reference, polish_support, solve_qp_kkt, QpInstance, CERTIFY_TOL};
use crate::outer::{solve, GammaInit, Mode, SolverParams};
use crate::problem::{Block, ProblemSpec};
use crate::proxlib::{quadratic_smooth, ProxKind, ProxTerm, SmoothKind, SmoothTerm};

/// Regeneration attempts before a generator gives up.
const MAX_ATTEMPTS: u64 = 16;

pub const DEFAULT_BLOCK_DIM: usize = 4;
pub const IMAGING_NOISE: f64 = 0.01;
pub const IMAGING_ALPHA_TV: f64 = 1e-2;
pub const IMAGING_BETA_L1: f64 = 1e-3;
pub const IMAGING_BLUR_WIDTH: f64 = 1.0;
pub const HAAR_LEVELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    Convex,
    StronglyConvex,
    Polyhedral,
    Imaging,
}

/// Data kept alongside the imaging problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagingData {
    pub side: usize,
    pub truth: DVector<f64>,
    pub observed: DVector<f64>,
    pub blur: LinearMap,
    pub alpha_tv: f64,
    pub beta_l1: f64,
}

impl ImagingData {
    /// `½‖Fu − f‖² + α Σ_p ‖(Bu)_p‖ + β‖Ψᵀu‖₁`
    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        let fid = 0.5 * (self.blur.apply(u) - &self.observed).norm_squared();
        let bu = LinearMap::FiniteDiff2D { side: self.side }.apply(u);
        let tv: f64 = bu.as_slice().chunks(2).map(|g| (g[0] * g[0] + g[1] * g[1]).sqrt()).sum();
        let psi = LinearMap::Haar2D {
            side: self.side,
            levels: HAAR_LEVELS,
        };
        let l1 = psi.apply(u).lp_norm(1);
        fid + self.alpha_tv * tv + self.beta_l1 * l1
    }
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub id: String,
    pub seed: u64,
    pub problem: ProblemSpec,
    pub reference: Option<ReferencePair>,
    pub tags: Vec<Tag>,
    /// Dense data for QP entries.
    pub qp: Option<QpInstance>,
    pub imaging: Option<ImagingData>,
    /// Rejected draws before this one.
    pub regenerations: u64,
}

impl CorpusEntry {
    pub fn has_tag(&self, t: Tag) -> bool {
        self.tags.contains(&t)
    }

    pub fn solution_set(&self) -> Option<SolutionSet> {
        self.reference.clone().map(SolutionSet::Singleton)
    }
}

/// Parsed corpus id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorpusId {
    Qp { seed: u64, m: usize, mu: f64 },
    Lasso { seed: u64 },
    Imaging { seed: u64, side: usize },
}

pub fn parse_id(id: &str) -> Result<CorpusId> {
    let bad = || Error::InvalidConfig(format!("unknown corpus id `{id}`"));
    let parts: Vec<&str> = id.split('-').collect();
    let seed = |s: &str| s.parse::<u64>().map_err(|_| bad());
    match parts.as_slice() {
        ["qp", s, m] | ["qp", s, m, _] => {
            let m = m.strip_prefix('m').ok_or_else(bad)?.parse::<usize>().map_err(|_| bad())?;
            let mu = match parts.get(3) {
                Some(t) => t.strip_prefix("mu").ok_or_else(bad)?.parse::<f64>().map_err(|_| bad())?,
                None => 0.0,
            };
            if m == 0 || !(mu >= 0.0) {
                return Err(bad());
            }
            Ok(CorpusId::Qp { seed: seed(s)?, m, mu })
        }
        ["lasso", s] => Ok(CorpusId::Lasso { seed: seed(s)? }),
        ["img", s, side] => {
            let side = side.strip_prefix('s').ok_or_else(bad)?.parse::<usize>().map_err(|_| bad())?;
            Ok(CorpusId::Imaging { seed: seed(s)?, side })
        }
        _ => Err(bad()),
    }
}

/// Builds the entry with default sizes for its family.
pub fn entry(id: &str) -> Result<CorpusEntry> {
    let mut e = match parse_id(id)? {
        CorpusId::Qp { seed, m, mu } => gen_qp(seed, m, DEFAULT_BLOCK_DIM, 2 * m + 1, mu)?,
        CorpusId::Lasso { seed } => gen_lasso(seed, 3, DEFAULT_BLOCK_DIM, 6)?,
        CorpusId::Imaging { seed, side } => {
            gen_imaging(seed, side, IMAGING_ALPHA_TV, IMAGING_BETA_L1, IMAGING_BLUR_WIDTH)?
        }
    };
    e.id = id.to_string();
    Ok(e)
}

/// The same family and sizes as `id` with a different seed.
pub fn reseed_id(id: &str, seed: u64) -> Result<String> {
    Ok(match parse_id(id)? {
        CorpusId::Qp { m, mu, .. } if mu > 0.0 => format!("qp-{seed}-m{m}-mu{mu}"),
        CorpusId::Qp { m, .. } => format!("qp-{seed}-m{m}"),
        CorpusId::Lasso { .. } => format!("lasso-{seed}"),
        CorpusId::Imaging { side, .. } => format!("img-{seed}-s{side}"),
    })
}

/// Solver settings for the imaging family: `γ` from the safeguard rule
/// (`A₁` has a large norm), `ρ = 0.3` and `α = 0.9`.
pub fn imaging_params() -> SolverParams {
    SolverParams {
        rho: 0.3,
        alpha: 0.9,
        gamma_init: GammaInit::safeguard(),
        ..SolverParams::default()
    }
}

/// Default settings for an entry's family.
pub fn default_params(entry: &CorpusEntry) -> SolverParams {
    if entry.imaging.is_some() {
        imaging_params()
    } else {
        SolverParams::default()
    }
}

fn rng_for(family: u64, seed: u64, attempt: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(family * 1024 + attempt);
    r
}

fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal) * scale)
}

fn normal_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal) * scale)
}

/// Random QP: `H_i = G_iᵀG_i + μI`, dense `A_i`, `b = A x_feas`. With
/// `μ = 0`, `G_i` has `n_i − 1` rows so every `f_i` is merely convex.
pub fn gen_qp(seed: u64, m: usize, n_i: usize, rows: usize, mu: f64) -> Result<CorpusEntry> {
    if m == 0 || n_i == 0 || rows == 0 || !(mu >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "gen_qp needs m, n_i, N ≥ 1 and μ ≥ 0 (got {m}, {n_i}, {rows}, {mu})"
        )));
    }
    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng_for(1, seed, attempt);
        let g_rows = if mu > 0.0 { n_i } else { n_i.saturating_sub(1).max(1) };
        let mut qp = QpInstance {
            hessians: Vec::new(),
            linear: Vec::new(),
            ops: Vec::new(),
            rhs: DVector::zeros(rows),
        };
        let mut x_feas = Vec::new();
        for _ in 0..m {
            let g = normal_matrix(&mut rng, g_rows, n_i, 1.0 / (n_i as f64).sqrt());
            qp.hessians.push(g.tr_mul(&g) + DMatrix::identity(n_i, n_i) * mu);
            qp.linear.push(normal_vector(&mut rng, n_i, 1.0));
            qp.ops.push(normal_matrix(&mut rng, rows, n_i, 1.0 / (rows as f64).sqrt()));
            x_feas.push(normal_vector(&mut rng, n_i, 1.0));
        }
        for (a, x) in qp.ops.iter().zip(&x_feas) {
            qp.rhs += a * x;
        }
        match solve_qp_kkt(&qp) {
            Ok(reference) => {
                let blocks = qp
                    .hessians
                    .iter()
                    .zip(&qp.linear)
                    .zip(&qp.ops)
                    .map(|((h, c), a)| {
                        Ok(Block::new(
                            SmoothTerm::quadratic(h.clone(), c.clone())?.with_modulus(mu),
                            ProxTerm::zero(),
                            LinearMap::Dense(a.clone()),
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let problem = ProblemSpec::new(blocks, qp.rhs.clone())?;
                let mut tags = vec![Tag::Convex];
                if mu > 0.0 {
                    tags.push(Tag::StronglyConvex);
                }
                let id = if mu > 0.0 { format!("qp-{seed}-m{m}-mu{mu}") } else { format!("qp-{seed}-m{m}") };
                return Ok(CorpusEntry {
                    id,
                    seed,
                    problem,
                    reference: Some(reference),
                    tags,
                    qp: Some(qp),
                    imaging: None,
                    regenerations: attempt,
                });
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::numeric("QP generation failed")))
}

/// Solver settings used to produce references for nonsmooth entries.
pub fn reference_params() -> SolverParams {
    SolverParams {
        mode: Mode::Exact,
        tol: 1e-12,
        zero_eps: 0.0,
        max_outer: 200_000,
        exact_tol: 1e-13,
        ..SolverParams::default()
    }
}

/// Strongly convex quadratics plus weighted ℓ₁ on every block; the
/// solution is unique and the subdifferentials are piecewise polyhedral.
/// The reference comes from an exact-mode run, a support polish and the
/// KKT gate.
pub fn gen_lasso(seed: u64, m: usize, n_i: usize, rows: usize) -> Result<CorpusEntry> {
    gen_lasso_weighted(seed, m, n_i, rows, 1.0)
}

/// [`gen_lasso`] with all ℓ₁ weights multiplied by `weight_scale`.
pub fn gen_lasso_weighted(seed: u64, m: usize, n_i: usize, rows: usize, weight_scale: f64) -> Result<CorpusEntry> {
    if m == 0 || n_i == 0 || rows == 0 || !(weight_scale >= 0.0) {
        return Err(Error::InvalidConfig("gen_lasso needs m, n_i, N ≥ 1".into()));
    }
    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng_for(2, seed, attempt);
        let mut blocks = Vec::new();
        let mut x_feas = Vec::new();
        let mut rhs = DVector::zeros(rows);
        for _ in 0..m {
            let g = normal_matrix(&mut rng, n_i, n_i, 1.0 / (n_i as f64).sqrt());
            let h = g.tr_mul(&g) + DMatrix::identity(n_i, n_i) * 0.2;
            let c = normal_vector(&mut rng, n_i, 1.0);
            let w = DVector::from_fn(n_i, |_, _| rng.random_range(0.1..0.6) * weight_scale);
            let a = normal_matrix(&mut rng, rows, n_i, 1.0 / (rows as f64).sqrt());
            let xf = normal_vector(&mut rng, n_i, 1.0);
            rhs += &a * &xf;
            x_feas.push(xf);
            let prox = if weight_scale > 0.0 { ProxTerm::weighted_l1(w) } else { ProxTerm::zero() };
            blocks.push(Block::new(SmoothTerm::quadratic(h, c)?.with_modulus(0.2), prox, LinearMap::Dense(a)));
        }
        let problem = ProblemSpec::new(blocks, rhs)?;
        match lasso_reference(&problem) {
            Ok(reference) => {
                return Ok(CorpusEntry {
                    id: format!("lasso-{seed}"),
                    seed,
                    problem,
                    reference: Some(reference),
                    tags: vec![Tag::Convex, Tag::StronglyConvex, Tag::Polyhedral],
                    qp: None,
                    imaging: None,
                    regenerations: attempt,
                })
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::numeric("lasso generation failed")))
}

fn lasso_reference(problem: &ProblemSpec) -> Result<ReferencePair> {
    let report = solve(problem, reference_params(), None)?;
    if let crate::outer::Termination::NumericError(msg) = &report.cause {
        return Err(Error::numeric(msg.clone()));
    }
    let (z, l) = report.solution();
    let (x, l) = polish_support(problem, z, l)?;
    let mut r = certify_reference(problem, x, l, CERTIFY_TOL)?;
    r.source = "exact-mode+polish".into();
    Ok(r)
}

/// Normalized truncated Gaussian of standard deviation `width` pixels.
pub fn gaussian_kernel(width: f64) -> Vec<f64> {
    let radius = (2.0 * width).ceil().max(1.0) as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|t| (-(t * t) as f64 / (2.0 * width * width)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Piecewise-constant test image with rectangles and disks, row-major.
pub fn synthetic_image(rng: &mut ChaCha8Rng, side: usize) -> DVector<f64> {
    let s = side as f64;
    let mut img = DVector::from_element(side * side, rng.random_range(0.0..0.2));
    let rects = rng.random_range(3..=5);
    for _ in 0..rects {
        let (r0, c0) = (rng.random_range(0.0..0.8) * s, rng.random_range(0.0..0.8) * s);
        let (h, w) = (rng.random_range(0.15..0.5) * s, rng.random_range(0.15..0.5) * s);
        let v = rng.random_range(0.0..1.0);
        for r in 0..side {
            for c in 0..side {
                let (rf, cf) = (r as f64, c as f64);
                if rf >= r0 && rf < r0 + h && cf >= c0 && cf < c0 + w {
                    img[r * side + c] = v;
                }
            }
        }
    }
    let disks = rng.random_range(1..=2);
    for _ in 0..disks {
        let (cr, cc) = (rng.random_range(0.2..0.8) * s, rng.random_range(0.2..0.8) * s);
        let rad = rng.random_range(0.1..0.25) * s;
        let v = rng.random_range(0.0..1.0);
        for r in 0..side {
            for c in 0..side {
                let (dr, dc) = (r as f64 - cr, c as f64 - cc);
                if dr * dr + dc * dc <= rad * rad {
                    img[r * side + c] = v;
                }
            }
        }
    }
    img
}

/// Deblurring with total variation and Haar-ℓ₁ regularization, split into
/// blocks `(u, w, v)`:
///
/// ```text
/// min ½‖Fu − f‖² + α‖w‖_{1,2} + β‖v‖₁  s.t.  [B; Ψᵀ]u − [w; 0] − [0; v] = 0
/// ```
pub fn gen_imaging(seed: u64, side: usize, alpha_tv: f64, beta_l1: f64, blur_width: f64) -> Result<CorpusEntry> {
    if side < 16 || !side.is_power_of_two() {
        return Err(Error::InvalidConfig(format!(
            "imaging side must be a power of two ≥ 16, got {side}"
        )));
    }
    if !(alpha_tv >= 0.0 && beta_l1 >= 0.0 && blur_width > 0.0) {
        return Err(Error::InvalidConfig("imaging weights must be ≥ 0 and blur width > 0".into()));
    }
    let n = side * side;
    let mut rng = rng_for(3, seed, 0);
    let truth = synthetic_image(&mut rng, side);
    let blur = LinearMap::separable_conv(side, gaussian_kernel(blur_width))?;
    let observed = blur.apply(&truth) + normal_vector(&mut rng, n, IMAGING_NOISE);
    let b = LinearMap::FiniteDiff2D { side };
    let psi = LinearMap::haar(side, HAAR_LEVELS)?;
    let a1 = LinearMap::vstack(vec![b, psi])?;
    let a2 = LinearMap::vstack(vec![LinearMap::NegIdentity(2 * n), LinearMap::Zero { rows: n, cols: 2 * n }])?;
    let a3 = LinearMap::vstack(vec![LinearMap::Zero { rows: 2 * n, cols: n }, LinearMap::NegIdentity(n)])?;
    let fidelity = quadratic_smooth(blur.clone(), observed.clone())?;
    let lip = fidelity.lipschitz.map(|z| z * (1.0 + 1e-6));
    let h2 = if alpha_tv > 0.0 { ProxTerm::group_l2(alpha_tv, 2) } else { ProxTerm::zero() };
    let h3 = if beta_l1 > 0.0 { ProxTerm::l1(beta_l1, n) } else { ProxTerm::zero() };
    let blocks = vec![
        Block::new(fidelity.with_lipschitz(lip), ProxTerm::zero(), a1),
        Block::new(SmoothTerm::zero(), h2, a2),
        Block::new(SmoothTerm::zero(), h3, a3),
    ];
    let problem = ProblemSpec::new(blocks, DVector::zeros(3 * n))?;
    Ok(CorpusEntry {
        id: format!("img-{seed}-s{side}"),
        seed,
        problem,
        reference: None,
        tags: vec![Tag::Convex, Tag::Imaging],
        qp: None,
        imaging: Some(ImagingData {
            side,
            truth,
            observed,
            blur,
            alpha_tv,
            beta_l1,
        }),
        regenerations: 0,
    })
}

/// Starting point for the imaging problem: `u = f`, `w = Bf`, `v = Ψᵀf`.
pub fn imaging_start(entry: &CorpusEntry) -> Option<BlockVector> {
    let d = entry.imaging.as_ref()?;
    let u = d.observed.clone();
    let w = LinearMap::FiniteDiff2D { side: d.side }.apply(&u);
    let v = LinearMap::Haar2D {
        side: d.side,
        levels: HAAR_LEVELS,
    }
    .apply(&u);
    Some(BlockVector::new(vec![u, w, v]))
}

/// Canonical text dump of all entry data; equal dumps mean equal entries.
pub fn fingerprint_csv(entry: &CorpusEntry) -> String {
    let mut out = String::new();
    let mut row = |name: &str, vals: &[f64]| {
        let _ = write!(out, "{name}");
        for v in vals {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    };
    row("rhs", entry.problem.rhs().as_slice());
    for (i, b) in entry.problem.blocks().iter().enumerate() {
        let probe = DVector::from_fn(b.dim(), |j, _| ((j * 7 + 3) % 11) as f64 - 5.0);
        row(&format!("A{i}:{}", b.op.kind()), b.op.apply(&probe).as_slice());
        match &b.smooth.kind {
            SmoothKind::Zero => row(&format!("f{i}:zero"), &[]),
            SmoothKind::Quadratic { hessian, linear } => {
                row(&format!("H{i}"), hessian.as_slice());
                row(&format!("c{i}"), linear.as_slice());
            }
            SmoothKind::LeastSquares { op, data } => {
                row(&format!("F{i}:{}", op.kind()), op.apply(&probe).as_slice());
                row(&format!("d{i}"), data.as_slice());
            }
        }
        match &b.prox.kind {
            ProxKind::Zero => row(&format!("h{i}:zero"), &[]),
            ProxKind::L1 { weights } => row(&format!("h{i}:l1"), weights.as_slice()),
            ProxKind::GroupL2 { weight, group } => row(&format!("h{i}:group{group}"), &[*weight]),
            ProxKind::Box { lo, hi } => {
                row(&format!("h{i}:box-lo"), lo.as_slice());
                row(&format!("h{i}:box-hi"), hi.as_slice());
            }
        }
    }
    if let Some(r) = &entry.reference {
        row("x*", r.x_star.to_flat().as_slice());
        row("lambda*", r.lambda_star.as_slice());
    }
    out
}

/// Hash of [`fingerprint_csv`].
pub fn fingerprint(entry: &CorpusEntry) -> u64 {
    let mut h = DefaultHasher::new();
    fingerprint_csv(entry).hash(&mut h);
    h.finish()
}
