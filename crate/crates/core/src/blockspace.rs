//! Block vectors, abstract linear maps and the block lower triangular
//! matrix `M` used by the back-substitution step.
//!
//! The matrix `M` has `Q_i = γ_i I` on its diagonal and `A_iᵀA_j` below it.
//! It is never materialized: products with `M`, `Mᵀ` and
//! `P = M Q⁻¹ Mᵀ` are evaluated block by block through the operators.

use std::f64::consts::FRAC_1_SQRT_2;
use std::ops::{Add, Sub};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seed of the start vector used by every power iteration.
pub const POWER_SEED: u64 = 0x5EED;
/// Relative change of the Rayleigh quotient at which power iteration stops.
pub const POWER_TOL: f64 = 1e-8;
/// Iteration cap of the power iteration.
pub const POWER_MAX_ITERS: usize = 10_000;

/// A point `x = (x_1, …, x_m)` partitioned into blocks of sizes `n_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    blocks: Vec<DVector<f64>>,
}

impl BlockVector {
    pub fn new(blocks: Vec<DVector<f64>>) -> Self {
        Self { blocks }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            blocks: dims.iter().map(|&n| DVector::zeros(n)).collect(),
        }
    }

    /// Splits a flat vector according to `dims`.
    pub fn from_flat(flat: &DVector<f64>, dims: &[usize]) -> Result<Self> {
        let total: usize = dims.iter().sum();
        if flat.len() != total {
            return Err(Error::Dimension(format!(
                "flat vector has length {}, block sizes sum to {total}",
                flat.len()
            )));
        }
        let mut offset = 0;
        let blocks = dims
            .iter()
            .map(|&n| {
                let b = flat.rows(offset, n).into_owned();
                offset += n;
                b
            })
            .collect();
        Ok(Self { blocks })
    }

    pub fn to_flat(&self) -> DVector<f64> {
        let n = self.len();
        let mut out = DVector::zeros(n);
        let mut offset = 0;
        for b in &self.blocks {
            out.rows_mut(offset, b.len()).copy_from(b);
            offset += b.len();
        }
        out
    }

    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.len()).collect()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Total dimension `n = Σ n_i`.
    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block(&self, i: usize) -> &DVector<f64> {
        &self.blocks[i]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut DVector<f64> {
        &mut self.blocks[i]
    }

    pub fn blocks(&self) -> &[DVector<f64>] {
        &self.blocks
    }

    pub fn set_block(&mut self, i: usize, v: DVector<f64>) {
        self.blocks[i] = v;
    }

    pub fn dot(&self, other: &BlockVector) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| a.dot(b))
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scale(&self, s: f64) -> BlockVector {
        BlockVector::new(self.blocks.iter().map(|b| b * s).collect())
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &BlockVector) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.axpy(s, b, 1.0);
        }
    }

    pub fn conforms_to(&self, dims: &[usize]) -> bool {
        self.blocks.len() == dims.len() && self.blocks.iter().zip(dims).all(|(b, &n)| b.len() == n)
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

impl Add for &BlockVector {
    type Output = BlockVector;
    fn add(self, rhs: &BlockVector) -> BlockVector {
        BlockVector::new(self.blocks.iter().zip(&rhs.blocks).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &BlockVector {
    type Output = BlockVector;
    fn sub(self, rhs: &BlockVector) -> BlockVector {
        BlockVector::new(self.blocks.iter().zip(&rhs.blocks).map(|(a, b)| a - b).collect())
    }
}

/// A linear map `R^cols → R^rows` together with its adjoint.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearMap {
    Dense(DMatrix<f64>),
    Identity(usize),
    NegIdentity(usize),
    Zero {
        rows: usize,
        cols: usize,
    },
    /// Forward differences of a `side × side` image (row-major), zero at
    /// the last column/row. Output is interleaved per pixel:
    /// `[horizontal, vertical]`, so rows = 2·side².
    FiniteDiff2D {
        side: usize,
    },
    /// Orthonormal 2-D Haar analysis transform `Ψᵀ` with `levels` levels.
    /// Its adjoint is the synthesis transform `Ψ`.
    Haar2D {
        side: usize,
        levels: usize,
    },
    /// Separable convolution of a `side × side` image with `kernel` along
    /// rows and then columns, zero outside the image. Kernel length is odd.
    SeparableConv2D {
        side: usize,
        kernel: Vec<f64>,
    },
    /// `[L_1; L_2; …]`, all with equal column counts.
    VStack(Vec<LinearMap>),
    /// `outer ∘ inner`
    Compose(Box<LinearMap>, Box<LinearMap>),
}

impl LinearMap {
    pub fn vstack(parts: Vec<LinearMap>) -> Result<Self> {
        if let Some(first) = parts.first() {
            let c = first.cols();
            if parts.iter().any(|p| p.cols() != c) {
                return Err(Error::Dimension("vstack parts have different column counts".into()));
            }
        } else {
            return Err(Error::Dimension("vstack of zero maps".into()));
        }
        Ok(LinearMap::VStack(parts))
    }

    pub fn compose(outer: LinearMap, inner: LinearMap) -> Result<Self> {
        if outer.cols() != inner.rows() {
            return Err(Error::Dimension(format!(
                "cannot compose {}x{} after {}x{}",
                outer.rows(),
                outer.cols(),
                inner.rows(),
                inner.cols()
            )));
        }
        Ok(LinearMap::Compose(Box::new(outer), Box::new(inner)))
    }

    pub fn haar(side: usize, levels: usize) -> Result<Self> {
        if levels == 0 || side == 0 || !side.is_multiple_of(1 << levels) {
            return Err(Error::InvalidConfig(format!(
                "Haar transform needs side divisible by 2^{levels}, got {side}"
            )));
        }
        Ok(LinearMap::Haar2D { side, levels })
    }

    pub fn separable_conv(side: usize, kernel: Vec<f64>) -> Result<Self> {
        if kernel.len().is_multiple_of(2) {
            return Err(Error::InvalidConfig("convolution kernel length must be odd".into()));
        }
        Ok(LinearMap::SeparableConv2D { side, kernel })
    }

    pub fn rows(&self) -> usize {
        match self {
            LinearMap::Dense(m) => m.nrows(),
            LinearMap::Identity(n) | LinearMap::NegIdentity(n) => *n,
            LinearMap::Zero { rows, .. } => *rows,
            LinearMap::FiniteDiff2D { side } => 2 * side * side,
            LinearMap::Haar2D { side, .. } | LinearMap::SeparableConv2D { side, .. } => side * side,
            LinearMap::VStack(parts) => parts.iter().map(|p| p.rows()).sum(),
            LinearMap::Compose(outer, _) => outer.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            LinearMap::Dense(m) => m.ncols(),
            LinearMap::Identity(n) | LinearMap::NegIdentity(n) => *n,
            LinearMap::Zero { cols, .. } => *cols,
            LinearMap::FiniteDiff2D { side }
            | LinearMap::Haar2D { side, .. }
            | LinearMap::SeparableConv2D { side, .. } => side * side,
            LinearMap::VStack(parts) => parts[0].cols(),
            LinearMap::Compose(_, inner) => inner.cols(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LinearMap::Dense(_) => "dense",
            LinearMap::Identity(_) => "identity",
            LinearMap::NegIdentity(_) => "negated-identity",
            LinearMap::Zero { .. } => "zero",
            LinearMap::FiniteDiff2D { .. } => "finite-difference-2d",
            LinearMap::Haar2D { .. } => "orthonormal-wavelet",
            LinearMap::SeparableConv2D { .. } => "separable-convolution",
            LinearMap::VStack(_) => "vertical-stack",
            LinearMap::Compose(..) => "composition",
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.cols());
        match self {
            LinearMap::Dense(m) => m * x,
            LinearMap::Identity(_) => x.clone(),
            LinearMap::NegIdentity(_) => -x,
            LinearMap::Zero { rows, .. } => DVector::zeros(*rows),
            LinearMap::FiniteDiff2D { side } => DVector::from_vec(fd_apply(*side, x.as_slice())),
            LinearMap::Haar2D { side, levels } => {
                let mut buf = x.as_slice().to_vec();
                haar_analysis(&mut buf, *side, *levels);
                DVector::from_vec(buf)
            }
            LinearMap::SeparableConv2D { side, kernel } => {
                DVector::from_vec(conv_separable(*side, kernel, x.as_slice(), false))
            }
            LinearMap::VStack(parts) => {
                let mut out = DVector::zeros(self.rows());
                let mut offset = 0;
                for p in parts {
                    let r = p.rows();
                    out.rows_mut(offset, r).copy_from(&p.apply(x));
                    offset += r;
                }
                out
            }
            LinearMap::Compose(outer, inner) => outer.apply(&inner.apply(x)),
        }
    }

    pub fn adjoint(&self, w: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(w.len(), self.rows());
        match self {
            LinearMap::Dense(m) => m.tr_mul(w),
            LinearMap::Identity(_) => w.clone(),
            LinearMap::NegIdentity(_) => -w,
            LinearMap::Zero { cols, .. } => DVector::zeros(*cols),
            LinearMap::FiniteDiff2D { side } => DVector::from_vec(fd_adjoint(*side, w.as_slice())),
            LinearMap::Haar2D { side, levels } => {
                let mut buf = w.as_slice().to_vec();
                haar_synthesis(&mut buf, *side, *levels);
                DVector::from_vec(buf)
            }
            LinearMap::SeparableConv2D { side, kernel } => {
                DVector::from_vec(conv_separable(*side, kernel, w.as_slice(), true))
            }
            LinearMap::VStack(parts) => {
                let mut out = DVector::zeros(self.cols());
                let mut offset = 0;
                for p in parts {
                    let r = p.rows();
                    out += p.adjoint(&w.rows(offset, r).into_owned());
                    offset += r;
                }
                out
            }
            LinearMap::Compose(outer, inner) => inner.adjoint(&outer.adjoint(w)),
        }
    }

    /// Dense assembly by applying the map to unit vectors.
    pub fn to_dense(&self) -> DMatrix<f64> {
        if let LinearMap::Dense(m) = self {
            return m.clone();
        }
        let (r, c) = (self.rows(), self.cols());
        let mut out = DMatrix::zeros(r, c);
        let mut e = DVector::zeros(c);
        for j in 0..c {
            e[j] = 1.0;
            out.set_column(j, &self.apply(&e));
            e[j] = 0.0;
        }
        out
    }

    /// `‖AᵀA‖`, the squared largest singular value.
    pub fn gram_norm(&self) -> Result<f64> {
        power_iteration_sym(self.cols(), |v| self.adjoint(&self.apply(v)))
    }
}

fn fd_apply(side: usize, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; 2 * side * side];
    for r in 0..side {
        for c in 0..side {
            let p = r * side + c;
            if c + 1 < side {
                out[2 * p] = u[p + 1] - u[p];
            }
            if r + 1 < side {
                out[2 * p + 1] = u[p + side] - u[p];
            }
        }
    }
    out
}

fn fd_adjoint(side: usize, w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            let p = r * side + c;
            if c + 1 < side {
                out[p] -= w[2 * p];
                out[p + 1] += w[2 * p];
            }
            if r + 1 < side {
                out[p] -= w[2 * p + 1];
                out[p + side] += w[2 * p + 1];
            }
        }
    }
    out
}

// One orthonormal Haar step on `n` samples at stride `stride` starting at `start`.
fn haar_forward_1d(buf: &mut [f64], tmp: &mut [f64], start: usize, stride: usize, n: usize) {
    let half = n / 2;
    for k in 0..half {
        let a = buf[start + 2 * k * stride];
        let b = buf[start + (2 * k + 1) * stride];
        tmp[k] = (a + b) * FRAC_1_SQRT_2;
        tmp[half + k] = (a - b) * FRAC_1_SQRT_2;
    }
    for k in 0..n {
        buf[start + k * stride] = tmp[k];
    }
}

fn haar_inverse_1d(buf: &mut [f64], tmp: &mut [f64], start: usize, stride: usize, n: usize) {
    let half = n / 2;
    for k in 0..half {
        let s = buf[start + k * stride];
        let d = buf[start + (half + k) * stride];
        tmp[2 * k] = (s + d) * FRAC_1_SQRT_2;
        tmp[2 * k + 1] = (s - d) * FRAC_1_SQRT_2;
    }
    for k in 0..n {
        buf[start + k * stride] = tmp[k];
    }
}

fn haar_analysis(buf: &mut [f64], side: usize, levels: usize) {
    let mut tmp = vec![0.0; side];
    for level in 0..levels {
        let s = side >> level;
        for r in 0..s {
            haar_forward_1d(buf, &mut tmp, r * side, 1, s);
        }
        for c in 0..s {
            haar_forward_1d(buf, &mut tmp, c, side, s);
        }
    }
}

fn haar_synthesis(buf: &mut [f64], side: usize, levels: usize) {
    let mut tmp = vec![0.0; side];
    for level in (0..levels).rev() {
        let s = side >> level;
        for c in 0..s {
            haar_inverse_1d(buf, &mut tmp, c, side, s);
        }
        for r in 0..s {
            haar_inverse_1d(buf, &mut tmp, r * side, 1, s);
        }
    }
}

fn conv_separable(side: usize, kernel: &[f64], x: &[f64], adjoint: bool) -> Vec<f64> {
    let h = (kernel.len() / 2) as isize;
    let tap = |t: usize| if adjoint { kernel[kernel.len() - 1 - t] } else { kernel[t] };
    let n = side as isize;
    // rows
    let mut mid = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            let mut acc = 0.0;
            for t in 0..kernel.len() {
                let cc = c as isize + t as isize - h;
                if cc >= 0 && cc < n {
                    acc += tap(t) * x[r * side + cc as usize];
                }
            }
            mid[r * side + c] = acc;
        }
    }
    // columns
    let mut out = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            let mut acc = 0.0;
            for t in 0..kernel.len() {
                let rr = r as isize + t as isize - h;
                if rr >= 0 && rr < n {
                    acc += tap(t) * mid[rr as usize * side + c];
                }
            }
            out[r * side + c] = acc;
        }
    }
    out
}

/// `Σ_i A_i x_i` over the given block operators.
pub fn apply_blocks(ops: &[&LinearMap], x: &BlockVector) -> Result<DVector<f64>> {
    if ops.len() != x.num_blocks() {
        return Err(Error::Dimension(format!(
            "{} operators for {} blocks",
            ops.len(),
            x.num_blocks()
        )));
    }
    let rows = ops.first().map(|a| a.rows()).unwrap_or(0);
    let mut out = DVector::zeros(rows);
    for (a, xi) in ops.iter().zip(x.blocks()) {
        if a.cols() != xi.len() || a.rows() != rows {
            return Err(Error::Dimension(format!(
                "operator {}x{} applied to block of length {}",
                a.rows(),
                a.cols(),
                xi.len()
            )));
        }
        out += a.apply(xi);
    }
    Ok(out)
}

/// Largest eigenvalue of a symmetric positive semidefinite operator by power
/// iteration from a fixed seeded start vector.
pub fn power_iteration_sym<F>(dim: usize, apply: F) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if dim == 0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut v = DVector::from_fn(dim, |_, _| rng.random::<f64>() - 0.5);
    let n0 = v.norm();
    v /= n0;
    let mut rq_prev = f64::NAN;
    for _ in 0..POWER_MAX_ITERS {
        let w = apply(&v);
        let rq = v.dot(&w);
        let wn = w.norm();
        if wn == 0.0 {
            return Ok(0.0);
        }
        if !wn.is_finite() {
            return Err(Error::numeric("power iteration produced a non-finite vector"));
        }
        if (rq - rq_prev).abs() <= POWER_TOL * rq.abs() {
            return Ok(rq.max(0.0));
        }
        rq_prev = rq;
        v = w / wn;
    }
    Err(Error::Numeric {
        msg: format!("power iteration did not converge in {POWER_MAX_ITERS} iterations"),
        estimate: Some(rq_prev.max(0.0)),
    })
}

/// Largest singular value of `map`.
pub fn spectral_norm(map: &LinearMap) -> Result<f64> {
    map.gram_norm().map(f64::sqrt)
}

/// The block lower triangular matrix `M` with diagonal `Q_i = γ_i I` and
/// subdiagonal blocks `A_iᵀA_j` (j < i).
#[derive(Debug, Clone)]
pub struct BlockTriangular<'a> {
    ops: Vec<&'a LinearMap>,
    gammas: Vec<f64>,
}

impl<'a> BlockTriangular<'a> {
    pub fn new(ops: Vec<&'a LinearMap>, gammas: Vec<f64>) -> Result<Self> {
        if ops.len() != gammas.len() {
            return Err(Error::Dimension(format!(
                "{} operators but {} diagonal scalars",
                ops.len(),
                gammas.len()
            )));
        }
        if let Some(g) = gammas.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return Err(Error::InvalidConfig(format!("diagonal scalar γ = {g} must be positive")));
        }
        Ok(Self { ops, gammas })
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn num_blocks(&self) -> usize {
        self.ops.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.ops.iter().map(|a| a.cols()).collect()
    }

    fn check(&self, x: &BlockVector) -> Result<()> {
        if !x.conforms_to(&self.dims()) {
            return Err(Error::Dimension(format!(
                "block vector with sizes {:?} does not conform to {:?}",
                x.dims(),
                self.dims()
            )));
        }
        Ok(())
    }

    /// `M x`: block i is `γ_i x_i + A_iᵀ Σ_{j<i} A_j x_j`.
    pub fn apply_m(&self, x: &BlockVector) -> Result<BlockVector> {
        self.check(x)?;
        let rows = self.ops[0].rows();
        let mut acc = DVector::zeros(rows);
        let mut out = Vec::with_capacity(self.ops.len());
        for (i, a) in self.ops.iter().enumerate() {
            let mut bi = x.block(i) * self.gammas[i];
            if i > 0 {
                bi += a.adjoint(&acc);
            }
            acc += a.apply(x.block(i));
            out.push(bi);
        }
        Ok(BlockVector::new(out))
    }

    /// `Mᵀ x`: block i is `γ_i x_i + A_iᵀ Σ_{j>i} A_j x_j`.
    pub fn apply_mt(&self, x: &BlockVector) -> Result<BlockVector> {
        self.check(x)?;
        let m = self.ops.len();
        let rows = self.ops[0].rows();
        let mut acc = DVector::zeros(rows);
        let mut out = vec![DVector::zeros(0); m];
        for i in (0..m).rev() {
            let a = self.ops[i];
            let mut bi = x.block(i) * self.gammas[i];
            if i + 1 < m {
                bi += a.adjoint(&acc);
            }
            acc += a.apply(x.block(i));
            out[i] = bi;
        }
        Ok(BlockVector::new(out))
    }

    fn scale_by_q(&self, x: &BlockVector, power: f64) -> BlockVector {
        BlockVector::new(
            x.blocks()
                .iter()
                .zip(&self.gammas)
                .map(|(b, g)| b * g.powf(power))
                .collect(),
        )
    }

    /// `P x = M Q⁻¹ Mᵀ x`.
    pub fn apply_p(&self, x: &BlockVector) -> Result<BlockVector> {
        let t = self.apply_mt(x)?;
        self.apply_m(&self.scale_by_q(&t, -1.0))
    }

    /// `‖x‖²_P = ‖Q^{-1/2} Mᵀ x‖²`.
    pub fn p_norm_sq(&self, x: &BlockVector) -> Result<f64> {
        let t = self.apply_mt(x)?;
        Ok(t
            .blocks()
            .iter()
            .zip(&self.gammas)
            .map(|(b, g)| b.norm_squared() / g)
            .sum())
    }

    /// `‖x‖²_Q = Σ γ_i ‖x_i‖²`.
    pub fn q_norm_sq(&self, x: &BlockVector) -> f64 {
        x.blocks()
            .iter()
            .zip(&self.gammas)
            .map(|(b, g)| g * b.norm_squared())
            .sum()
    }

    /// Solves `Mᵀ(y⁺ − y) = α Q (z − y)` from the last block upward and
    /// returns `y⁺`.
    pub fn back_substitute(&self, y: &BlockVector, z: &BlockVector, alpha: f64) -> Result<BlockVector> {
        self.check(y)?;
        self.check(z)?;
        let m = self.ops.len();
        let rows = self.ops[0].rows();
        let mut acc = DVector::zeros(rows);
        let mut out = vec![DVector::zeros(0); m];
        for i in (0..m).rev() {
            let a = self.ops[i];
            let g = self.gammas[i];
            let mut rhs = (z.block(i) - y.block(i)) * (alpha * g);
            if i + 1 < m {
                rhs -= a.adjoint(&acc);
            }
            let d = rhs / g;
            acc += a.apply(&d);
            out[i] = y.block(i) + d;
        }
        Ok(BlockVector::new(out))
    }

    /// `‖P‖` by power iteration.
    pub fn p_spectral_norm(&self) -> Result<f64> {
        let dims = self.dims();
        let n: usize = dims.iter().sum();
        power_iteration_sym(n, |v| {
            let bv = BlockVector::from_flat(v, &dims).expect("conforming");
            self.apply_p(&bv).expect("conforming").to_flat()
        })
    }

    /// `‖Q^{-1/2} P Q^{-1/2}‖` by power iteration.
    pub fn scaled_p_spectral_norm(&self) -> Result<f64> {
        let dims = self.dims();
        let n: usize = dims.iter().sum();
        power_iteration_sym(n, |v| {
            let bv = BlockVector::from_flat(v, &dims).expect("conforming");
            let s = self.scale_by_q(&bv, -0.5);
            let p = self.apply_p(&s).expect("conforming");
            self.scale_by_q(&p, -0.5).to_flat()
        })
    }
}

/// Free-function form of [`BlockTriangular::back_substitute`].
pub fn back_substitute(
    m: &BlockTriangular<'_>,
    y: &BlockVector,
    z: &BlockVector,
    alpha: f64,
) -> Result<BlockVector> {
    m.back_substitute(y, z, alpha)
}

/// Free-function form of [`BlockTriangular::p_norm_sq`].
pub fn p_norm_sq(m: &BlockTriangular<'_>, x: &BlockVector) -> Result<f64> {
    m.p_norm_sq(x)
}
