//! The separable problem `min Σ f_i(x_i) + h_i(x_i)  s.t.  Σ A_i x_i = b`.

use nalgebra::DVector;

use crate::blockspace::{apply_blocks, BlockVector, LinearMap};
use crate::error::{Error, Result};
use crate::proxlib::{ProxTerm, SmoothTerm};

/// One block `(f_i, h_i, A_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub smooth: SmoothTerm,
    pub prox: ProxTerm,
    pub op: LinearMap,
}

impl Block {
    pub fn new(smooth: SmoothTerm, prox: ProxTerm, op: LinearMap) -> Self {
        Self { smooth, prox, op }
    }

    pub fn dim(&self) -> usize {
        self.op.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    blocks: Vec<Block>,
    rhs: DVector<f64>,
}

impl ProblemSpec {
    pub fn new(blocks: Vec<Block>, rhs: DVector<f64>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Dimension("problem has no blocks".into()));
        }
        for (i, b) in blocks.iter().enumerate() {
            if b.op.rows() != rhs.len() {
                return Err(Error::Dimension(format!(
                    "block {i}: A_i has {} rows, b has length {}",
                    b.op.rows(),
                    rhs.len()
                )));
            }
            if let Some(d) = b.smooth.dim() {
                if d != b.op.cols() {
                    return Err(Error::Dimension(format!(
                        "block {i}: f_i acts on dimension {d}, A_i has {} columns",
                        b.op.cols()
                    )));
                }
            }
        }
        Ok(Self { blocks, rhs })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &Block {
        &self.blocks[i]
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(Block::dim).collect()
    }

    /// Number of coupling constraints `N`.
    pub fn rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    pub fn ops(&self) -> Vec<&LinearMap> {
        self.blocks.iter().map(|b| &b.op).collect()
    }

    pub fn apply_a(&self, x: &BlockVector) -> Result<DVector<f64>> {
        apply_blocks(&self.ops(), x)
    }

    /// `Ax − b`
    pub fn residual(&self, x: &BlockVector) -> Result<DVector<f64>> {
        Ok(self.apply_a(x)? - &self.rhs)
    }

    /// `Aᵀw` split into blocks.
    pub fn adjoint_a(&self, w: &DVector<f64>) -> BlockVector {
        BlockVector::new(self.blocks.iter().map(|b| b.op.adjoint(w)).collect())
    }

    /// `Φ(x) = Σ f_i(x_i) + h_i(x_i)`
    pub fn objective(&self, x: &BlockVector) -> f64 {
        self.blocks
            .iter()
            .zip(x.blocks())
            .map(|(b, xi)| b.smooth.eval(xi) + b.prox.eval(xi))
            .sum()
    }

    /// `L(x, λ) = Φ(x) + ⟨λ, Ax − b⟩`
    pub fn lagrangian(&self, x: &BlockVector, lambda: &DVector<f64>) -> Result<f64> {
        Ok(self.objective(x) + lambda.dot(&self.residual(x)?))
    }

    /// `μ = min_i (μ_{f,i} + 3 μ_{h,i})`.
    pub fn strong_modulus(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.smooth.modulus + 3.0 * b.prox.modulus)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn check_point(&self, x: &BlockVector) -> Result<()> {
        if x.conforms_to(&self.dims()) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "point with block sizes {:?} does not conform to {:?}",
                x.dims(),
                self.dims()
            )))
        }
    }

    pub fn check_dual(&self, lambda: &DVector<f64>) -> Result<()> {
        if lambda.len() == self.rows() {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "multiplier has length {}, expected {}",
                lambda.len(),
                self.rows()
            )))
        }
    }
}
