use nalgebra::{DMatrix, Matrix6};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::AdjointMatrix;
use crate::network::NetworkParams;
use crate::projection::ALPHA_FLOOR;
use crate::sampling::uniform_matrix6;

/// Block-structured weights `W_ij = α_ij · L_ij` for `N` neurons.
///
/// `blocks` holds the normalized blocks `L_ij = W_ij / α_ij` in row-major
/// order. After a projection every `L_ij` lies in the adjoint image; between
/// projections gradient steps leave them as general 6×6 matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredWeights {
    n: usize,
    alpha: DMatrix<f64>,
    blocks: Vec<Matrix6<f64>>,
}

impl StructuredWeights {
    pub fn new(alpha: DMatrix<f64>, blocks: Vec<Matrix6<f64>>) -> Result<Self> {
        let n = alpha.nrows();
        if n == 0 || alpha.ncols() != n {
            return Err(Error::InvalidArgument(format!(
                "alpha must be a non-empty square matrix, got {}x{}",
                alpha.nrows(),
                alpha.ncols()
            )));
        }
        if blocks.len() != n * n {
            return Err(Error::InvalidArgument(format!(
                "expected {} blocks for {n} neurons, got {}",
                n * n,
                blocks.len()
            )));
        }
        let finite = alpha.iter().chain(blocks.iter().flat_map(|b| b.iter())).all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("weights have non-finite entries".into()));
        }
        Ok(Self { n, alpha, blocks })
    }

    pub fn from_adjoint(alpha: DMatrix<f64>, blocks: &[AdjointMatrix]) -> Result<Self> {
        Self::new(alpha, blocks.iter().map(|b| *b.matrix()).collect())
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            alpha: DMatrix::zeros(n, n),
            blocks: vec![Matrix6::identity(); n * n],
        }
    }

    /// `α = 1` and every block entry from `U(-1, 1)`, so the assembled matrix
    /// is entrywise uniform.
    pub fn random_uniform<R: Rng>(n: usize, rng: &mut R) -> Self {
        Self {
            n,
            alpha: DMatrix::from_element(n, n, 1.0),
            blocks: (0..n * n).map(|_| uniform_matrix6(rng, -1.0, 1.0)).collect(),
        }
    }

    pub fn n_neurons(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        6 * self.n
    }

    pub fn alpha(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    pub fn blocks(&self) -> &[Matrix6<f64>] {
        &self.blocks
    }

    pub fn block(&self, i: usize, j: usize) -> &Matrix6<f64> {
        &self.blocks[i * self.n + j]
    }

    pub(crate) fn blocks_mut(&mut self) -> &mut [Matrix6<f64>] {
        &mut self.blocks
    }

    pub(crate) fn alpha_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.alpha
    }

    pub fn with_blocks(&self, blocks: Vec<Matrix6<f64>>) -> Self {
        assert_eq!(blocks.len(), self.n * self.n);
        Self {
            n: self.n,
            alpha: self.alpha.clone(),
            blocks,
        }
    }

    pub fn scale_blocks(&self, s: f64) -> Self {
        self.with_blocks(self.blocks.iter().map(|b| b * s).collect())
    }

    pub fn scale_alpha(&self, s: f64) -> Self {
        Self {
            n: self.n,
            alpha: &self.alpha * s,
            blocks: self.blocks.clone(),
        }
    }

    pub fn assemble(&self) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(6 * self.n, 6 * self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                let blk = self.block(i, j) * self.alpha[(i, j)];
                w.view_mut((6 * i, 6 * j), (6, 6)).copy_from(&blk);
            }
        }
        w
    }

    /// Maximum absolute column sum of the assembled matrix.
    pub fn norm1(&self) -> f64 {
        norm1(&self.assemble())
    }

    /// Maximum absolute row sum of the assembled matrix.
    pub fn norm_inf(&self) -> f64 {
        norm_inf(&self.assemble())
    }
}

pub fn norm1(w: &DMatrix<f64>) -> f64 {
    w.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn norm_inf(w: &DMatrix<f64>) -> f64 {
    w.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Places `α_ij · L_ij` at rows `6i..6i+6`, columns `6j..6j+6`.
pub fn assemble(alpha: &DMatrix<f64>, blocks: &[Matrix6<f64>]) -> Result<DMatrix<f64>> {
    Ok(StructuredWeights::new(alpha.clone(), blocks.to_vec())?.assemble())
}

/// Inverse of [`assemble`] for known strengths: `L_ij = W_ij / α_ij`.
pub fn disassemble(w: &DMatrix<f64>, alpha: &DMatrix<f64>) -> Result<Vec<Matrix6<f64>>> {
    let n = alpha.nrows();
    if alpha.ncols() != n || w.nrows() != 6 * n || w.ncols() != 6 * n {
        return Err(Error::InvalidArgument(format!(
            "weight matrix {}x{} does not match {n} neurons",
            w.nrows(),
            w.ncols()
        )));
    }
    let mut blocks = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let a = alpha[(i, j)];
            if a.abs() < ALPHA_FLOOR {
                return Err(Error::InvalidArgument(format!(
                    "strength alpha[{i},{j}] = {a:e} is below the floor"
                )));
            }
            let blk: Matrix6<f64> = w.fixed_view::<6, 6>(6 * i, 6 * j).into_owned();
            blocks.push(blk / a);
        }
    }
    Ok(blocks)
}

/// Margin applied when scaling onto the norm bound.
pub const NORM_MARGIN: f64 = 1e-6;

/// Uniformly rescales the strengths so that both `‖W‖₁` and `‖W‖_∞` sit just
/// below `γ/μ`. Blocks are left untouched.
pub fn normalize(w: &StructuredWeights, params: &NetworkParams) -> StructuredWeights {
    let assembled = w.assemble();
    let largest = norm1(&assembled).max(norm_inf(&assembled));
    if largest == 0.0 {
        return w.clone();
    }
    let bound = params.gamma / params.mu;
    w.scale_alpha(bound / (largest * (1.0 + NORM_MARGIN)))
}

/// Column-sum normalization `W ← (γ/μ) W / (ε + ‖W‖₁)` with `ε = 1e-12`.
/// Only `‖W‖₁ < γ/μ` is guaranteed.
pub fn normalize_l1(w: &StructuredWeights, params: &NetworkParams) -> StructuredWeights {
    const EPS: f64 = 1e-12;
    let n1 = w.norm1();
    let bound = params.gamma / params.mu;
    w.scale_alpha(bound / (EPS + n1 * (1.0 + NORM_MARGIN)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    /// Every weighted column sum `Σ_i L_i |w_ij|` is below `γ/μ`.
    pub column_ok: bool,
    /// Every `Σ_i (|w_ji| + |w_ij|)` is below `2γ/μ`.
    pub symmetric_ok: bool,
    pub norm1: f64,
    pub norm_inf: f64,
    /// `γ/μ − max column sum`; positive when the column condition holds.
    pub column_margin: f64,
    /// `2γ/μ − max(row + column sum)`; positive when the symmetric condition holds.
    pub symmetric_margin: f64,
}

/// Sufficient conditions for a unique, asymptotically stable equilibrium,
/// with unit Lipschitz constants.
pub fn stability_check(w: &StructuredWeights, params: &NetworkParams) -> StabilityReport {
    stability_check_matrix(&w.assemble(), params)
}

pub fn stability_check_matrix(w: &DMatrix<f64>, params: &NetworkParams) -> StabilityReport {
    let bound = params.gamma / params.mu;
    let cols: Vec<f64> = w.column_iter().map(|c| c.iter().map(|x| x.abs()).sum()).collect();
    let rows: Vec<f64> = w.row_iter().map(|r| r.iter().map(|x| x.abs()).sum()).collect();
    let max_col = cols.iter().copied().fold(0.0, f64::max);
    let max_row = rows.iter().copied().fold(0.0, f64::max);
    let max_sym = cols.iter().zip(&rows).map(|(c, r)| c + r).fold(0.0, f64::max);
    StabilityReport {
        column_ok: max_col < bound,
        symmetric_ok: max_sym < 2.0 * bound,
        norm1: max_col,
        norm_inf: max_row,
        column_margin: bound - max_col,
        symmetric_margin: 2.0 * bound - max_sym,
    }
}
