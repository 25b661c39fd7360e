//! Metric projections onto SO(3) and, block-wise, onto the adjoint image
//! `L[Ad_SE(3)]`.

use nalgebra::{Matrix3, Matrix6, Vector3};

use crate::geometry::{skew, AdjointMatrix, Rotation};
use crate::network::StructuredWeights;

/// Singular value decomposition `m = U diag(σ) Vᵀ` of a 3×3 matrix with
/// `σ₁ ≥ σ₂ ≥ σ₃ ≥ 0` and `U`, `V` orthogonal.
#[derive(Debug, Clone, Copy)]
pub struct Svd3 {
    pub u: Matrix3<f64>,
    pub sigma: Vector3<f64>,
    pub v: Matrix3<f64>,
}

/// One-sided Jacobi SVD: rotates column pairs of `m` until they are mutually
/// orthogonal, accumulating the rotations in `V`.
pub fn svd3(m: &Matrix3<f64>) -> Svd3 {
    let mut a = *m;
    let mut v = Matrix3::<f64>::identity();
    for _sweep in 0..60 {
        let mut rotated = false;
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let alpha = a.column(p).norm_squared();
            let beta = a.column(q).norm_squared();
            let gamma = a.column(p).dot(&a.column(q));
            if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = c * t;
            for mat in [&mut a, &mut v] {
                for r in 0..3 {
                    let (xp, xq) = (mat[(r, p)], mat[(r, q)]);
                    mat[(r, p)] = c * xp - s * xq;
                    mat[(r, q)] = s * xp + c * xq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order = [0usize, 1, 2];
    let norms = [a.column(0).norm(), a.column(1).norm(), a.column(2).norm()];
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let sigma = Vector3::new(norms[order[0]], norms[order[1]], norms[order[2]]);
    let mut u = Matrix3::zeros();
    let mut vs = Matrix3::zeros();
    for (k, &src) in order.iter().enumerate() {
        vs.set_column(k, &v.column(src));
        u.set_column(k, &a.column(src));
    }

    // Normalize the left vectors; rank-deficient directions are completed to
    // an orthonormal basis.
    let tiny = sigma[0] * 1e-14;
    let mut rank = 0;
    for k in 0..3 {
        if sigma[k] > tiny && sigma[k] > 0.0 {
            let col = u.column(k) / sigma[k];
            u.set_column(k, &col);
            rank += 1;
        }
    }
    if rank < 3 {
        complete_basis(&mut u, rank);
    }
    Svd3 { u, sigma, v: vs }
}

fn complete_basis(u: &mut Matrix3<f64>, rank: usize) {
    let mut basis: Vec<Vector3<f64>> = (0..rank).map(|k| u.column(k).into()).collect();
    for axis in [Vector3::x(), Vector3::y(), Vector3::z()] {
        if basis.len() == 3 {
            break;
        }
        let mut w = axis;
        for b in &basis {
            w -= b * b.dot(&w);
        }
        let n = w.norm();
        if n > 1e-6 {
            basis.push(w / n);
        }
    }
    for (k, b) in basis.iter().enumerate().skip(rank) {
        u.set_column(k, b);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct So3Projection {
    pub rotation: Rotation,
    /// The Frobenius minimizer is not unique (`σ₂ + det(UVᵀ)·σ₃ = 0`); the
    /// returned rotation is one of several equidistant minimizers.
    pub degenerate: bool,
    pub svd: Svd3,
}

/// Frobenius-nearest rotation: `U diag(1, 1, det(UVᵀ)) Vᵀ`.
pub fn project_so3(pi: &Matrix3<f64>) -> So3Projection {
    let svd = svd3(pi);
    let d = (svd.u * svd.v.transpose()).determinant().signum();
    let r = svd.u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * svd.v.transpose();
    let scale = svd.sigma[0].max(f64::MIN_POSITIVE);
    let degenerate = svd.sigma[1] + d * svd.sigma[2] <= 1e-12 * scale;
    So3Projection {
        rotation: Rotation::from_matrix_unchecked(r),
        degenerate,
        svd,
    }
}

/// A general 6×6 matrix read as blocks `[[A, B], [C, D]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawBlock6(pub Matrix6<f64>);

impl RawBlock6 {
    pub fn a(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into()
    }
    pub fn b(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 3).into()
    }
    pub fn c(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(3, 0).into()
    }
    pub fn d(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(3, 3).into()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdjointProjection {
    pub matrix: AdjointMatrix,
    pub degenerate: bool,
}

/// Block-wise projection onto the adjoint image:
/// `R = Proj_SO3((A + D)/2)`, `[t]^ = (C Rᵀ − R Cᵀ)/2`, `B ↦ 0`.
pub fn project_adjoint(theta: &RawBlock6) -> AdjointProjection {
    let so3 = project_so3(&((theta.a() + theta.d()) * 0.5));
    let r = *so3.rotation.matrix();
    let c = theta.c();
    let t_hat = (c * r.transpose() - r * c.transpose()) * 0.5;
    // Rebuild the skew part from its parameters so the result is exactly skew.
    let t = Vector3::new(t_hat[(2, 1)], t_hat[(0, 2)], t_hat[(1, 0)]);
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&(skew(&t) * r));
    AdjointProjection {
        matrix: AdjointMatrix::from_matrix_unchecked(m),
        degenerate: so3.degenerate,
    }
}

/// Frobenius distance from `m` to its block-wise projection.
pub fn block_deviation(m: &Matrix6<f64>) -> f64 {
    (m - project_adjoint(&RawBlock6(*m)).matrix.matrix()).norm()
}

/// Smallest `|α_ij|` for which the per-block division is carried out.
pub const ALPHA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ProjectedWeights {
    pub weights: StructuredWeights,
    pub degenerate_blocks: Vec<(usize, usize)>,
    pub warnings: Vec<String>,
}

enum BlockOutcome {
    Projected(Matrix6<f64>, bool),
    Floored,
}

fn project_block(alpha: f64, block: &Matrix6<f64>) -> BlockOutcome {
    if alpha.abs() < ALPHA_FLOOR {
        return BlockOutcome::Floored;
    }
    let p = project_adjoint(&RawBlock6(*block));
    BlockOutcome::Projected(*p.matrix.matrix(), p.degenerate)
}

fn collect(w: &StructuredWeights, outcomes: Vec<BlockOutcome>) -> ProjectedWeights {
    let n = w.n_neurons();
    let mut blocks = Vec::with_capacity(n * n);
    let mut degenerate_blocks = Vec::new();
    let mut warnings = Vec::new();
    for (k, outcome) in outcomes.into_iter().enumerate() {
        let (i, j) = (k / n, k % n);
        match outcome {
            BlockOutcome::Projected(m, degenerate) => {
                if degenerate {
                    degenerate_blocks.push((i, j));
                }
                blocks.push(m);
            }
            BlockOutcome::Floored => {
                warnings.push(format!(
                    "block ({i}, {j}): |alpha| = {:e} below floor, replaced by alpha * I6",
                    w.alpha()[(i, j)].abs()
                ));
                blocks.push(Matrix6::identity());
            }
        }
    }
    for msg in &warnings {
        log::warn!("{msg}");
    }
    ProjectedWeights {
        weights: w.with_blocks(blocks),
        degenerate_blocks,
        warnings,
    }
}

/// Replaces every block `W_ij / α_ij` by its projection onto the adjoint
/// image, keeping `α` unchanged.
pub fn project_weights(w: &StructuredWeights) -> ProjectedWeights {
    let n = w.n_neurons();
    let outcomes = (0..n * n)
        .map(|k| project_block(w.alpha()[(k / n, k % n)], &w.blocks()[k]))
        .collect();
    collect(w, outcomes)
}

/// Same result as [`project_weights`], with blocks projected on the rayon
/// pool. Falls back to the sequential path without the `parallel` feature.
pub fn par_project_weights(w: &StructuredWeights) -> ProjectedWeights {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let n = w.n_neurons();
        let outcomes = (0..n * n)
            .into_par_iter()
            .map(|k| project_block(w.alpha()[(k / n, k % n)], &w.blocks()[k]))
            .collect();
        collect(w, outcomes)
    }
    #[cfg(not(feature = "parallel"))]
    {
        project_weights(w)
    }
}

/// Largest block deviation of the weights from the adjoint image.
pub fn max_block_deviation(w: &StructuredWeights) -> f64 {
    w.blocks().iter().map(block_deviation).fold(0.0, f64::max)
}
