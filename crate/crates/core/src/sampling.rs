//! Seeded random sources. Every random quantity in the crate is drawn from a
//! `ChaCha8Rng`, whose stream is stable across platforms and releases.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{exp_so3, Pose, Rotation, Twist, Vec3};

pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec3<R: Rng>(rng: &mut R, half_width: f64) -> Vec3 {
    Vec3::from_fn(|_, _| rng.random_range(-half_width..half_width))
}

/// Twist with every coordinate drawn from `U(-half_width, half_width)`.
pub fn random_twist<R: Rng>(rng: &mut R, half_width: f64) -> Twist {
    Twist::new(uniform_vec3(rng, half_width), uniform_vec3(rng, half_width))
}

/// Haar-uniform rotation from a uniformly sampled unit quaternion.
pub fn random_rotation<R: Rng>(rng: &mut R) -> Rotation {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
        b * (tau * u3).cos(),
    );
    let m = Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    );
    Rotation::from_matrix_unchecked(m)
}

/// Pose with a rotation from `exp_so3` of a `U(-π, π)³` vector and a
/// `U(-1, 1)³` translation.
pub fn random_pose<R: Rng>(rng: &mut R) -> Pose {
    let omega = uniform_vec3(rng, std::f64::consts::PI);
    Pose::new(exp_so3(&omega), uniform_vec3(rng, 1.0))
}

pub fn uniform_dvector<R: Rng>(rng: &mut R, len: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(lo..hi))
}

pub fn uniform_dmatrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn uniform_matrix6<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> Matrix6<f64> {
    Matrix6::from_fn(|_, _| rng.random_range(lo..hi))
}
