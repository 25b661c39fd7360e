//! SE(3) / se(3) kernel.
//!
//! Twists are parameterized in `[ω v]` order: the first three coordinates are
//! the rotational generator and the last three the translational one. Every
//! 6×6 matrix in this crate (adjoint representations, weight blocks) acts on
//! vectors in that order.
//!
//! The induced representation of a pose `g = (R, t)` is
//!
//! ```text
//! L[Ad_g] = | R       0 |
//!           | [t]^ R  R |
//! ```
//!
//! and satisfies `P(g X g⁻¹) = L[Ad_g] P(X)`.

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::projection;

pub type Vec3 = Vector3<f64>;

/// Orthogonality tolerance `‖RᵀR − I‖_F` for rotation membership.
pub const TOL_ORTH: f64 = 1e-9;
/// Determinant tolerance `|det R − 1|` for rotation membership.
pub const TOL_DET: f64 = 1e-9;
/// Skewness tolerance for the `C·Aᵀ` block of an adjoint matrix.
pub const TOL_SKEW: f64 = 1e-9;
/// Below this angle the Rodrigues and left-Jacobian coefficients switch to
/// their Taylor expansions.
pub const THETA_SWITCH: f64 = 1e-4;

#[inline]
pub(crate) fn skew(t: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

fn require_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} has non-finite entries")))
    }
}

/// A 3×3 skew-symmetric matrix, stored by its three parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewMatrix(Vec3);

impl SkewMatrix {
    pub fn matrix(&self) -> Matrix3<f64> {
        skew(&self.0)
    }
}

/// `[t]^`, with `[t]^ v = t × v`.
pub fn hat(t: &Vec3) -> Result<SkewMatrix> {
    require_finite("hat argument", t.as_slice())?;
    Ok(SkewMatrix(*t))
}

pub fn vee(s: &SkewMatrix) -> Vec3 {
    s.0
}

/// `‖RᵀR − I‖_F` and `|det R − 1|`.
pub fn rotation_residuals(m: &Matrix3<f64>) -> (f64, f64) {
    let orth = (m.transpose() * m - Matrix3::identity()).norm();
    let det = (m.determinant() - 1.0).abs();
    (orth, det)
}

/// An element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates orthogonality and unit determinant within the crate
    /// tolerances.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        require_finite("rotation", m.as_slice())?;
        let (orth, det) = rotation_residuals(&m);
        if orth > TOL_ORTH || det > TOL_DET {
            return Err(Error::InvalidArgument(format!(
                "not a rotation: ‖RᵀR − I‖_F = {orth:e}, |det − 1| = {det:e}"
            )));
        }
        Ok(Self(m))
    }

    /// Caller guarantees membership (exact formula or projection output).
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn residuals(&self) -> (f64, f64) {
        rotation_residuals(&self.0)
    }
}

/// An se(3) element: rotational generator `omega`, translational `v`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub omega: Vec3,
    pub v: Vec3,
}

impl Twist {
    pub fn new(omega: Vec3, v: Vec3) -> Self {
        Self { omega, v }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// `[[ω^, v], [0, 0]]`.
    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&self.omega));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.v);
        m
    }

    /// Reads a 4×4 matrix of se(3) form; the skew part is taken from the
    /// lower triangle.
    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        Self {
            omega: Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)]),
            v: Vec3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]),
        }
    }

    /// Lie bracket `[X, Y] = XY − YX`.
    pub fn bracket(&self, other: &Twist) -> Twist {
        Twist {
            omega: self.omega.cross(&other.omega),
            v: self.omega.cross(&other.v) - other.omega.cross(&self.v),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.omega.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }
}

pub fn parameterize(x: &Twist) -> Vector6<f64> {
    Vector6::new(x.omega.x, x.omega.y, x.omega.z, x.v.x, x.v.y, x.v.z)
}

pub fn unparameterize(xi: &Vector6<f64>) -> Twist {
    Twist {
        omega: Vec3::new(xi[0], xi[1], xi[2]),
        v: Vec3::new(xi[3], xi[4], xi[5]),
    }
}

/// An element of SE(3), homogeneous form `[[R, p], [0, 1]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    r: Rotation,
    p: Vec3,
}

impl Pose {
    pub fn new(r: Rotation, p: Vec3) -> Self {
        Self { r, p }
    }

    pub fn identity() -> Self {
        Self {
            r: Rotation::identity(),
            p: Vec3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Rotation {
        &self.r
    }

    pub fn translation(&self) -> &Vec3 {
        &self.p
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.r.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.p);
        m
    }
}

/// Group product `g1 · g2`. The rotation is re-projected onto SO(3) when the
/// product has drifted beyond `TOL_ORTH`.
pub fn compose(g1: &Pose, g2: &Pose) -> Pose {
    let mut r = g1.r.matrix() * g2.r.matrix();
    if rotation_residuals(&r).0 > TOL_ORTH {
        r = *projection::project_so3(&r).rotation.matrix();
    }
    Pose {
        r: Rotation::from_matrix_unchecked(r),
        p: g1.r.matrix() * g2.p + g1.p,
    }
}

pub fn inverse(g: &Pose) -> Pose {
    let rt = g.r.transpose();
    Pose {
        p: -(rt.matrix() * g.p),
        r: rt,
    }
}

/// Rodrigues' formula.
pub fn exp_so3(omega: &Vec3) -> Rotation {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < THETA_SWITCH {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = skew(omega);
    Rotation::from_matrix_unchecked(Matrix3::identity() + k * a + k * k * b)
}

/// Left Jacobian of SO(3),
/// `J(ω) = I + (1 − cos θ)/θ² ω^ + (θ − sin θ)/θ³ (ω^)²`.
pub fn left_jacobian(omega: &Vec3) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(omega);
    if theta < THETA_SWITCH {
        Matrix3::identity() + k * 0.5 + k * k / 6.0
    } else {
        let a = (1.0 - theta.cos()) / theta2;
        let b = (theta - theta.sin()) / (theta2 * theta);
        Matrix3::identity() + k * a + k * k * b
    }
}

/// Exponential retraction se(3) → SE(3): `R = Exp(ω^)`, `p = J(ω) v`.
pub fn exp_se3(xi: &Twist) -> Pose {
    Pose {
        r: exp_so3(&xi.omega),
        p: left_jacobian(&xi.omega) * xi.v,
    }
}

/// `Ad_g(X) = g X g⁻¹`, evaluated in closed form as `(Rω, [t]^ R ω + R v)`.
pub fn adjoint(g: &Pose, x: &Twist) -> Twist {
    let r = g.r.matrix();
    let r_omega = r * x.omega;
    Twist {
        omega: r_omega,
        v: g.p.cross(&r_omega) + r * x.v,
    }
}

/// A 6×6 matrix in the image of the adjoint representation of SE(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjointMatrix(Matrix6<f64>);

impl AdjointMatrix {
    pub fn identity() -> Self {
        Self(Matrix6::identity())
    }

    /// Validates the block invariants: `B = 0`, `A = D`, `A ∈ SO(3)`, and
    /// `C Aᵀ` skew-symmetric.
    pub fn from_matrix(m: Matrix6<f64>) -> Result<Self> {
        let v = membership_violation(&m);
        if !(v <= TOL_ORTH.max(TOL_SKEW)) {
            return Err(Error::InvalidArgument(format!(
                "matrix is not in the adjoint image (violation {v:e})"
            )));
        }
        Ok(Self(m))
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix6<f64>) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.0
    }

    /// Recovers the pose `(R, t)` with `L[Ad_(R,t)] = self`.
    pub fn to_pose(&self) -> Pose {
        let r: Matrix3<f64> = self.0.fixed_view::<3, 3>(0, 0).into();
        let c: Matrix3<f64> = self.0.fixed_view::<3, 3>(3, 0).into();
        let t_hat = c * r.transpose();
        let t = Vec3::new(
            0.5 * (t_hat[(2, 1)] - t_hat[(1, 2)]),
            0.5 * (t_hat[(0, 2)] - t_hat[(2, 0)]),
            0.5 * (t_hat[(1, 0)] - t_hat[(0, 1)]),
        );
        Pose::new(Rotation::from_matrix_unchecked(r), t)
    }

    pub fn apply(&self, x: &Twist) -> Twist {
        unparameterize(&(self.0 * parameterize(x)))
    }
}

/// Largest residual among the adjoint-image block invariants. Zero for exact
/// members; NaN propagates for non-finite input.
pub fn membership_violation(m: &Matrix6<f64>) -> f64 {
    let a: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
    let b: Matrix3<f64> = m.fixed_view::<3, 3>(0, 3).into();
    let c: Matrix3<f64> = m.fixed_view::<3, 3>(3, 0).into();
    let d: Matrix3<f64> = m.fixed_view::<3, 3>(3, 3).into();
    let (orth, det) = rotation_residuals(&a);
    let cat = c * a.transpose();
    let skew_err = (cat + cat.transpose()).norm();
    [b.norm(), (a - d).norm(), orth, det, skew_err]
        .into_iter()
        .fold(0.0, f64::max)
}

/// Induced linear representation `L[Ad_g]`.
pub fn linear_rep(g: &Pose) -> AdjointMatrix {
    let r = g.r.matrix();
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&(skew(&g.p) * r));
    AdjointMatrix(m)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::sampling::{random_pose, random_twist, rng};
    use std::f64::consts::PI;

    /// Truncated power series of the matrix exponential.
    pub(crate) fn series_expm4(a: &Matrix4<f64>, terms: usize) -> Matrix4<f64> {
        let mut sum = Matrix4::identity();
        let mut term = Matrix4::identity();
        for k in 1..terms {
            term = term * a / k as f64;
            sum += term;
        }
        sum
    }

    fn series_expm3(a: &Matrix3<f64>, terms: usize) -> Matrix3<f64> {
        let mut sum = Matrix3::identity();
        let mut term = Matrix3::identity();
        for k in 1..terms {
            term = term * a / k as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn hat_examples() {
        let s = hat(&Vec3::new(1.0, 2.0, 3.0)).unwrap().matrix();
        assert_eq!(s, Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0));
        assert_eq!(hat(&Vec3::zeros()).unwrap().matrix(), Matrix3::zeros());
        let e = hat(&Vec3::x()).unwrap().matrix() * Vec3::y();
        assert_eq!(e, Vec3::z());
        assert!(hat(&Vec3::new(f64::NAN, 0.0, 0.0)).is_err());
        assert!(hat(&Vec3::new(0.0, f64::INFINITY, 0.0)).is_err());
    }

    #[test]
    fn vee_inverts_hat() {
        assert_eq!(vee(&hat(&Vec3::new(1.0, 2.0, 3.0)).unwrap()), Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(vee(&hat(&Vec3::zeros()).unwrap()), Vec3::zeros());
        let mut rng = rng(1);
        for _ in 0..100 {
            let t = random_twist(&mut rng, 5.0).omega;
            let s = hat(&t).unwrap();
            assert_eq!(vee(&s), t);
            assert!((s.matrix() + s.matrix().transpose()).iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn exp_so3_examples() {
        assert_eq!(*exp_so3(&Vec3::zeros()).matrix(), Matrix3::identity());
        let full = exp_so3(&Vec3::new(0.0, 0.0, 2.0 * PI));
        assert!((full.matrix() - Matrix3::identity()).norm() < 1e-12);
        let quarter = exp_so3(&Vec3::new(0.0, 0.0, PI / 2.0));
        let oracle = series_expm3(&skew(&Vec3::new(0.0, 0.0, PI / 2.0)), 30);
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((oracle - expected).norm() < 1e-12);
        assert!((quarter.matrix() - expected).norm() < 1e-12);
    }

    #[test]
    fn exp_so3_stays_on_group() {
        let mut rng = rng(2);
        for _ in 0..200 {
            let w = random_twist(&mut rng, 10.0 / 3f64.sqrt()).omega;
            let (orth, det) = exp_so3(&w).residuals();
            assert!(orth <= TOL_ORTH && det <= TOL_DET);
        }
    }

    #[test]
    fn left_jacobian_small_angle() {
        assert_eq!(left_jacobian(&Vec3::zeros()), Matrix3::identity());
        let w = Vec3::new(1e-6, 0.0, 0.0);
        let j = left_jacobian(&w);
        assert!((j - (Matrix3::identity() + skew(&w) * 0.5)).norm() <= 1e-12);
    }

    #[test]
    fn left_jacobian_continuous_across_switch() {
        let dir = Vec3::new(0.3, -0.5, 0.8).normalize();
        let below = left_jacobian(&(dir * (THETA_SWITCH * (1.0 - 1e-9))));
        let above = left_jacobian(&(dir * (THETA_SWITCH * (1.0 + 1e-9))));
        assert!((below - above).norm() <= 1e-10);
        let rb = exp_so3(&(dir * (THETA_SWITCH * (1.0 - 1e-9))));
        let ra = exp_so3(&(dir * (THETA_SWITCH * (1.0 + 1e-9))));
        assert!((rb.matrix() - ra.matrix()).norm() <= 1e-10);
    }

    #[test]
    fn left_jacobian_is_translation_derivative_of_series_exp() {
        // exp of [[ω^, v],[0,0]] is linear in v for fixed ω, so the top-right
        // column of the series exponential at v = e_k is J e_k.
        let mut rng = rng(3);
        for _ in 0..50 {
            let w = random_twist(&mut rng, 2.0).omega;
            let j = left_jacobian(&w);
            for k in 0..3 {
                let mut e = Vec3::zeros();
                e[k] = 1.0;
                let m = series_expm4(&Twist::new(w, e).to_matrix(), 40);
                let col = Vec3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
                assert!((col - j.column(k)).norm() <= 1e-9);
            }
        }
    }

    #[test]
    fn exp_se3_examples() {
        assert_eq!(exp_se3(&Twist::zero()), Pose::identity());
        let g = exp_se3(&Twist::new(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0)));
        assert_eq!(*g.rotation().matrix(), Matrix3::identity());
        assert_eq!(*g.translation(), Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn exp_se3_matches_series() {
        let mut rng = rng(4);
        for _ in 0..100 {
            let x = random_twist(&mut rng, 1.5);
            let g = exp_se3(&x);
            let oracle = series_expm4(&x.to_matrix(), 30);
            assert!((g.to_homogeneous() - oracle).amax() <= 1e-9);
        }
    }

    #[test]
    fn adjoint_identity_and_intertwining() {
        let mut rng = rng(5);
        let x = random_twist(&mut rng, 1.0);
        assert_eq!(adjoint(&Pose::identity(), &x), x);
        for _ in 0..100 {
            let g = random_pose(&mut rng);
            let x = random_twist(&mut rng, 1.0);
            let lhs = parameterize(&adjoint(&g, &x));
            let rhs = linear_rep(&g).matrix() * parameterize(&x);
            assert!((lhs - rhs).amax() <= 1e-12);
            // matrix-form definition g X g⁻¹
            let h = g.to_homogeneous();
            let conj = h * x.to_matrix() * inverse(&g).to_homogeneous();
            assert!((Twist::from_matrix(&conj).v - adjoint(&g, &x).v).amax() <= 1e-12);
        }
    }

    #[test]
    fn adjoint_preserves_bracket() {
        let mut rng = rng(6);
        for _ in 0..100 {
            let g = random_pose(&mut rng);
            let x = random_twist(&mut rng, 1.0);
            let y = random_twist(&mut rng, 1.0);
            let xy = x.to_matrix() * y.to_matrix() - y.to_matrix() * x.to_matrix();
            assert!((Twist::from_matrix(&xy).v - x.bracket(&y).v).amax() <= 1e-14);
            let lhs = parameterize(&adjoint(&g, &x.bracket(&y)));
            let rhs = parameterize(&adjoint(&g, &x).bracket(&adjoint(&g, &y)));
            assert!((lhs - rhs).amax() <= 1e-12);
        }
    }

    #[test]
    fn linear_rep_examples() {
        assert_eq!(*linear_rep(&Pose::identity()).matrix(), Matrix6::identity());
        let mut rng = rng(7);
        let g = random_pose(&mut rng);
        let m = linear_rep(&g);
        let c: Matrix3<f64> = m.matrix().fixed_view::<3, 3>(3, 0).into();
        assert_eq!(c, skew(g.translation()) * g.rotation().matrix());
        assert!(membership_violation(m.matrix()) <= 1e-12);
        let back = m.to_pose();
        assert!((back.translation() - g.translation()).amax() < 1e-12);
    }

    #[test]
    fn linear_rep_is_homomorphism() {
        let mut rng = rng(8);
        for _ in 0..100 {
            let g1 = random_pose(&mut rng);
            let g2 = random_pose(&mut rng);
            let lhs = linear_rep(&compose(&g1, &g2));
            let rhs = linear_rep(&g1).matrix() * linear_rep(&g2).matrix();
            assert!((lhs.matrix() - rhs).amax() <= 1e-11);
            let inv = linear_rep(&g1).matrix().try_inverse().unwrap();
            assert!((inv - linear_rep(&inverse(&g1)).matrix()).amax() <= 1e-10);
        }
    }

    #[test]
    fn hat_conjugation_identity() {
        let mut rng = rng(9);
        for _ in 0..100 {
            let r = *random_pose(&mut rng).rotation().matrix();
            let u = random_twist(&mut rng, 2.0).omega;
            assert!((skew(&(r * u)) - r * skew(&u) * r.transpose()).amax() <= 1e-12);
        }
    }

    #[test]
    fn parameterize_ordering() {
        let x = Twist::new(Vec3::x(), Vec3::new(0.0, 0.0, 2.0));
        assert_eq!(parameterize(&x), Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 2.0));
        assert_eq!(parameterize(&Twist::zero()), Vector6::zeros());
    }

    #[test]
    fn compose_and_inverse() {
        let mut rng = rng(10);
        let g = random_pose(&mut rng);
        assert_eq!(compose(&Pose::identity(), &g), g);
        let inv = inverse(&g);
        assert_eq!(*inv.rotation().matrix(), g.rotation().matrix().transpose());
        assert_eq!(*inv.translation(), -(g.rotation().matrix().transpose() * g.translation()));
        let e = compose(&g, &inv);
        assert!((e.to_homogeneous() - Matrix4::identity()).amax() <= 1e-12);
        for _ in 0..100 {
            let (a, b, c) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
            let l = compose(&compose(&a, &b), &c).to_homogeneous();
            let r = compose(&a, &compose(&b, &c)).to_homogeneous();
            assert!((l - r).amax() <= 1e-12);
        }
    }

    #[test]
    fn compose_reprojects_drifted_rotation() {
        let bad = Rotation::from_matrix_unchecked(Matrix3::identity() * (1.0 + 1e-6));
        let g = compose(&Pose::new(bad, Vec3::zeros()), &Pose::identity());
        let (orth, det) = g.rotation().residuals();
        assert!(orth <= TOL_ORTH && det <= TOL_DET);
    }

    #[test]
    fn rejects_invalid_members() {
        assert!(Rotation::from_matrix(Matrix3::identity() * 2.0).is_err());
        assert!(Rotation::from_matrix(Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0))).is_err());
        let mut m = Matrix6::identity();
        m[(0, 4)] = 0.1;
        assert!(AdjointMatrix::from_matrix(m).is_err());
        assert!(AdjointMatrix::from_matrix(Matrix6::identity()).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn finite() -> impl Strategy<Value = f64> {
            -1e6..1e6f64
        }

        proptest! {
            #[test]
            fn hat_vee_bit_exact(x in finite(), y in finite(), z in finite()) {
                let t = Vec3::new(x, y, z);
                prop_assert_eq!(vee(&hat(&t).unwrap()), t);
            }

            #[test]
            fn parameterize_round_trip(v in proptest::array::uniform6(finite())) {
                let xi = Vector6::from_row_slice(&v);
                prop_assert_eq!(parameterize(&unparameterize(&xi)), xi);
            }
        }
    }
}
