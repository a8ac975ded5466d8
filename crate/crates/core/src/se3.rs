//! Closed-form SO(3)/SE(3) exponential-map kernels.
//!
//! Conventions used throughout the crate:
//!
//! * Matrices are indexed `m[(row, col)]` and act on column vectors, so a
//!   point transforms as `R * x + p`.
//! * A tangent element is split into its rotational part (`omega`, `phi`)
//!   followed by its translational part (`nu`, `upsilon`). The flat
//!   six-vector layout `[rx, ry, rz, tx, ty, tz]` follows the same order.
//!
//! The rotation is `R = I + A(θ) [φ]ₓ + B(θ) [φ]ₓ²` and the left Jacobian is
//! `J = I + B(θ) [φ]ₓ + C(θ) [φ]ₓ²` with `θ = ‖φ‖`. `A` and `B` are evaluated
//! through `sinc`, which is well conditioned everywhere; `C` switches to its
//! Taylor expansion near zero.
//!
//! Derivatives are reported in closed form. `∂R/∂φₖ = [J eₖ]ₓ R`, which gives
//! `∂(R x)/∂φ = −[R x]ₓ J` for a fixed vector `x`.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{Matrix3, Matrix4, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Threshold on `θ²` below which `C(θ)` uses its two-term expansion, and on
/// `‖ω‖²` below which the rotation axis is treated as undefined.
pub const SMALL_ANGLE_EPS: f64 = 1e-8;

/// Lower bound applied to denominators that can approach zero.
pub const DENOM_CLAMP: f64 = 1e-10;

/// Below this angle the outer branch of `C` and the coefficient derivatives
/// are summed as series; the direct quotients lose digits to cancellation.
const SERIES_CUTOFF: f64 = 0.05;

/// An element of se(3): angular rate and translational rate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub omega: Vec3,
    pub nu: Vec3,
}

impl Twist {
    pub fn new(omega: Vec3, nu: Vec3) -> Self {
        Self { omega, nu }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            omega: Vec3::new(v[0], v[1], v[2]),
            nu: Vec3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.omega.x,
            self.omega.y,
            self.omega.z,
            self.nu.x,
            self.nu.y,
            self.nu.z,
        ]
    }

    pub fn norm_squared(&self) -> f64 {
        self.omega.norm_squared() + self.nu.norm_squared()
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// The log-parameter reached after moving along this twist for `dt`.
    pub fn scaled(&self, dt: f64) -> LogParam {
        LogParam {
            phi: self.omega * dt,
            upsilon: self.nu * dt,
        }
    }
}

impl Add for Twist {
    type Output = Twist;
    fn add(self, rhs: Twist) -> Twist {
        Twist::new(self.omega + rhs.omega, self.nu + rhs.nu)
    }
}

impl AddAssign for Twist {
    fn add_assign(&mut self, rhs: Twist) {
        self.omega += rhs.omega;
        self.nu += rhs.nu;
    }
}

impl Sub for Twist {
    type Output = Twist;
    fn sub(self, rhs: Twist) -> Twist {
        Twist::new(self.omega - rhs.omega, self.nu - rhs.nu)
    }
}

impl Neg for Twist {
    type Output = Twist;
    fn neg(self) -> Twist {
        Twist::new(-self.omega, -self.nu)
    }
}

impl Mul<f64> for Twist {
    type Output = Twist;
    fn mul(self, s: f64) -> Twist {
        Twist::new(self.omega * s, self.nu * s)
    }
}

/// A twist already multiplied by a time interval.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LogParam {
    pub phi: Vec3,
    pub upsilon: Vec3,
}

impl LogParam {
    pub fn new(phi: Vec3, upsilon: Vec3) -> Self {
        Self { phi, upsilon }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// The 4×4 wedge matrix `[[φ]ₓ, υ; 0, 0]`.
    pub fn wedge(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat(&self.phi));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.upsilon);
        m
    }
}

/// Rotation plus translation, acting as `x ↦ R x + p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Frobenius norm of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Mat3::identity()).norm()
    }
}

/// `A = sin θ / θ`, `B = (1 − cos θ) / θ²`, `C = (θ − sin θ) / θ³`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilizedCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Normalized sinc, `sin(πx) / (πx)`.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Skew-symmetric matrix with `hat(v) * w == v × w`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Alternating series `Σ (−1)^k x^k · coeff(k)` in `x = θ²`.
fn even_series(theta2: f64, terms: usize, coeff: impl Fn(u32) -> f64) -> f64 {
    let mut sum = 0.0;
    let mut power = 1.0;
    for k in 0..terms as u32 {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * power * coeff(k);
        power *= theta2;
    }
    sum
}

fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

pub fn stabilized_coeffs(theta: f64) -> StabilizedCoeffs {
    let pi = std::f64::consts::PI;
    let a = sinc(theta / pi);
    let half = sinc(theta / (2.0 * pi));
    let b = 0.5 * half * half;
    let theta2 = theta * theta;
    let c = if theta2 < SMALL_ANGLE_EPS {
        1.0 / 6.0 - theta2 / 120.0
    } else if theta < SERIES_CUTOFF {
        even_series(theta2, 5, |k| 1.0 / factorial(2 * k + 3))
    } else {
        (theta - theta.sin()) / (theta2 * theta).max(DENOM_CLAMP)
    };
    StabilizedCoeffs { a, b, c }
}

/// `B'(θ)/θ` and `C'(θ)/θ`, needed to differentiate `J(φ) v` in `φ`.
fn coeff_derivatives_over_theta(theta: f64, k: &StabilizedCoeffs) -> (f64, f64) {
    let theta2 = theta * theta;
    if theta < SERIES_CUTOFF {
        // (A − 2B)/θ² = Σ_{k≥1} (−1)^k 2k θ^{2k−2} / (2k+2)!, likewise for B − 3C.
        let db = -even_series(theta2, 5, |j| {
            let k = j + 1;
            2.0 * k as f64 / factorial(2 * k + 2)
        });
        let dc = -even_series(theta2, 5, |j| {
            let k = j + 1;
            2.0 * k as f64 / factorial(2 * k + 3)
        });
        (db, dc)
    } else {
        ((k.a - 2.0 * k.b) / theta2, (k.b - 3.0 * k.c) / theta2)
    }
}

/// Rodrigues' formula.
pub fn so3_exp(phi: &Vec3) -> Mat3 {
    let k = stabilized_coeffs(phi.norm());
    let h = hat(phi);
    Mat3::identity() + h * k.a + h * h * k.b
}

/// Left Jacobian of SO(3), `Σ [φ]ₓⁿ / (n+1)!`.
pub fn left_jacobian(phi: &Vec3) -> Mat3 {
    let k = stabilized_coeffs(phi.norm());
    let h = hat(phi);
    Mat3::identity() + h * k.b + h * h * k.c
}

pub fn se3_exp(u: &LogParam) -> RigidTransform {
    let k = stabilized_coeffs(u.phi.norm());
    let h = hat(&u.phi);
    let h2 = h * h;
    let rotation = Mat3::identity() + h * k.a + h2 * k.b;
    let jac = Mat3::identity() + h * k.b + h2 * k.c;
    RigidTransform {
        rotation,
        translation: jac * u.upsilon,
    }
}

/// `∂(J(φ) v)/∂φ` for a fixed vector `v`.
pub fn left_jacobian_apply_derivative(phi: &Vec3, v: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = stabilized_coeffs(theta);
    let (db, dc) = coeff_derivatives_over_theta(theta, &k);
    let cross = phi.cross(v);
    let double_cross = phi.cross(&cross);
    // d(φ×(φ×v))/dφ = (φ·v) I + φ vᵀ − 2 v φᵀ
    let d_double = Mat3::identity() * phi.dot(v) + phi * v.transpose() - v * phi.transpose() * 2.0;
    cross * phi.transpose() * db - hat(v) * k.b + double_cross * phi.transpose() * dc + d_double * k.c
}

/// `∂(R(φ) x)/∂φ` for a fixed vector `x`, given `R = so3_exp(φ)` and
/// `J = left_jacobian(φ)`.
pub fn rotate_derivative(rotation: &Mat3, jac: &Mat3, x: &Vec3) -> Mat3 {
    -hat(&(rotation * x)) * jac
}

/// Derivative data returned alongside an exponential-map evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Se3ExpJacobians {
    /// `∂R/∂φₖ` for `k = 0, 1, 2`.
    pub d_rotation: [Mat3; 3],
    /// `∂p/∂φ`, columns indexed by the component of `φ`.
    pub d_translation_d_phi: Mat3,
    /// `∂p/∂υ`, which equals the left Jacobian.
    pub d_translation_d_upsilon: Mat3,
}

pub fn se3_exp_with_grads(u: &LogParam) -> (RigidTransform, Se3ExpJacobians) {
    let transform = se3_exp(u);
    let jac = left_jacobian(&u.phi);
    let d_rotation = [0, 1, 2].map(|i| hat(&jac.column(i).into_owned()) * transform.rotation);
    let grads = Se3ExpJacobians {
        d_rotation,
        d_translation_d_phi: left_jacobian_apply_derivative(&u.phi, &u.upsilon),
        d_translation_d_upsilon: jac,
    };
    (transform, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn series_exp3(phi: &Vec3, shift: u32) -> Mat3 {
        // Σ hat^n / (n + shift)!
        let h = hat(phi);
        let mut term = Mat3::identity();
        let mut sum = Mat3::zeros();
        for n in 0..30u32 {
            sum += term / factorial(n + shift);
            term *= h;
        }
        sum
    }

    #[test]
    fn hat_layout() {
        assert_eq!(hat(&Vec3::zeros()), Mat3::zeros());
        let h = hat(&Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(h, Mat3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0));
        let v = Vec3::new(0.3, -0.7, 1.1);
        assert!((hat(&v) * v).norm() < 1e-15);
        let w = Vec3::new(-2.0, 0.5, 4.0);
        assert!((hat(&v) * w - v.cross(&w)).norm() < 1e-14);
    }

    #[test]
    fn coefficients_at_zero_and_pi() {
        let k = stabilized_coeffs(0.0);
        assert_eq!((k.a, k.b, k.c), (1.0, 0.5, 1.0 / 6.0));
        let k = stabilized_coeffs(PI);
        assert!(k.a.abs() < 1e-15);
        assert!((k.b - 2.0 / (PI * PI)).abs() < 1e-15);
        assert!((k.c - PI / PI.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn coefficient_ranges_on_zero_to_pi() {
        for i in 0..=1000 {
            let theta = PI * i as f64 / 1000.0;
            let k = stabilized_coeffs(theta);
            assert!(k.a > -1e-15 && k.a <= 1.0);
            assert!(k.b > 0.0 && k.b <= 0.5);
            assert!(k.c > 0.0 && k.c <= 1.0 / 6.0);
        }
    }

    #[test]
    fn so3_exp_quarter_turn() {
        assert_eq!(so3_exp(&Vec3::zeros()), Mat3::identity());
        let r = so3_exp(&Vec3::new(PI / 2.0, 0.0, 0.0));
        assert!((r * Vec3::y() - Vec3::z()).norm() < 1e-15);
    }

    #[test]
    fn so3_exp_and_jacobian_match_series() {
        let phi = Vec3::new(0.3, -0.4, 0.5);
        assert!((so3_exp(&phi) - series_exp3(&phi, 0)).norm() < 1e-10);
        assert!((left_jacobian(&phi) - series_exp3(&phi, 1)).norm() < 1e-10);
        assert!((left_jacobian(&phi) * phi - phi).norm() < 1e-15);
        assert_eq!(left_jacobian(&Vec3::zeros()), Mat3::identity());
    }

    #[test]
    fn se3_exp_special_cases() {
        assert_eq!(se3_exp(&LogParam::zero()), RigidTransform::identity());
        let t = se3_exp(&LogParam::new(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0)));
        assert_eq!(t.rotation, Mat3::identity());
        assert_eq!(t.translation, Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn se3_grads_at_identity() {
        let (_, g) = se3_exp_with_grads(&LogParam::zero());
        assert_eq!(g.d_translation_d_upsilon, Mat3::identity());
        assert!((g.d_rotation[0] - hat(&Vec3::x())).norm() < 1e-15);
    }
}
