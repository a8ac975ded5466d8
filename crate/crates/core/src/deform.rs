//! Anchor-centred rigid deformation of Gaussian primitives.
//!
//! At query time `t` the motion coefficient `ζ(t) = (ω, ν)` is turned into a
//! rigid transform about the primitive's local anchor. The anchor component
//! along the rotation axis and the translation orthogonal to it cannot be
//! told apart from the rest of the motion, so both are projected out:
//!
//! ```text
//! a⊥ = a − (aᵀω / ‖ω‖²) ω        ν∥ = (νᵀω / ‖ω‖²) ω
//! μ(t) = R (μ − a⊥) + a⊥ + J(φ) ν∥ Δt,    φ = ω Δt,  Δt = t − μ_t
//! ```
//!
//! When `‖ω‖² ≤ ε` the axis is unreliable and both projections are skipped.

use nalgebra::{SMatrix, UnitQuaternion, Vector4};

use crate::error::{Error, Result};
use crate::se3::{
    hat, left_jacobian_apply_derivative, rotate_derivative, stabilized_coeffs, Mat3, Twist, Vec3, DENOM_CLAMP,
    SMALL_ANGLE_EPS,
};
use crate::temporal::{
    bezier_weights, linear_position, motion_coefficient, normalized_time, temporal_opacity, BezierTwists,
    TemporalProfile,
};

/// Number of learnable motion scalars per primitive: base twist, three
/// control twists and the anchor.
pub const MOTION_DOF: usize = 27;

/// Flat offset of the anchor inside the parameter vector.
pub const ANCHOR_OFFSET: usize = 24;

/// Jacobian of a deformed mean with respect to the flat motion parameters.
pub type MotionJacobian = SMatrix<f64, 3, MOTION_DOF>;

/// One canonical Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub mu: Vec3,
    pub scale: Vec3,
    pub orient: UnitQuaternion<f64>,
    pub profile: TemporalProfile,
    pub color: Vec3,
}

impl Primitive {
    pub fn new(mu: Vec3, scale: Vec3, profile: TemporalProfile) -> Self {
        Self {
            mu,
            scale,
            orient: UnitQuaternion::identity(),
            profile,
            color: Vec3::new(0.5, 0.5, 0.5),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.profile.alpha
    }

    /// Orientation as `(w, x, y, z)`.
    pub fn orient_wxyz(&self) -> Vector4<f64> {
        let q = self.orient.quaternion();
        Vector4::new(q.w, q.i, q.j, q.k)
    }

    /// `Σ = R_o diag(s²) R_oᵀ`.
    pub fn covariance(&self) -> Mat3 {
        let r = self.orient.to_rotation_matrix().into_inner();
        let d = Mat3::from_diagonal(&self.scale.component_mul(&self.scale));
        r * d * r.transpose()
    }

    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        if !self.scale.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::invalid("primitive scales must be positive"));
        }
        if !self.mu.iter().chain(self.color.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("primitive mean and color must be finite"));
        }
        Ok(())
    }
}

/// Per-primitive learnable motion.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MotionParams {
    pub twists: BezierTwists,
    pub anchor: Vec3,
}

impl MotionParams {
    pub fn constant(base: Twist, anchor: Vec3) -> Self {
        Self {
            twists: BezierTwists::constant(base),
            anchor,
        }
    }

    /// Layout: `[base, ctrl0, ctrl1, ctrl2]` as six-vectors, then the anchor.
    pub fn to_array(&self) -> [f64; MOTION_DOF] {
        let mut out = [0.0; MOTION_DOF];
        let t = &self.twists;
        for (k, tw) in [t.base, t.ctrl0, t.ctrl1, t.ctrl2].iter().enumerate() {
            out[6 * k..6 * k + 6].copy_from_slice(&tw.to_array());
        }
        out[ANCHOR_OFFSET..].copy_from_slice(self.anchor.as_slice());
        out
    }

    pub fn from_array(v: &[f64; MOTION_DOF]) -> Self {
        let tw = |k: usize| {
            let mut a = [0.0; 6];
            a.copy_from_slice(&v[6 * k..6 * k + 6]);
            Twist::from_array(a)
        };
        Self {
            twists: BezierTwists {
                base: tw(0),
                ctrl0: tw(1),
                ctrl1: tw(2),
                ctrl2: tw(3),
            },
            anchor: Vec3::new(v[24], v[25], v[26]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// How the deformed mean is computed from the motion parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MotionModel {
    /// Anchor-centred SE(3) with the axis projections applied.
    #[default]
    GaugeFixed,
    /// Anchor-centred SE(3) using the raw anchor and full translation.
    FreeAnchor,
    /// Translation only, `μ + ν_base (t − μ_t)`.
    Linear,
}

impl MotionModel {
    pub fn name(&self) -> &'static str {
        match self {
            MotionModel::GaugeFixed => "gauge-fixed",
            MotionModel::FreeAnchor => "free-anchor",
            MotionModel::Linear => "linear",
        }
    }
}

impl std::str::FromStr for MotionModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauge-fixed" | "full" => Ok(MotionModel::GaugeFixed),
            "free-anchor" | "no-gauge" => Ok(MotionModel::FreeAnchor),
            "linear" => Ok(MotionModel::Linear),
            other => Err(Error::invalid(format!("unknown motion model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeformedState {
    pub mu_t: Vec3,
    /// Rotation conjugating the covariance.
    pub cov_rot: Mat3,
    pub covariance: Mat3,
    pub opacity_t: f64,
}

/// Gauge projections of the anchor and translational rate onto the rotation
/// axis of `omega`. Returns `(a⊥, ν∥)`.
pub fn axis_projections(anchor: &Vec3, omega: &Vec3, nu: &Vec3) -> (Vec3, Vec3) {
    let n2 = omega.norm_squared();
    if n2 > SMALL_ANGLE_EPS {
        let denom = n2.max(DENOM_CLAMP);
        let a_perp = anchor - omega * (anchor.dot(omega) / denom);
        let nu_par = omega * (nu.dot(omega) / denom);
        (a_perp, nu_par)
    } else {
        (*anchor, *nu)
    }
}

/// `∂(vᵀω/‖ω‖² · ω)/∂ω`.
fn parallel_projection_d_omega(v: &Vec3, omega: &Vec3, denom: f64) -> Mat3 {
    let s = v.dot(omega) / denom;
    Mat3::identity() * s + omega * v.transpose() / denom
        - omega * omega.transpose() * (2.0 * v.dot(omega) / (denom * denom))
}

struct Evaluated {
    mu_t: Vec3,
    rotation: Mat3,
    /// `∂μ(t)/∂ω(t)`, `∂μ(t)/∂ν(t)`, `∂μ(t)/∂a`.
    grads: Option<(Mat3, Mat3, Mat3)>,
    tau: f64,
}

fn evaluate(prim: &Primitive, params: &MotionParams, t: f64, model: MotionModel, want_grads: bool) -> Evaluated {
    let dt = t - prim.profile.mu_t;
    let tau = normalized_time(&prim.profile, t);

    if model == MotionModel::Linear {
        let v = params.twists.base.nu;
        return Evaluated {
            mu_t: linear_position(&prim.mu, &v, prim.profile.mu_t, t),
            rotation: Mat3::identity(),
            grads: want_grads.then(|| (Mat3::zeros(), Mat3::identity() * dt, Mat3::zeros())),
            tau,
        };
    }

    let zeta = motion_coefficient(&params.twists, &prim.profile, t);
    let omega = zeta.omega;
    let nu = zeta.nu;
    let anchor = params.anchor;

    let n2 = omega.norm_squared();
    let projected = model == MotionModel::GaugeFixed && n2 > SMALL_ANGLE_EPS;
    let (a_perp, nu_par) = if projected {
        axis_projections(&anchor, &omega, &nu)
    } else {
        (anchor, nu)
    };

    let phi = omega * dt;
    let upsilon = nu_par * dt;
    let k = stabilized_coeffs(phi.norm());
    let h = hat(&phi);
    let h2 = h * h;
    let rotation = Mat3::identity() + h * k.a + h2 * k.b;
    let jac = Mat3::identity() + h * k.b + h2 * k.c;

    let x = prim.mu - a_perp;
    // R x + a⊥ written as μ + (R − I) x so that R = I reproduces μ exactly.
    let mu_t = prim.mu + (rotation - Mat3::identity()) * x + jac * upsilon;

    let grads = want_grads.then(|| {
        let i_minus_r = Mat3::identity() - rotation;
        let d_phi = rotate_derivative(&rotation, &jac, &x) + left_jacobian_apply_derivative(&phi, &upsilon);
        let mut d_omega = d_phi * dt;
        let (d_nu, d_anchor);
        if projected {
            let denom = n2.max(DENOM_CLAMP);
            let axis_outer = omega * omega.transpose() / denom;
            // a⊥ = a − P a, with P the projector onto ω.
            let d_aperp_d_omega = -parallel_projection_d_omega(&anchor, &omega, denom);
            let d_nupar_d_omega = parallel_projection_d_omega(&nu, &omega, denom);
            d_omega += i_minus_r * d_aperp_d_omega + jac * d_nupar_d_omega * dt;
            d_nu = jac * axis_outer * dt;
            d_anchor = i_minus_r * (Mat3::identity() - axis_outer);
        } else {
            d_nu = jac * dt;
            d_anchor = i_minus_r;
        }
        (d_omega, d_nu, d_anchor)
    });

    Evaluated {
        mu_t,
        rotation,
        grads,
        tau,
    }
}

fn state_from(prim: &Primitive, t: f64, mu_t: Vec3, rotation: Mat3) -> DeformedState {
    DeformedState {
        mu_t,
        cov_rot: rotation,
        covariance: rotation * prim.covariance() * rotation.transpose(),
        opacity_t: temporal_opacity(&prim.profile, t),
    }
}

/// Deformed state of `prim` at time `t` under the gauge-fixed model.
pub fn deform(prim: &Primitive, params: &MotionParams, t: f64) -> DeformedState {
    deform_with_model(prim, params, t, MotionModel::GaugeFixed)
}

pub fn deform_with_model(prim: &Primitive, params: &MotionParams, t: f64, model: MotionModel) -> DeformedState {
    let e = evaluate(prim, params, t, model, false);
    state_from(prim, t, e.mu_t, e.rotation)
}

/// Only the deformed mean; skips the covariance conjugation.
pub fn deformed_mean(prim: &Primitive, params: &MotionParams, t: f64, model: MotionModel) -> Vec3 {
    evaluate(prim, params, t, model, false).mu_t
}

/// Deformed mean together with `∂μ(t)/∂θ` for the flat parameter layout of
/// [`MotionParams::to_array`].
pub fn deformed_mean_with_grads(
    prim: &Primitive,
    params: &MotionParams,
    t: f64,
    model: MotionModel,
) -> (Vec3, MotionJacobian) {
    let e = evaluate(prim, params, t, model, true);
    let (d_omega, d_nu, d_anchor) = e.grads.expect("gradients requested");
    let mut jac = MotionJacobian::zeros();
    jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&d_omega);
    jac.fixed_view_mut::<3, 3>(0, 3).copy_from(&d_nu);
    if model != MotionModel::Linear {
        for (k, w) in bezier_weights(e.tau).iter().enumerate() {
            let off = 6 * (k + 1);
            jac.fixed_view_mut::<3, 3>(0, off).copy_from(&(d_omega * *w));
            jac.fixed_view_mut::<3, 3>(0, off + 3).copy_from(&(d_nu * *w));
        }
        jac.fixed_view_mut::<3, 3>(0, ANCHOR_OFFSET).copy_from(&d_anchor);
    }
    (e.mu_t, jac)
}

/// Gauge-fixed deformation plus the Jacobian of the mean.
pub fn deform_with_grads(prim: &Primitive, params: &MotionParams, t: f64) -> (DeformedState, MotionJacobian) {
    let (mu_t, jac) = deformed_mean_with_grads(prim, params, t, MotionModel::GaugeFixed);
    let rotation = evaluate(prim, params, t, MotionModel::GaugeFixed, false).rotation;
    (state_from(prim, t, mu_t, rotation), jac)
}
