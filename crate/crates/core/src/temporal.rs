//! Time-dependent parts of the motion model: temporal opacity, the effective
//! window around a primitive's central time, and the Bézier-residual twist.

use crate::error::{Error, Result};
use crate::se3::{Twist, Vec3};

/// Central time, temporal scale and canonical opacity of one primitive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalProfile {
    pub mu_t: f64,
    pub s_t: f64,
    pub alpha: f64,
}

impl TemporalProfile {
    pub fn new(mu_t: f64, s_t: f64, alpha: f64) -> Result<Self> {
        let profile = Self { mu_t, s_t, alpha };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu_t.is_finite() {
            return Err(Error::invalid("central time must be finite"));
        }
        if !(self.s_t > 0.0 && self.s_t.is_finite()) {
            return Err(Error::invalid(format!(
                "temporal scale must be positive, got {}",
                self.s_t
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!(
                "opacity must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Base twist plus the three control twists of the quadratic residual.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BezierTwists {
    pub base: Twist,
    pub ctrl0: Twist,
    pub ctrl1: Twist,
    pub ctrl2: Twist,
}

impl BezierTwists {
    pub fn constant(base: Twist) -> Self {
        Self {
            base,
            ..Default::default()
        }
    }

    pub fn controls(&self) -> [Twist; 3] {
        [self.ctrl0, self.ctrl1, self.ctrl2]
    }

    pub fn is_finite(&self) -> bool {
        [self.base, self.ctrl0, self.ctrl1, self.ctrl2]
            .iter()
            .all(Twist::is_finite)
    }
}

/// Visibility falloff `exp(−(t − μ_t)² / 2s_t²)` without the opacity factor.
pub fn temporal_visibility(profile: &TemporalProfile, t: f64) -> f64 {
    let d = t - profile.mu_t;
    (-(d * d) / (2.0 * profile.s_t * profile.s_t)).exp()
}

pub fn temporal_opacity(profile: &TemporalProfile, t: f64) -> f64 {
    profile.alpha * temporal_visibility(profile, t)
}

/// `[μ_t − 2s_t, μ_t + 2s_t]`.
pub fn effective_window(profile: &TemporalProfile) -> (f64, f64) {
    (profile.mu_t - 2.0 * profile.s_t, profile.mu_t + 2.0 * profile.s_t)
}

/// Position of `t` inside the effective window, clamped to `[0, 1]`.
pub fn normalized_time(profile: &TemporalProfile, t: f64) -> f64 {
    let (lo, _) = effective_window(profile);
    let t_norm = (t - lo) / (4.0 * profile.s_t);
    t_norm.clamp(0.0, 1.0)
}

/// Bernstein weights of the quadratic curve at `tau`.
pub fn bezier_weights(tau: f64) -> [f64; 3] {
    let s = 1.0 - tau;
    [s * s, 2.0 * s * tau, tau * tau]
}

/// Quadratic Bézier blend of the three control twists.
///
/// `tau` must already be clamped to `[0, 1]` by [`normalized_time`].
pub fn bezier_residual(b: &BezierTwists, tau: f64) -> Result<Twist> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("Bezier parameter {tau} outside [0, 1]")));
    }
    let [w0, w1, w2] = bezier_weights(tau);
    Ok(b.ctrl0 * w0 + b.ctrl1 * w1 + b.ctrl2 * w2)
}

/// `ζ(t) = ζ_base + ζ_res(τ(t))`.
pub fn motion_coefficient(b: &BezierTwists, profile: &TemporalProfile, t: f64) -> Twist {
    let tau = normalized_time(profile, t);
    let [w0, w1, w2] = bezier_weights(tau);
    b.base + b.ctrl0 * w0 + b.ctrl1 * w1 + b.ctrl2 * w2
}

/// Translation-only baseline `μ + v (t − μ_t)`.
pub fn linear_position(mu: &Vec3, v: &Vec3, mu_t: f64, t: f64) -> Vec3 {
    mu + v * (t - mu_t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(mu_t: f64, s_t: f64, alpha: f64) -> TemporalProfile {
        TemporalProfile::new(mu_t, s_t, alpha).unwrap()
    }

    #[test]
    fn opacity_values() {
        let p = profile(0.3, 0.1, 1.0);
        assert_eq!(temporal_opacity(&p, 0.3), 1.0);
        assert!((temporal_opacity(&p, 0.4) - (-0.5f64).exp()).abs() < 1e-15);
        let p = profile(0.3, 0.1, 0.8);
        assert!((temporal_opacity(&p, 0.5) - 0.8 * (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_profiles() {
        assert!(TemporalProfile::new(0.0, 0.0, 0.5).is_err());
        assert!(TemporalProfile::new(0.0, 1.0, 0.0).is_err());
        assert!(TemporalProfile::new(0.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn window_and_normalized_time() {
        assert_eq!(effective_window(&profile(0.0, 1.0, 1.0)), (-2.0, 2.0));
        assert_eq!(effective_window(&profile(5.0, 0.25, 1.0)), (4.5, 5.5));
        let p = profile(0.4, 0.2, 1.0);
        assert_eq!(normalized_time(&p, 0.4), 0.5);
        assert_eq!(normalized_time(&p, 0.4 - 10.0 * 0.2), 0.0);
        assert_eq!(normalized_time(&p, 0.4 + 2.0 * 0.2), 1.0);
    }

    #[test]
    fn bezier_endpoints_and_midpoint() {
        let b = BezierTwists {
            base: Twist::zero(),
            ctrl0: Twist::from_array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            ctrl1: Twist::from_array([0.5, -1.0, 0.0, 2.0, 0.0, 1.0]),
            ctrl2: Twist::from_array([-1.0, 0.0, 2.0, 0.0, 3.0, -2.0]),
        };
        assert_eq!(bezier_residual(&b, 0.0).unwrap(), b.ctrl0);
        assert_eq!(bezier_residual(&b, 1.0).unwrap(), b.ctrl2);
        let mid = (b.ctrl0 + b.ctrl1 * 2.0 + b.ctrl2) * 0.25;
        let got = bezier_residual(&b, 0.5).unwrap();
        assert!((got - mid).norm_squared() < 1e-28);
        assert!(bezier_residual(&b, 1.0 + 1e-12).is_err());
        assert!(bezier_residual(&b, -0.1).is_err());
    }

    #[test]
    fn motion_coefficient_cases() {
        let p = profile(0.5, 0.25, 1.0);
        let base = Twist::from_array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let b = BezierTwists::constant(base);
        assert_eq!(motion_coefficient(&b, &p, 0.9), base);

        let w = Twist::from_array([1.0, -1.0, 0.5, 0.0, 2.0, 0.0]);
        let b2 = BezierTwists {
            base,
            ctrl0: Twist::zero(),
            ctrl1: Twist::zero(),
            ctrl2: w,
        };
        assert_eq!(motion_coefficient(&b2, &p, 50.0), base + w);

        let b3 = BezierTwists {
            base: Twist::zero(),
            ctrl0: w,
            ctrl1: w,
            ctrl2: w,
        };
        for t in [-1.0, 0.2, 0.5, 0.77, 3.0] {
            let z = motion_coefficient(&b3, &p, t);
            assert!((z - w).norm_squared() < 1e-28);
        }
    }

    #[test]
    fn linear_baseline() {
        let mu = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(linear_position(&mu, &Vec3::new(4.0, 5.0, 6.0), 0.3, 0.3), mu);
        let got = linear_position(&Vec3::zeros(), &Vec3::x(), 1.0, 3.0);
        assert_eq!(got, Vec3::new(2.0, 0.0, 0.0));
        assert_eq!(linear_position(&mu, &Vec3::zeros(), 0.0, 7.0), mu);
    }
}
