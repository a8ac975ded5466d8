//! Synthetic scenes: rigid bodies made of Gaussian primitives, moving under
//! known twists, sampled on a uniform time grid.

use nalgebra::{Rotation3, Unit, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::deform::{axis_projections, deformed_mean, MotionModel, MotionParams, Primitive};
use crate::error::{Error, Result};
use crate::se3::{Twist, Vec3, SMALL_ANGLE_EPS};
use crate::temporal::{temporal_visibility, BezierTwists, TemporalProfile};

/// Motion assigned to one body.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionKind {
    Static,
    ConstantTwist,
    BezierTwist,
}

impl MotionKind {
    pub fn name(&self) -> &'static str {
        match self {
            MotionKind::Static => "static",
            MotionKind::ConstantTwist => "constant",
            MotionKind::BezierTwist => "bezier",
        }
    }
}

impl std::str::FromStr for MotionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(MotionKind::Static),
            "constant" | "constant-twist" => Ok(MotionKind::ConstantTwist),
            "bezier" | "bezier-twist" => Ok(MotionKind::BezierTwist),
            other => Err(Error::invalid(format!("unknown motion kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub n_bodies: usize,
    pub primitives_per_body: usize,
    pub n_timesteps: usize,
    /// One entry per body; a single entry applies to every body.
    pub motions: Vec<MotionKind>,
    /// `[min, max]` of ‖ω‖ in rad per unit time.
    pub omega_range: (f64, f64),
    /// `[min, max]` of ‖ν‖ in length per unit time.
    pub nu_range: (f64, f64),
    pub noise_sigma: f64,
    pub rng_seed: u64,
    /// Half edge length of each body's bounding box.
    pub body_half_extent: f64,
    /// Distance between neighbouring body centres along x.
    pub body_spacing: f64,
    pub temporal_scale: f64,
    /// Fraction of primitives per body generated nearly transparent.
    pub inactive_fraction: f64,
    /// Magnitude of the Bézier control twists relative to the base twist.
    pub bezier_amplitude: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_bodies: 1,
            primitives_per_body: 20,
            n_timesteps: 50,
            motions: vec![MotionKind::ConstantTwist],
            omega_range: (0.5, 0.5),
            nu_range: (0.2, 0.2),
            noise_sigma: 0.0,
            rng_seed: 0,
            body_half_extent: 0.5,
            body_spacing: 3.0,
            temporal_scale: 0.25,
            inactive_fraction: 0.0,
            bezier_amplitude: 0.5,
        }
    }
}

impl SceneConfig {
    /// Two bodies with distinct colours: one constant twist, one Bézier.
    pub fn two_body(seed: u64) -> Self {
        Self {
            n_bodies: 2,
            motions: vec![MotionKind::ConstantTwist, MotionKind::BezierTwist],
            rng_seed: seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bodies == 0 {
            return Err(Error::invalid("n_bodies must be at least 1"));
        }
        if self.primitives_per_body == 0 {
            return Err(Error::invalid("primitives_per_body must be at least 1"));
        }
        if self.n_bodies * self.primitives_per_body < 2 {
            return Err(Error::invalid("a scene needs at least two primitives"));
        }
        if self.n_timesteps < 2 {
            return Err(Error::invalid("n_timesteps must be at least 2"));
        }
        if self.motions.is_empty() || (self.motions.len() != 1 && self.motions.len() != self.n_bodies) {
            return Err(Error::invalid(format!(
                "expected 1 or {} motion kinds, got {}",
                self.n_bodies,
                self.motions.len()
            )));
        }
        for (name, (lo, hi)) in [("omega_range", self.omega_range), ("nu_range", self.nu_range)] {
            if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::invalid(format!("{name} must satisfy 0 <= min <= max")));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be non-negative"));
        }
        if !(self.body_half_extent > 0.0 && self.temporal_scale > 0.0) {
            return Err(Error::invalid("body_half_extent and temporal_scale must be positive"));
        }
        if !(self.body_spacing >= 0.0 && self.bezier_amplitude >= 0.0) {
            return Err(Error::invalid("body_spacing and bezier_amplitude must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.inactive_fraction) {
            return Err(Error::invalid("inactive_fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn motion_of(&self, body: usize) -> MotionKind {
        if self.motions.len() == 1 {
            self.motions[0]
        } else {
            self.motions[body]
        }
    }

    /// Uniform samples on `[0, 1]`.
    pub fn times(&self) -> Vec<f64> {
        let n = self.n_timesteps;
        (0..n).map(|k| k as f64 / (n - 1) as f64).collect()
    }
}

/// Canonical primitives with their body membership.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    pub body: Vec<usize>,
    pub n_bodies: usize,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn body_members(&self, b: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.body[i] == b).collect()
    }

    /// Largest canonical distance between two primitives of body `b`.
    pub fn body_diameter(&self, b: usize) -> f64 {
        let members = self.body_members(b);
        let mut d: f64 = 0.0;
        for (k, &i) in members.iter().enumerate() {
            for &j in &members[k + 1..] {
                d = d.max((self.primitives[i].mu - self.primitives[j].mu).norm());
            }
        }
        d
    }
}

/// Target positions and visibility weights, `[primitive][time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryData {
    pub times: Vec<f64>,
    pub targets: Vec<Vec<Vec3>>,
    pub weights: Vec<Vec<f64>>,
}

impl TrajectoryData {
    pub fn n_primitives(&self) -> usize {
        self.targets.len()
    }

    pub fn validate_for(&self, scene: &Scene) -> Result<()> {
        if self.targets.len() != scene.len() || self.weights.len() != scene.len() {
            return Err(Error::invalid(format!(
                "trajectories cover {} primitives, scene has {}",
                self.targets.len(),
                scene.len()
            )));
        }
        let nt = self.times.len();
        if self.targets.iter().any(|r| r.len() != nt) || self.weights.iter().any(|r| r.len() != nt) {
            return Err(Error::invalid("every primitive needs one sample per time"));
        }
        if self.weights.iter().flatten().any(|w| !(*w > 0.0 && *w <= 1.0)) {
            return Err(Error::invalid("trajectory weights must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Known motion of one body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyMotion {
    pub kind: MotionKind,
    pub params: MotionParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub bodies: Vec<BodyMotion>,
    /// Per-primitive parameters (shared within a body).
    pub params: Vec<MotionParams>,
}

fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

fn random_twist<R: Rng>(rng: &mut R, omega: (f64, f64), nu: (f64, f64)) -> Twist {
    let w = rng.random_range(omega.0..=omega.1);
    let v = rng.random_range(nu.0..=nu.1);
    Twist::new(random_unit(rng) * w, random_unit(rng) * v)
}

const PALETTE: [[f64; 3]; 6] = [
    [0.85, 0.2, 0.2],
    [0.2, 0.35, 0.85],
    [0.25, 0.8, 0.3],
    [0.9, 0.85, 0.2],
    [0.7, 0.25, 0.8],
    [0.2, 0.8, 0.85],
];

/// Closed-form screw motion for a constant twist: rotation by `‖ω‖Δt` about
/// the axis through `a⊥`, plus `ν∥ Δt` along it.
pub fn screw_oracle(mu: &Vec3, twist: &Twist, anchor: &Vec3, dt: f64) -> Vec3 {
    let (a_perp, nu_par) = axis_projections(anchor, &twist.omega, &twist.nu);
    if twist.omega.norm_squared() <= SMALL_ANGLE_EPS {
        return mu + nu_par * dt;
    }
    let axis = Unit::new_normalize(twist.omega);
    let rot = Rotation3::from_axis_angle(&axis, twist.omega.norm() * dt);
    rot * (mu - a_perp) + a_perp + nu_par * dt
}

pub fn generate_scene(cfg: &SceneConfig) -> Result<(Scene, TrajectoryData, GroundTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let h = cfg.body_half_extent;
    let offset = (cfg.n_bodies - 1) as f64 * cfg.body_spacing / 2.0;

    let mut primitives = Vec::new();
    let mut body = Vec::new();
    let mut bodies = Vec::new();
    let mut params = Vec::new();

    for b in 0..cfg.n_bodies {
        let center = Vec3::new(b as f64 * cfg.body_spacing - offset, 0.0, 0.0);
        let kind = cfg.motion_of(b);
        let jitter = |rng: &mut ChaCha8Rng| {
            Vec3::new(
                rng.random_range(-h..h),
                rng.random_range(-h..h),
                rng.random_range(-h..h),
            )
        };
        let anchor = center + jitter(&mut rng) * 0.5;
        let twists = match kind {
            MotionKind::Static => BezierTwists::default(),
            MotionKind::ConstantTwist => {
                // Only the component of ν along ω is observable for a constant
                // twist; store that representative so the truth is identifiable.
                let tw = random_twist(&mut rng, cfg.omega_range, cfg.nu_range);
                let nu = match tw.omega.try_normalize(0.0) {
                    Some(axis) => axis * tw.nu.norm() * tw.nu.dot(&axis).signum(),
                    None => tw.nu,
                };
                BezierTwists::constant(Twist::new(tw.omega, nu))
            }
            MotionKind::BezierTwist => {
                let base = random_twist(&mut rng, cfg.omega_range, cfg.nu_range);
                let amp = cfg.bezier_amplitude;
                let range = |r: (f64, f64)| (r.0 * amp, r.1 * amp);
                let mut ctrl = || random_twist(&mut rng, range(cfg.omega_range), range(cfg.nu_range));
                BezierTwists {
                    base,
                    ctrl0: ctrl(),
                    ctrl1: ctrl(),
                    ctrl2: ctrl(),
                }
            }
        };
        let anchor = if kind == MotionKind::Static { center } else { anchor };
        let motion = MotionParams { twists, anchor };
        bodies.push(BodyMotion { kind, params: motion });

        let color_base = Vec3::from(PALETTE[b % PALETTE.len()]);
        let n_inactive = (cfg.inactive_fraction * cfg.primitives_per_body as f64).round() as usize;
        for k in 0..cfg.primitives_per_body {
            let mu = center + jitter(&mut rng);
            let scale = Vec3::new(
                rng.random_range(0.02..0.05),
                rng.random_range(0.02..0.05),
                rng.random_range(0.02..0.05),
            );
            let orient = UnitQuaternion::from_axis_angle(
                &Unit::new_normalize(random_unit(&mut rng)),
                rng.random_range(0.0..std::f64::consts::PI),
            );
            let alpha = if k < n_inactive {
                0.001
            } else {
                rng.random_range(0.5..1.0)
            };
            let mu_t = rng.random_range(0.0..=1.0);
            let color = color_base + jitter(&mut rng) * (0.01 / h);
            primitives.push(Primitive {
                mu,
                scale,
                orient,
                profile: TemporalProfile::new(mu_t, cfg.temporal_scale, alpha)?,
                color,
            });
            body.push(b);
            params.push(motion);
        }
    }

    let times = cfg.times();
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut targets = Vec::with_capacity(primitives.len());
    let mut weights = Vec::with_capacity(primitives.len());
    for (i, prim) in primitives.iter().enumerate() {
        let gt = &params[i];
        let check_screw = bodies[body[i]].kind != MotionKind::BezierTwist;
        let mut row = Vec::with_capacity(times.len());
        for &t in &times {
            let y = deformed_mean(prim, gt, t, MotionModel::GaugeFixed);
            if check_screw {
                let oracle = screw_oracle(&prim.mu, &gt.twists.base, &gt.anchor, t - prim.profile.mu_t);
                if (oracle - y).norm() > 1e-9 {
                    return Err(Error::invalid(format!(
                        "generated trajectory of primitive {i} disagrees with the screw oracle at t={t}"
                    )));
                }
            }
            let n = if cfg.noise_sigma > 0.0 {
                Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                Vec3::zeros()
            };
            row.push(y + n);
        }
        targets.push(row);
        weights.push(times.iter().map(|&t| temporal_visibility(&prim.profile, t)).collect());
    }

    Ok((
        Scene {
            primitives,
            body,
            n_bodies: cfg.n_bodies,
        },
        TrajectoryData {
            times,
            targets,
            weights,
        },
        GroundTruth { bodies, params },
    ))
}
