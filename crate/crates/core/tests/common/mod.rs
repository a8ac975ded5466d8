//! Finite-difference checks and series oracles shared by the integration
//! tests and the acceptance suite.
#![allow(dead_code)]

use nalgebra::{Matrix3, Matrix4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rigidmotion_core::deform::{deformed_mean, deformed_mean_with_grads, MotionModel, MOTION_DOF};
use rigidmotion_core::harness::objective::trajectory_loss_with_grads;
use rigidmotion_core::harness::scene::{generate_scene, MotionKind, SceneConfig};
use rigidmotion_core::regularization::{knn_canonical, rigid_coherence_loss, scene_motion_smoothness};
use rigidmotion_core::se3::{hat, se3_exp, se3_exp_with_grads, LogParam, Vec3};
use rigidmotion_core::temporal::motion_coefficient;
use rigidmotion_core::{MotionParams, Primitive, TemporalProfile, Twist};

pub const STEP: f64 = 1e-6;

/// Entries smaller than this are compared absolutely: a central difference
/// with step 1e-6 on O(1) values only resolves about ε·|f|/h ≈ 2e-10.
pub const FD_SCALE_FLOOR: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_SCALE_FLOOR)
}

/// Relative error of a whole partial (vector or matrix, flattened).
pub fn rel_norm(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    diff / norm(a).max(norm(n)).max(1e-12)
}

pub fn rand_vec(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-s..s),
        rng.random_range(-s..s),
        rng.random_range(-s..s),
    )
}

pub fn rand_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        if let Some(u) = rand_vec(rng, 1.0).try_normalize(1e-3) {
            return u;
        }
    }
}

pub fn rand_twist(rng: &mut ChaCha8Rng, s: f64) -> Twist {
    Twist::new(rand_vec(rng, s), rand_vec(rng, s))
}

pub fn rand_primitive(rng: &mut ChaCha8Rng) -> Primitive {
    let profile = TemporalProfile::new(
        rng.random_range(0.0..1.0),
        rng.random_range(0.1..0.4),
        rng.random_range(0.05..1.0),
    )
    .unwrap();
    let mut p = Primitive::new(
        rand_vec(rng, 1.0),
        Vec3::new(
            rng.random_range(0.01..0.2),
            rng.random_range(0.01..0.2),
            rng.random_range(0.01..0.2),
        ),
        profile,
    );
    p.orient = nalgebra::UnitQuaternion::from_axis_angle(
        &nalgebra::Unit::new_normalize(rand_unit(rng)),
        rng.random_range(0.0..3.0),
    );
    p
}

pub fn rand_params(rng: &mut ChaCha8Rng) -> MotionParams {
    let mut params = MotionParams::default();
    params.twists.base = rand_twist(rng, 1.0);
    params.twists.ctrl0 = rand_twist(rng, 0.5);
    params.twists.ctrl1 = rand_twist(rng, 0.5);
    params.twists.ctrl2 = rand_twist(rng, 0.5);
    params.anchor = rand_vec(rng, 1.0);
    params
}

// ── series oracles ─────────────────────────────────────────────────────

/// `Σ_{n<terms} Xⁿ/n!`.
pub fn expm_series(x: &Matrix4<f64>, terms: usize) -> Matrix4<f64> {
    let mut sum = Matrix4::identity();
    let mut term = Matrix4::identity();
    for n in 1..terms {
        term = term * x / n as f64;
        sum += term;
    }
    sum
}

/// `Σ_{n<terms} φ̂ⁿ/(n+1)!`.
pub fn left_jacobian_series(phi: &Vec3, terms: usize) -> Matrix3<f64> {
    let h = hat(phi);
    let mut sum = Matrix3::identity();
    let mut power = Matrix3::identity();
    let mut fact = 1.0;
    for n in 1..terms {
        power *= h;
        fact *= (n + 1) as f64;
        sum += power / fact;
    }
    sum
}

/// Taylor series of `(A, B, C)` with `offset` 1, 2, 3: `Σ (−1)ᵏ θ²ᵏ/(2k+offset)!`.
pub fn coeff_series(theta: f64, offset: u32, terms: usize) -> f64 {
    let t2 = theta * theta;
    let mut fact: f64 = (1..=offset).map(f64::from).product();
    let mut power = 1.0;
    let mut sum = 0.0;
    for k in 0..terms as u32 {
        if k > 0 {
            let m = 2 * k + offset;
            fact *= f64::from(m - 1) * f64::from(m);
            power *= -t2;
        }
        sum += power / fact;
    }
    sum
}

// ── gradient checks ────────────────────────────────────────────────────

/// Worst per-partial relative error of the se3 kernel Jacobians over `n`
/// samples with log-uniform `‖φ‖ ∈ [1e-6, 3]`.
pub fn se3_partials_worst(seed: u64, n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let norm = rng.random_range((1e-6f64).ln()..3f64.ln()).exp();
        let u = LogParam::new(rand_unit(&mut rng) * norm, rand_vec(&mut rng, 1.0));
        let (_, g) = se3_exp_with_grads(&u);
        for k in 0..3 {
            let (mut up, mut dn) = (u, u);
            up.phi[k] += STEP;
            dn.phi[k] -= STEP;
            let (tp, tm) = (se3_exp(&up), se3_exp(&dn));
            let d_rot = (tp.rotation - tm.rotation) / (2.0 * STEP);
            let d_tr = (tp.translation - tm.translation) / (2.0 * STEP);
            worst = worst.max(rel_norm(g.d_rotation[k].as_slice(), d_rot.as_slice()));
            worst = worst.max(rel_norm(
                g.d_translation_d_phi.column(k).into_owned().as_slice(),
                d_tr.as_slice(),
            ));

            let (mut up, mut dn) = (u, u);
            up.upsilon[k] += STEP;
            dn.upsilon[k] -= STEP;
            let d_up = (se3_exp(&up).translation - se3_exp(&dn).translation) / (2.0 * STEP);
            worst = worst.max(rel_norm(
                g.d_translation_d_upsilon.column(k).into_owned().as_slice(),
                d_up.as_slice(),
            ));
        }
    }
    worst
}

/// Worst per-entry relative error of `∂μ(t)/∂params` over `n` random
/// configurations with `‖ω(t)‖² ≥ 1e-4`.
pub fn deform_partials_worst(model: MotionModel, seed: u64, n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < n {
        let prim = rand_primitive(&mut rng);
        let params = rand_params(&mut rng);
        let t = rng.random_range(-0.2..1.2);
        let zeta = motion_coefficient(&params.twists, &prim.profile, t);
        if zeta.omega.norm_squared() < 1e-4 {
            continue;
        }
        checked += 1;
        let (_, jac) = deformed_mean_with_grads(&prim, &params, t, model);
        let flat = params.to_array();
        for j in 0..MOTION_DOF {
            let (mut up, mut dn) = (flat, flat);
            up[j] += STEP;
            dn[j] -= STEP;
            let fp = deformed_mean(&prim, &MotionParams::from_array(&up), t, model);
            let fm = deformed_mean(&prim, &MotionParams::from_array(&dn), t, model);
            let fd = (fp - fm) / (2.0 * STEP);
            for r in 0..3 {
                worst = worst.max(rel_err(jac[(r, j)], fd[r]));
            }
        }
    }
    worst
}

fn fd_scene<F: Fn(&[MotionParams]) -> f64>(f: F, params: &[MotionParams], i: usize, j: usize) -> f64 {
    let (mut up, mut dn) = (params.to_vec(), params.to_vec());
    let mut a = up[i].to_array();
    a[j] += STEP;
    up[i] = MotionParams::from_array(&a);
    let mut b = dn[i].to_array();
    b[j] -= STEP;
    dn[i] = MotionParams::from_array(&b);
    (f(&up) - f(&dn)) / (2.0 * STEP)
}

/// Worst relative errors `(motion smoothness, rigid coherence, trajectory
/// loss)` over `n` small random scenes, every parameter of every primitive.
pub fn scene_partials_worst(seed: u64, n: usize) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for s in 0..n {
        let cfg = SceneConfig {
            n_bodies: 2,
            primitives_per_body: 3,
            n_timesteps: 6,
            motions: vec![MotionKind::ConstantTwist, MotionKind::BezierTwist],
            rng_seed: seed.wrapping_mul(1000) + s as u64,
            ..Default::default()
        };
        let (scene, data, gt) = generate_scene(&cfg).unwrap();
        let params: Vec<MotionParams> = gt
            .params
            .iter()
            .map(|p| {
                let mut flat = p.to_array();
                for v in flat.iter_mut() {
                    *v += rng.random_range(-0.3..0.3);
                }
                MotionParams::from_array(&flat)
            })
            .collect();
        let lambda = rng.random_range(0.5..50.0);
        let graph = knn_canonical(&scene.primitives, 3).unwrap();

        let mut g_motion = vec![[0.0; MOTION_DOF]; params.len()];
        scene_motion_smoothness(&params, Some(&mut g_motion));
        let mut g_rigid = vec![[0.0; MOTION_DOF]; params.len()];
        rigid_coherence_loss(&scene.primitives, &params, &graph, lambda, Some(&mut g_rigid));
        let g_data = trajectory_loss_with_grads(&scene, &params, &data, MotionModel::GaugeFixed).grads;

        for i in 0..params.len() {
            for j in 0..MOTION_DOF {
                let fd = fd_scene(|p| scene_motion_smoothness(p, None), &params, i, j);
                worst.0 = worst.0.max(rel_err(g_motion[i][j], fd));
                let fd = fd_scene(
                    |p| rigid_coherence_loss(&scene.primitives, p, &graph, lambda, None),
                    &params,
                    i,
                    j,
                );
                worst.1 = worst.1.max(rel_err(g_rigid[i][j], fd));
                let fd = fd_scene(
                    |p| trajectory_loss_with_grads(&scene, p, &data, MotionModel::GaugeFixed).loss,
                    &params,
                    i,
                    j,
                );
                worst.2 = worst.2.max(rel_err(g_data[i][j], fd));
            }
        }
    }
    worst
}
