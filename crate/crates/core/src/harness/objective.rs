//! Weighted trajectory loss and the composite objective used by the fitter.

use crate::deform::{deformed_mean, deformed_mean_with_grads, MotionModel, MotionParams, MOTION_DOF};
use crate::harness::scene::{Scene, TrajectoryData};
use crate::regularization::{
    opacity_regularizer, rigid_coherence_loss, scene_motion_smoothness, total_objective, LossWeights, NeighborGraph,
};
use crate::se3::Vec3;

/// `Σ γ ‖μ(t) − y‖² / Σ γ` over all primitives and samples.
pub fn trajectory_loss(scene: &Scene, params: &[MotionParams], data: &TrajectoryData, model: MotionModel) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, prim) in scene.primitives.iter().enumerate() {
        for (k, &t) in data.times.iter().enumerate() {
            let w = data.weights[i][k];
            let r = deformed_mean(prim, &params[i], t, model) - data.targets[i][k];
            num += w * r.norm_squared();
            den += w;
        }
    }
    num / den
}

pub fn weighted_rmse(scene: &Scene, params: &[MotionParams], data: &TrajectoryData, model: MotionModel) -> f64 {
    trajectory_loss(scene, params, data, model).sqrt()
}

/// Trajectory loss with its parameter gradient and the per-sample position
/// gradients `∂L/∂μᵢ(t_k)` used as relocation cues.
#[derive(Debug, Clone)]
pub struct DataTerm {
    pub loss: f64,
    pub grads: Vec<[f64; MOTION_DOF]>,
    pub position_grads: Vec<Vec<Vec3>>,
}

pub fn trajectory_loss_with_grads(
    scene: &Scene,
    params: &[MotionParams],
    data: &TrajectoryData,
    model: MotionModel,
) -> DataTerm {
    let den: f64 = data.weights.iter().flatten().sum();
    let mut loss = 0.0;
    let mut grads = vec![[0.0; MOTION_DOF]; scene.len()];
    let mut position_grads = Vec::with_capacity(scene.len());
    for (i, prim) in scene.primitives.iter().enumerate() {
        let mut row = Vec::with_capacity(data.times.len());
        let g = &mut grads[i];
        for (k, &t) in data.times.iter().enumerate() {
            let w = data.weights[i][k] / den;
            let (mu, jac) = deformed_mean_with_grads(prim, &params[i], t, model);
            let r = mu - data.targets[i][k];
            loss += w * r.norm_squared();
            let d_mu = r * (2.0 * w);
            let contrib = jac.tr_mul(&d_mu);
            for (gj, cj) in g.iter_mut().zip(contrib.iter()) {
                *gj += cj;
            }
            row.push(d_mu);
        }
        position_grads.push(row);
    }
    DataTerm {
        loss,
        grads,
        position_grads,
    }
}

/// Breakdown of the composite objective at one parameter setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub data: f64,
    pub reg: f64,
    pub motion: f64,
    pub rigid: f64,
    pub total: f64,
}

/// Composite objective and its gradient.
pub fn objective_with_grads(
    scene: &Scene,
    params: &[MotionParams],
    data: &TrajectoryData,
    graph: &NeighborGraph,
    weights: &LossWeights,
    model: MotionModel,
) -> (ObjectiveValue, DataTerm, Vec<[f64; MOTION_DOF]>) {
    let term = trajectory_loss_with_grads(scene, params, data, model);
    let mut grads = term.grads.clone();

    let mut motion_grad = vec![[0.0; MOTION_DOF]; scene.len()];
    let motion = scene_motion_smoothness(params, Some(&mut motion_grad));
    let mut rigid_grad = vec![[0.0; MOTION_DOF]; scene.len()];
    let rigid = rigid_coherence_loss(
        &scene.primitives,
        params,
        graph,
        weights.lambda_c,
        Some(&mut rigid_grad),
    );
    for ((g, m), r) in grads.iter_mut().zip(&motion_grad).zip(&rigid_grad) {
        for j in 0..MOTION_DOF {
            g[j] += weights.w_motion * m[j] + weights.w_rigid * r[j];
        }
    }
    // Opacities are fixed during fitting, so the opacity term has no gradient.
    let reg = opacity_regularizer(&scene.primitives);
    let value = ObjectiveValue {
        data: term.loss,
        reg,
        motion,
        rigid,
        total: total_objective(term.loss, reg, motion, rigid, weights),
    };
    (value, term, grads)
}
