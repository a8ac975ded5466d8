//! Metrics for a fitted scene against the generated ground truth.

use crate::deform::{deformed_mean, MotionModel, MotionParams};
use crate::harness::fit::base_twist_error;
use crate::harness::scene::{GroundTruth, Scene, TrajectoryData};

/// Fitted state: primitives (which relocation may have rewritten), motion
/// parameters and the trajectory row each slot tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedState {
    pub scene: Scene,
    pub params: Vec<MotionParams>,
    pub lineage: Vec<usize>,
    pub model: MotionModel,
    /// Anchors were held at ground truth, so twists are comparable.
    pub anchors_at_truth: bool,
}

impl FittedState {
    /// State whose slot `i` tracks trajectory row `i`.
    pub fn new(scene: Scene, params: Vec<MotionParams>, model: MotionModel) -> Self {
        let lineage = (0..scene.len()).collect();
        Self {
            scene,
            params,
            lineage,
            model,
            anchors_at_truth: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub weighted_rmse: f64,
    pub rmse_per_body: Vec<f64>,
    /// Largest canonical extent of each body in the generated scene.
    pub body_diameter: Vec<f64>,
    /// Only meaningful when the fit held anchors at ground truth.
    pub twist_error: Vec<Option<f64>>,
    pub primitive_count: usize,
}

/// Scores a fitted state against the original trajectories. Slot `i` is
/// compared with trajectory row `fitted.lineage[i]`.
pub fn evaluate(fitted: &FittedState, truth_scene: &Scene, truth: &GroundTruth, data: &TrajectoryData) -> Metrics {
    let nb = truth_scene.n_bodies;
    let mut num = vec![0.0; nb];
    let mut den = vec![0.0; nb];
    for (i, prim) in fitted.scene.primitives.iter().enumerate() {
        let row = fitted.lineage[i];
        let b = truth_scene.body[row];
        for (k, &t) in data.times.iter().enumerate() {
            let w = data.weights[row][k];
            let r = deformed_mean(prim, &fitted.params[i], t, fitted.model) - data.targets[row][k];
            num[b] += w * r.norm_squared();
            den[b] += w;
        }
    }
    let total_num: f64 = num.iter().sum();
    let total_den: f64 = den.iter().sum();
    let twist_error = if fitted.anchors_at_truth {
        base_twist_error(&fitted.scene, &fitted.params, truth)
            .into_iter()
            .map(Some)
            .collect()
    } else {
        vec![None; nb]
    };
    Metrics {
        weighted_rmse: (total_num / total_den).sqrt(),
        rmse_per_body: num
            .iter()
            .zip(&den)
            .map(|(n, d)| if *d > 0.0 { (n / d).sqrt() } else { 0.0 })
            .collect(),
        body_diameter: (0..nb).map(|b| truth_scene.body_diameter(b)).collect(),
        twist_error,
        primitive_count: fitted.scene.len(),
    }
}
