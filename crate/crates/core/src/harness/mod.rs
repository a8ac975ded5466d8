//! Synthetic trajectory-fitting harness.

pub mod evaluate;
pub mod fit;
pub mod io;
pub mod objective;
pub mod scene;

pub use evaluate::{evaluate, FittedState, Metrics};
pub use fit::{anchored_params, fit, zero_params, FitOutcome, FitReport, OptConfig, Optimizer};
pub use objective::{trajectory_loss, trajectory_loss_with_grads, weighted_rmse};
pub use scene::{generate_scene, GroundTruth, MotionKind, Scene, SceneConfig, TrajectoryData};
