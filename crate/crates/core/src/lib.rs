//! Rigid-body motion model for time-varying Gaussian primitives.
//!
//! Each primitive moves by an SE(3) transform generated from a
//! time-conditioned twist (a base twist plus a quadratic Bézier residual over
//! the primitive's temporal window), applied about a gauge-fixed local
//! anchor. The crate also provides the motion regularizers, fixed-budget
//! relocation, and a synthetic harness that fits motion parameters to known
//! trajectories.

pub mod deform;
pub mod error;
pub mod harness;
pub mod regularization;
pub mod relocation;
pub mod se3;
pub mod temporal;

pub use deform::{deform, deform_with_grads, DeformedState, MotionModel, MotionParams, Primitive};
pub use error::{Error, Result};
pub use regularization::{LossWeights, NeighborGraph};
pub use relocation::{RelocationConfig, RelocationCue};
pub use se3::{LogParam, Mat3, RigidTransform, StabilizedCoeffs, Twist, Vec3};
pub use temporal::{BezierTwists, TemporalProfile};
