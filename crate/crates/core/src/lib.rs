//! Physics-guided diffusion reconstruction of chaotic ODE trajectories.
//!
//! A 1-D U-Net denoiser is trained on normalised trajectories of five chaotic
//! systems. At sampling time each reverse step is nudged towards a trajectory
//! that satisfies a differentiable fixed-step Dormand–Prince update and
//! matches sparse noisy observations. An oracle ensemble Kalman filter, a
//! Rosenstein Lyapunov estimator and paired Wilcoxon tests provide the
//! baseline and the evaluation.

pub mod dataset;
pub mod diffusion;
pub mod enkf;
pub mod error;
pub mod guidance;
pub mod harness;
pub mod integrator;
pub mod lyapunov;
pub mod metrics;
pub mod rng;
pub mod store;
pub mod systems;
pub mod tensor;

pub use error::{Error, Result};
