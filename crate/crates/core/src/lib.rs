//! Gaussian-process-supported multi-mode model predictive control for an
//! automated vehicle crossing an intersection with a human-driven vehicle.
//!
//! The crate is organized bottom-up:
//!
//! * [`gp`]: scalar GP regression, training and prediction at uncertain inputs.
//! * [`driver`]: per-intention velocity-field models, rollouts and Chebyshev tubes.
//! * [`synth`]: synthetic intersection trajectories standing in for recorded data.
//! * [`classifier`]: online intention probabilities and the likely-intention set.
//! * [`mpc`]: ego vehicle model, path reference and the multi-mode OCP solver.
//! * [`sim`]: closed-loop scenarios, batches, logs and plots.
//! * [`config`]: layered TOML/JSON run configuration.
//! * [`cli`]: the `gpmpc` command pipeline.

pub mod classifier;
pub mod cli;
pub mod config;
pub mod driver;
pub mod error;
pub mod gp;
pub mod mpc;
pub mod sim;
pub mod synth;

pub use error::{Error, Result};
/// Matrix types used in the GP interfaces.
pub use nalgebra;
