//! Motion-consistency training loss for monocular visual odometry, at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: rigid-motion algebra, Euler 6-DoF vectors, trajectories.
//! - [`clips`]: overlapped clip sampling, paired batches and motion bookkeeping.
//! - [`loss`]: MSE, motion-consistency loss, their weighted sum and gradients.
//! - [`autodiff`]: a small dense tensor with a reverse-mode tape and Adam.
//! - [`model`]: a toy divided space-time attention pose regressor.
//! - [`training`]: synthetic datasets and the seeded training loop.
//! - [`eval`]: KITTI odometry metrics and similarity alignment.
//! - [`io`]: pose files, run configuration, synthetic data, CSV export.
//! - [`verify`]: the gradient-check suite shared by tests and the CLI.

pub mod autodiff;
pub mod clips;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod model;
pub mod rng;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
