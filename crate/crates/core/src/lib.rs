//! Decoupled visual-inertial initialization.
//!
//! The pipeline runs on a segment of keyframes with IMU spans and feature
//! correspondences:
//!
//! 1. gyroscope bias from the (probabilistic) normal epipolar constraint ([`gyro_bias`]),
//! 2. re-integration of the IMU with the bias removed ([`preint`]),
//! 3. velocities, gravity and scale from a linear system ([`vgs`]),
//! 4. scale and gravity refinement at known gravity magnitude ([`refine`]).
//!
//! [`synth`] generates segments with ground truth and [`ingest`] reads
//! ASL-format recordings. [`eval`] computes the benchmark metrics.

pub mod error;
pub mod eval;
pub mod geom;
pub mod gyro_bias;
pub mod ingest;
pub mod pipeline;
pub mod preint;
pub mod refine;
pub mod segment;
pub mod synth;
pub mod uncertainty;
pub mod vgs;

pub use error::{Error, Result};
pub use geom::{Mat3, Rotation, SymMat3, Vec3};
