//! Velocities, gravity and metric scale from bias-corrected rotations and
//! up-to-scale camera positions.
//!
//! Unknowns are stacked as `x = [v_0 .. v_{N-1}, g, s]` (3N + 4). Each
//! consecutive keyframe pair `(i, j = i+1)` with pre-integration `(α, β, Δt)`
//! contributes six rows:
//!
//! ```text
//! position:  -Δt v_i + ½Δt² g + s (p_j - p_i) = R_i α + (R_j - R_i) p_bc
//! velocity:  -v_i + v_j + Δt g                = R_i β
//! ```
//!
//! where `R_i = R_{c0 b_i}` and `p_i = p_{c0 c_i}`. Gravity is the reaction
//! vector (pointing up) expressed in the first camera frame and its norm is
//! left free.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geom::{Rotation, Vec3};
use crate::gyro_bias::Extrinsics;
use crate::preint::Preintegration;

/// Poses of one segment: body attitudes, up-to-scale camera positions and
/// the pre-integration of every consecutive keyframe pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPoses {
    /// `R_{c0 b_i}` for every keyframe.
    pub rotations: Vec<Rotation>,
    /// `p_{c0 c_i}` up to scale for every keyframe.
    pub positions: Vec<Vec3>,
    /// Pre-integration of pair `(i, i+1)`.
    pub preints: Vec<Preintegration>,
}

impl SegmentPoses {
    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    fn check(&self, needed: usize) -> Result<()> {
        let n = self.len();
        if n < needed {
            return Err(Error::TooFewKeyframes { needed, got: n });
        }
        if self.positions.len() != n || self.preints.len() + 1 != n {
            return Err(Error::Config(format!(
                "inconsistent segment poses: {} rotations, {} positions, {} pre-integrations",
                n,
                self.positions.len(),
                self.preints.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VgsSolution {
    pub scale: f64,
    /// Gravity in the first camera frame, m/s².
    pub gravity: Vec3,
    /// `v^{c0}_{b_i}` for every keyframe, m/s.
    pub velocities: Vec<Vec3>,
    pub residual_norm: f64,
}

/// Singular values below this fraction of the largest count as zero.
const RANK_TOLERANCE: f64 = 1e-9;

/// Keyframes needed for {v, g, s} to be observable: 6(N-1) >= 3N + 4.
pub const MIN_KEYFRAMES: usize = 4;

/// Assembles the stacked linear system `A x = b`.
pub fn build_system(poses: &SegmentPoses, extrinsics: &Extrinsics) -> (DMatrix<f64>, DVector<f64>) {
    let n = poses.len();
    let cols = 3 * n + 4;
    let (g_col, s_col) = (3 * n, 3 * n + 3);
    let mut a = DMatrix::zeros(6 * (n - 1), cols);
    let mut b = DVector::zeros(6 * (n - 1));
    let p_bc = extrinsics.p_bc;
    for (i, pre) in poses.preints.iter().enumerate() {
        let j = i + 1;
        let dt = pre.dt_total;
        let (r_i, r_j) = (poses.rotations[i].matrix(), poses.rotations[j].matrix());
        let dp = poses.positions[j] - poses.positions[i];
        let row = 6 * i;
        let rhs_pos = r_i * pre.alpha + (r_j - r_i) * p_bc;
        let rhs_vel = r_i * pre.beta;
        for d in 0..3 {
            a[(row + d, 3 * i + d)] = -dt;
            a[(row + d, g_col + d)] = 0.5 * dt * dt;
            a[(row + d, s_col)] = dp[d];
            b[row + d] = rhs_pos[d];

            a[(row + 3 + d, 3 * i + d)] = -1.0;
            a[(row + 3 + d, 3 * j + d)] = 1.0;
            a[(row + 3 + d, g_col + d)] = dt;
            b[row + 3 + d] = rhs_vel[d];
        }
    }
    (a, b)
}

/// Least-squares solve of the stacked velocity/gravity/scale system.
pub fn solve_vgs(poses: &SegmentPoses, extrinsics: &Extrinsics) -> Result<VgsSolution> {
    poses.check(MIN_KEYFRAMES)?;
    let n = poses.len();
    let (a, b) = build_system(poses, extrinsics);
    let cols = a.ncols();
    let svd = a.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > RANK_TOLERANCE * max_sv).count();
    if max_sv == 0.0 || rank < cols {
        return Err(Error::UnobservableScaleGravity { rank, cols });
    }
    let x = svd
        .solve(&b, RANK_TOLERANCE * max_sv)
        .map_err(|_| Error::UnobservableScaleGravity { rank, cols })?;
    let residual_norm = (&a * &x - &b).norm();
    let velocities = (0..n).map(|i| Vec3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2])).collect();
    let gravity = Vec3::new(x[3 * n], x[3 * n + 1], x[3 * n + 2]);
    let scale = x[3 * n + 3];
    if !(scale > 0.0) {
        return Err(Error::NonPositiveScale(scale));
    }
    Ok(VgsSolution { scale, gravity, velocities, residual_norm })
}

/// Least-squares velocities with scale and gravity held fixed.
pub fn velocities_from(poses: &SegmentPoses, extrinsics: &Extrinsics, scale: f64, gravity: &Vec3) -> Vec<Vec3> {
    let n = poses.len();
    if n < 2 || poses.preints.len() + 1 != n {
        return Vec::new();
    }
    let (a, b) = build_system(poses, extrinsics);
    let mut fixed = DVector::zeros(a.ncols());
    fixed.rows_mut(3 * n, 3).copy_from(gravity);
    fixed[3 * n + 3] = scale;
    let rhs = b - &a * fixed;
    let a_v = a.columns(0, 3 * n).into_owned();
    let x = a_v.svd(true, true).solve(&rhs, 0.0).expect("velocity block has full column rank");
    (0..n).map(|i| Vec3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2])).collect()
}
