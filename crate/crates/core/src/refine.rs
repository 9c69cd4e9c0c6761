//! Scale and gravity refinement at known gravity magnitude.
//!
//! Gravity is written `ĝ = R_c0I · Exp([δθ_x, δθ_y, 0]) · g^I · G` with
//! `g^I = (0, 0, 1)`. Velocities are eliminated over consecutive keyframe
//! triples `(i, j, k)`, which leaves three rows per triple in the four
//! unknowns `(s, δθ_x, δθ_y)`:
//!
//! ```text
//! λ s + φ δθ_xy = ψ
//! λ = (p_j - p_i) Δjk - (p_k - p_j) Δij
//! φ = ½ R_c0I ⌊g^I⌋ G T                  (first two columns)
//! ψ = (R_j - R_i) p_bc Δjk - (R_k - R_j) p_bc Δij
//!   + R_i α_ij Δjk - R_i β_ij Δij Δjk - R_j α_jk Δij
//!   + ½ R_c0I g^I G T
//! T = Δij² Δjk + Δjk² Δij
//! ```

use nalgebra::{DMatrix, DVector, Matrix3x2, Vector2};

use crate::error::{Error, Result};
use crate::geom::{exp_so3, skew, Rotation, Vec3};
use crate::gyro_bias::Extrinsics;
use crate::vgs::{SegmentPoses, VgsSolution, MIN_KEYFRAMES};

pub const DEFAULT_GRAVITY: f64 = 9.81;

const CONVERGENCE_TOLERANCE: f64 = 1e-8;
const RANK_TOLERANCE: f64 = 1e-9;

fn g_inertial() -> Vec3 {
    Vec3::new(0.0, 0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementState {
    pub r_c0i: Rotation,
    pub g_mag: f64,
    pub scale: f64,
    /// Last tangent update applied to `r_c0i`.
    pub delta_theta_xy: Vector2<f64>,
    pub iterations: usize,
}

impl RefinementState {
    /// `R_c0I g^I G`, with its Euclidean norm equal to `G` in floating point.
    pub fn gravity(&self) -> Vec3 {
        vector_with_norm(&(self.r_c0i * g_inertial()), self.g_mag)
    }
}

/// Rescales `dir` so that `norm()` returns `mag` exactly.
///
/// The rounded sum of squares hits the one or two doubles whose square root
/// is `mag` only for sparse combinations of components. A square close to a
/// power of two can also pin the parity of the sum, so after the
/// multiplicative correction the components are jittered (deterministically,
/// with a slowly widening range of ulps) and one of them is re-solved from
/// the others. The direction moves by a few 1e-12 rad at most.
pub fn vector_with_norm(dir: &Vec3, mag: f64) -> Vec3 {
    let n = dir.norm();
    if n == 0.0 {
        return *dir;
    }
    let mut v = dir * (mag / n);
    for _ in 0..4 {
        let n = v.norm();
        if n == mag {
            return v;
        }
        v *= mag / n;
    }
    let base = v;
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut jitter = |range: i64| {
        state = state.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1_442_695_040_888_963_407);
        ((state >> 33) % (2 * range as u64 + 1)) as i64 - range
    };
    for trial in 0..20_000 {
        let mut w = base;
        if trial > 0 {
            let range = 32i64 << (trial / 1000).min(8);
            for i in 0..3 {
                w[i] = ulp_step(base[i], jitter(range));
            }
        }
        for k in (0..3).rev() {
            let rest: f64 = (0..3).filter(|&i| i != k).map(|i| w[i] * w[i]).sum();
            let need = mag * mag - rest;
            if need <= 0.0 {
                continue;
            }
            let c = need.sqrt().copysign(base[k]);
            // small components are badly conditioned to re-solve
            if (c - w[k]).abs() > 1e-12 * mag {
                continue;
            }
            let mut u = w;
            for dk in ulp_offsets(2) {
                u[k] = ulp_step(c, dk);
                if u.norm() == mag {
                    return u;
                }
            }
        }
    }
    v
}

/// 0, 1, -1, 2, -2, ... up to `max` in magnitude.
fn ulp_offsets(max: i64) -> impl Iterator<Item = i64> {
    (0..=2 * max).map(|i| if i % 2 == 1 { (i + 1) / 2 } else { -(i / 2) })
}

fn ulp_step(x: f64, d: i64) -> f64 {
    if x == 0.0 {
        return x;
    }
    // integer steps on the bit pattern of a finite non-zero value move by ulps
    // away from zero for positive d
    f64::from_bits((x.to_bits() as i64 + d) as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOptions {
    pub g_mag: f64,
    pub max_outer: usize,
    pub weighting: RowWeighting,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self { g_mag: DEFAULT_GRAVITY, max_outer: 4, weighting: RowWeighting::default() }
    }
}

/// How the stacked triple rows are weighted in the least-squares solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RowWeighting {
    /// Ordinary least squares on the rows as built.
    Uniform,
    /// Whitened for isotropic noise on the keyframe positions. Neighbouring
    /// triples share two positions, so their residuals are correlated.
    #[default]
    Correlated,
}

impl std::str::FromStr for RowWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Self::Uniform),
            "correlated" => Ok(Self::Correlated),
            other => Err(Error::Config(format!("unknown row weighting '{other}'"))),
        }
    }
}

impl RefineOptions {
    /// One linearized solve without re-linearization.
    pub fn single_shot() -> Self {
        Self { max_outer: 1, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripleRow {
    pub lambda: Vec3,
    pub phi: Matrix3x2<f64>,
    pub psi: Vec3,
}

/// Rotation taking `g^I = (0,0,1)` onto the direction of `g_c0`.
pub fn gravity_to_rotation(g_c0: &Vec3) -> Rotation {
    let gi = g_inertial();
    let cross = gi.cross(g_c0);
    let sin = cross.norm();
    let cos = gi.dot(g_c0);
    if sin == 0.0 {
        return if cos >= 0.0 {
            Rotation::identity()
        } else {
            exp_so3(&Vec3::new(std::f64::consts::PI, 0.0, 0.0))
        };
    }
    let theta = sin.atan2(cos);
    exp_so3(&(cross / sin * theta))
}

pub fn build_triple_rows(poses: &SegmentPoses, state: &RefinementState, extrinsics: &Extrinsics) -> Vec<TripleRow> {
    let n = poses.len().min(poses.positions.len()).min(poses.preints.len() + 1);
    if n < 3 {
        return Vec::new();
    }
    let p_bc = extrinsics.p_bc;
    let r_c0i = state.r_c0i.matrix();
    let g = state.g_mag;
    let gi = g_inertial();
    let dtheta_block = 0.5 * r_c0i * skew(&gi) * g;
    let g_term = 0.5 * r_c0i * gi * g;
    (0..n - 2)
        .map(|i| {
            let (j, k) = (i + 1, i + 2);
            let (pre_ij, pre_jk) = (&poses.preints[i], &poses.preints[j]);
            let (d_ij, d_jk) = (pre_ij.dt_total, pre_jk.dt_total);
            let t = d_ij * d_ij * d_jk + d_jk * d_jk * d_ij;
            let (p_i, p_j, p_k) = (poses.positions[i], poses.positions[j], poses.positions[k]);
            let (r_i, r_j, r_k) = (poses.rotations[i].matrix(), poses.rotations[j].matrix(), poses.rotations[k].matrix());
            let lambda = (p_j - p_i) * d_jk - (p_k - p_j) * d_ij;
            let phi = (dtheta_block * t).fixed_columns::<2>(0).into_owned();
            let psi = (r_j - r_i) * p_bc * d_jk - (r_k - r_j) * p_bc * d_ij + r_i * pre_ij.alpha * d_jk
                - r_i * pre_ij.beta * (d_ij * d_jk)
                - r_j * pre_jk.alpha * d_ij
                + g_term * t;
            TripleRow { lambda, phi, psi }
        })
        .collect()
}

/// Stacked `[λ φ]` and `ψ`.
pub fn stack_rows(rows: &[TripleRow]) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(3 * rows.len(), 3);
    let mut b = DVector::zeros(3 * rows.len());
    for (r, row) in rows.iter().enumerate() {
        for d in 0..3 {
            a[(3 * r + d, 0)] = row.lambda[d];
            a[(3 * r + d, 1)] = row.phi[(d, 0)];
            a[(3 * r + d, 2)] = row.phi[(d, 1)];
            b[3 * r + d] = row.psi[d];
        }
    }
    (a, b)
}

/// Cholesky factor of the covariance of the triple position terms when every
/// keyframe position except the first carries unit isotropic noise.
fn triple_noise_factor(poses: &SegmentPoses) -> Result<DMatrix<f64>> {
    let n = poses.len();
    let t = n - 2;
    let dts: Vec<f64> = poses.preints.iter().map(|p| p.dt_total).collect();
    let mut d = DMatrix::zeros(t, n - 1);
    for r in 0..t {
        let (dij, djk) = (dts[r], dts[r + 1]);
        // coefficients of p_i, p_j, p_k in lambda; column c is position c+1
        for (k, c) in [(r, -djk), (r + 1, dij + djk), (r + 2, -dij)] {
            if k > 0 {
                d[(r, k - 1)] = c;
            }
        }
    }
    let cov = &d * d.transpose();
    cov.cholesky()
        .map(|c| c.l())
        .ok_or(Error::RefinementUnobservable { rank: 0 })
}

/// Applies `(L⁻¹ ⊗ I₃)` to rows ordered triple-major.
fn whiten(l: &DMatrix<f64>, m: &mut DMatrix<f64>) {
    let t = l.nrows();
    for d in 0..3 {
        let mut sub = DMatrix::from_fn(t, m.ncols(), |r, c| m[(3 * r + d, c)]);
        l.solve_lower_triangular_mut(&mut sub);
        for r in 0..t {
            for c in 0..m.ncols() {
                m[(3 * r + d, c)] = sub[(r, c)];
            }
        }
    }
}

pub fn refine_scale_gravity(
    poses: &SegmentPoses,
    initial: &VgsSolution,
    extrinsics: &Extrinsics,
    opts: &RefineOptions,
) -> Result<RefinementState> {
    if poses.len() < MIN_KEYFRAMES {
        return Err(Error::TooFewKeyframes { needed: MIN_KEYFRAMES, got: poses.len() });
    }
    if initial.gravity.norm() == 0.0 {
        return Err(Error::RefinementUnobservable { rank: 0 });
    }
    let mut state = RefinementState {
        r_c0i: gravity_to_rotation(&initial.gravity),
        g_mag: opts.g_mag,
        scale: initial.scale,
        delta_theta_xy: Vector2::zeros(),
        iterations: 0,
    };
    let factor = match opts.weighting {
        RowWeighting::Uniform => None,
        RowWeighting::Correlated => Some(triple_noise_factor(poses)?),
    };
    for _ in 0..opts.max_outer.max(1) {
        let rows = build_triple_rows(poses, &state, extrinsics);
        let (mut a, b) = stack_rows(&rows);
        let mut b = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        if let Some(l) = &factor {
            whiten(l, &mut a);
            whiten(l, &mut b);
        }
        let b = b.column(0).into_owned();
        let svd = a.svd(true, true);
        let max_sv = svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|&&s| s > RANK_TOLERANCE * max_sv).count();
        if max_sv == 0.0 || rank < 3 {
            return Err(Error::RefinementUnobservable { rank });
        }
        let x = svd
            .solve(&b, RANK_TOLERANCE * max_sv)
            .map_err(|_| Error::RefinementUnobservable { rank })?;
        let dtheta = Vector2::new(x[1], x[2]);
        state.scale = x[0];
        state.r_c0i = (state.r_c0i * exp_so3(&Vec3::new(dtheta.x, dtheta.y, 0.0))).orthonormalized();
        state.delta_theta_xy = dtheta;
        state.iterations += 1;
        if dtheta.norm() < CONVERGENCE_TOLERANCE {
            break;
        }
    }
    if !(state.scale > 0.0) {
        return Err(Error::NonPositiveScale(state.scale));
    }
    Ok(state)
}
