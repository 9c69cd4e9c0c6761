//! Error metrics of one initialization against ground truth and their
//! aggregation over many segments.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{exp_so3, Rotation, Vec3};
use crate::pipeline::{initialize, InitResult, PipelineConfig, StageTimings};
use crate::segment::InitSegment;
use crate::synth::GroundTruth;

/// Similarity `(s, R, t)` minimising `Σ ‖dst − (s R src + t)‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Rotation,
    pub translation: Vec3,
}

/// Closed-form similarity alignment of `src` onto `dst` (Umeyama).
pub fn umeyama_scale(src: &[Vec3], dst: &[Vec3]) -> Result<Similarity> {
    let n = src.len();
    if n < 3 || dst.len() != n {
        return Err(Error::DegenerateAlignment);
    }
    let inv_n = 1.0 / n as f64;
    let mu_s = src.iter().sum::<Vec3>() * inv_n;
    let mu_d = dst.iter().sum::<Vec3>() * inv_n;
    let mut cov = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (cs, cd) = (s - mu_s, d - mu_d);
        cov += cd * cs.transpose();
        spread += cs * cs.transpose();
        var_s += cs.norm_squared();
    }
    cov *= inv_n;
    var_s *= inv_n;
    // collinear or coincident source points leave the rotation undetermined
    let sv = spread.singular_values();
    let mut sv: Vec<f64> = sv.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if var_s == 0.0 || sv[1] <= 1e-12 * sv[0] {
        return Err(Error::DegenerateAlignment);
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("svd u"), svd.v_t.expect("svd v_t"));
    let mut d = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = polish_rotation(u * d * v_t, src, dst, &mu_s, &mu_d);
    // optimal scale for the polished rotation; equals tr(SD)/σ² at the SVD solution
    let scale = src.iter().zip(dst).map(|(s, d)| (d - mu_d).dot(&(r * (s - mu_s)))).sum::<f64>() * inv_n / var_s;
    let translation = mu_d - r * mu_s * scale;
    Ok(Similarity { scale, rotation: Rotation::from_matrix_unchecked(r), translation })
}

/// One Newton step of `max Σ dᵀ R c` over `R Exp(δ)`, computed on the points.
/// The SVD of the cross-covariance squares the conditioning of elongated
/// clouds; the step brings the rotation back to rounding level.
fn polish_rotation(r: Matrix3<f64>, src: &[Vec3], dst: &[Vec3], mu_s: &Vec3, mu_d: &Vec3) -> Matrix3<f64> {
    let mut g = Vec3::zeros();
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        let c = s - mu_s;
        let e = r.transpose() * (d - mu_d);
        g += c.cross(&e);
        h += Matrix3::identity() * e.dot(&c) - (e * c.transpose() + c * e.transpose()) * 0.5;
    }
    match h.cholesky() {
        Some(chol) => r * exp_so3(&chol.solve(&g)).matrix(),
        None => r,
    }
}

fn angle(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Errors of a successful initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentErrors {
    /// `‖b̂g − bg*‖`, rad/s.
    pub bias: f64,
    /// RMS geodesic angle between estimated and true keyframe attitudes in
    /// the first camera frame, rad.
    pub rotation_rmse: f64,
    /// RMS velocity error in the first camera frame, m/s.
    pub velocity_rmse: f64,
    /// Angle between estimated and true gravity, deg.
    pub gravity_dir_deg: f64,
    /// Same angle for the linear solve before refinement, deg.
    pub gravity_dir_pre_deg: f64,
    /// `|ŝ / s* − 1|` with `s*` from aligning the translations to ground truth.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMetrics {
    pub index: usize,
    /// `None` when the pipeline failed on this segment.
    pub errors: Option<SegmentErrors>,
    /// Scale error below one.
    pub success: bool,
    pub failure: Option<String>,
    #[serde(skip)]
    pub timings: StageTimings,
}

/// Errors of `result` against `truth`. Fails only when the reference scale
/// cannot be aligned.
pub fn segment_errors(segment: &InitSegment, truth: &GroundTruth, result: &InitResult) -> Result<SegmentErrors> {
    let ext = &segment.extrinsics;
    let translations = segment
        .translations
        .as_ref()
        .ok_or_else(|| Error::Config("segment has no keyframe translations".into()))?;
    let reference = umeyama_scale(translations, &truth.camera_positions_c0(ext))?.scale;
    let g = truth.gravity_c0(ext);
    let rotations = truth.rotations_c0(ext);
    let velocities = truth.velocities_c0(ext);
    Ok(SegmentErrors {
        bias: (result.bias.bg - truth.gyro_bias).norm(),
        rotation_rmse: rms(result.rotations.iter().zip(&rotations).map(|(a, b)| a.angle_to(b))),
        velocity_rmse: rms(result.velocities.iter().zip(&velocities).map(|(a, b)| (a - b).norm())),
        gravity_dir_deg: angle(&result.gravity, &g).to_degrees(),
        gravity_dir_pre_deg: angle(&result.vgs.gravity, &g).to_degrees(),
        scale: (result.scale / reference - 1.0).abs(),
    })
}

/// Runs the pipeline on one segment and scores it. Pipeline failures are
/// recorded, not returned.
pub fn evaluate(index: usize, segment: &InitSegment, truth: &GroundTruth, config: &PipelineConfig) -> SegmentMetrics {
    let outcome = initialize(segment, config).and_then(|r| Ok((segment_errors(segment, truth, &r)?, r.timings)));
    match outcome {
        Ok((errors, timings)) => SegmentMetrics { index, success: errors.scale < 1.0, errors: Some(errors), failure: None, timings },
        Err(e) => SegmentMetrics { index, errors: None, success: false, failure: Some(e.to_string()), timings: StageTimings::default() },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    pub rmse: f64,
    pub mean: f64,
    pub median: f64,
}

impl MetricSummary {
    fn of(mut values: Vec<f64>) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let rmse = rms(values.iter().copied());
        values.sort_by(f64::total_cmp);
        Self { rmse, mean, median: quantile(&values, 0.5) }
    }
}

/// Linear-interpolated quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub segments: usize,
    pub successes: usize,
    pub failures: usize,
    pub success_rate: f64,
    pub bias: MetricSummary,
    pub rotation: MetricSummary,
    pub velocity: MetricSummary,
    pub gravity_dir_deg: MetricSummary,
    pub gravity_dir_pre_deg: MetricSummary,
    pub scale: MetricSummary,
    /// Q3 − Q1 of the scale error over successful segments.
    pub scale_iqr: f64,
    /// Mean wall time per stage, ms.
    #[serde(skip)]
    pub timings: StageTimings,
}

/// Error statistics over the successful segments.
pub fn aggregate(metrics: &[SegmentMetrics]) -> AggregateReport {
    let ok: Vec<&SegmentErrors> = metrics.iter().filter(|m| m.success).filter_map(|m| m.errors.as_ref()).collect();
    let pick = |f: fn(&SegmentErrors) -> f64| MetricSummary::of(ok.iter().map(|e| f(e)).collect());
    let mut scales: Vec<f64> = ok.iter().map(|e| e.scale).collect();
    scales.sort_by(f64::total_cmp);
    let timed: Vec<&StageTimings> = metrics.iter().filter(|m| m.errors.is_some()).map(|m| &m.timings).collect();
    let mean_t = |f: fn(&StageTimings) -> f64| if timed.is_empty() { 0.0 } else { timed.iter().map(|t| f(t)).sum::<f64>() / timed.len() as f64 };
    AggregateReport {
        segments: metrics.len(),
        successes: ok.len(),
        failures: metrics.iter().filter(|m| m.errors.is_none()).count(),
        success_rate: if metrics.is_empty() { 0.0 } else { ok.len() as f64 / metrics.len() as f64 },
        bias: pick(|e| e.bias),
        rotation: pick(|e| e.rotation_rmse),
        velocity: pick(|e| e.velocity_rmse),
        gravity_dir_deg: pick(|e| e.gravity_dir_deg),
        gravity_dir_pre_deg: pick(|e| e.gravity_dir_pre_deg),
        scale: pick(|e| e.scale),
        scale_iqr: quantile(&scales, 0.75) - quantile(&scales, 0.25),
        timings: StageTimings {
            bias_ms: mean_t(|t| t.bias_ms),
            preint_ms: mean_t(|t| t.preint_ms),
            vgs_ms: mean_t(|t| t.vgs_ms),
            refine_ms: mean_t(|t| t.refine_ms),
            total_ms: mean_t(|t| t.total_ms),
        },
    }
}
