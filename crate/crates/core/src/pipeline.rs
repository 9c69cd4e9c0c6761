//! The four initialization steps on one segment.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::geom::{Rotation, Vec3};
use crate::gyro_bias::{estimate_bias, BiasEstimate, BiasMode, BiasSolverOptions};
use crate::preint::Preintegration;
use crate::refine::{refine_scale_gravity, RefineOptions, RefinementState};
use crate::segment::{InitSegment, Pairing};
use crate::uncertainty::Mat2;
use crate::vgs::{solve_vgs, velocities_from, SegmentPoses, VgsSolution};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mode: BiasMode,
    pub refine: bool,
    pub pairing: Pairing,
    pub bias: BiasSolverOptions,
    pub refinement: RefineOptions,
    /// Extra bias solves after re-integrating at the current estimate.
    pub relinearizations: usize,
    /// Pixel covariance for observations that carry none (PNEC mode).
    pub default_pixel_cov: Mat2,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: BiasMode::Pnec,
            refine: true,
            pairing: Pairing::Consecutive,
            bias: BiasSolverOptions::default(),
            refinement: RefineOptions::default(),
            relinearizations: 1,
            default_pixel_cov: Mat2::identity(),
        }
    }
}

/// Wall time per stage, ms.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StageTimings {
    pub bias_ms: f64,
    pub preint_ms: f64,
    pub vgs_ms: f64,
    pub refine_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitResult {
    pub bias: BiasEstimate,
    /// `R_{c0 b_i}` from the bias-corrected pre-integration.
    pub rotations: Vec<Rotation>,
    pub vgs: VgsSolution,
    pub refinement: Option<RefinementState>,
    pub scale: f64,
    /// Gravity in the first camera frame after the last stage.
    pub gravity: Vec3,
    pub velocities: Vec<Vec3>,
    pub timings: StageTimings,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Runs bias estimation, re-integration, the linear solve and (optionally)
/// refinement.
pub fn initialize(segment: &InitSegment, config: &PipelineConfig) -> Result<InitResult> {
    let start = Instant::now();
    segment.validate()?;
    let translations = segment
        .translations
        .clone()
        .ok_or_else(|| Error::Config("segment has no keyframe translations".into()))?;

    let t = Instant::now();
    let uncertainty = config.mode == BiasMode::Pnec;
    let cov = Some(&config.default_pixel_cov);
    let mut bg = Vec3::zeros();
    let mut bias = None;
    for _ in 0..=config.relinearizations {
        let problems = segment.pair_problems(config.pairing, &bg, uncertainty, cov)?;
        let est = estimate_bias(&problems, config.mode, bg, &config.bias)?;
        bg = est.bg;
        bias = Some(est);
    }
    let bias = bias.expect("at least one bias solve");
    let bias_ms = ms_since(t);

    let t = Instant::now();
    let preints: Vec<Preintegration> = segment.consecutive_preints(&bias.bg)?;
    let mut rotations = Vec::with_capacity(segment.len());
    rotations.push(segment.extrinsics.r_bc.transpose());
    for p in &preints {
        let last = *rotations.last().expect("non-empty");
        rotations.push((last * p.gamma).orthonormalized());
    }
    let poses = SegmentPoses { rotations: rotations.clone(), positions: translations, preints };
    let preint_ms = ms_since(t);

    let t = Instant::now();
    let vgs = solve_vgs(&poses, &segment.extrinsics)?;
    let vgs_ms = ms_since(t);

    let t = Instant::now();
    let (refinement, scale, gravity, velocities) = if config.refine {
        let state = refine_scale_gravity(&poses, &vgs, &segment.extrinsics, &config.refinement)?;
        let g = state.gravity();
        let v = velocities_from(&poses, &segment.extrinsics, state.scale, &g);
        let s = state.scale;
        (Some(state), s, g, v)
    } else {
        (None, vgs.scale, vgs.gravity, vgs.velocities.clone())
    };
    let refine_ms = ms_since(t);

    Ok(InitResult {
        bias,
        rotations,
        vgs,
        refinement,
        scale,
        gravity,
        velocities,
        timings: StageTimings { bias_ms, preint_ms, vgs_ms, refine_ms, total_ms: ms_since(start) },
    })
}
