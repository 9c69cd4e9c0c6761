//! Gyroscope bias from the normal epipolar constraint.
//!
//! For a keyframe pair every correspondence defines an epipolar-plane normal
//! `n_k = ⌊f_i⌋ₓ R_bcᵀ γ Exp(J bg) R_bc f_j`. With the right rotation all
//! normals are coplanar, so the smallest eigenvalue of `Σ w_k n_k n_kᵀ`
//! vanishes. The bias is the minimizer of the sum of those eigenvalues over
//! all keyframe pairs.
//!
//! In PNEC mode each normal is weighted by the inverse variance of its
//! residual, propagated from the bearing covariance with the pre-integrated
//! pose. Weights are refreshed from the current bias in an outer loop and
//! frozen while Levenberg-Marquardt runs on the bias.

use crate::error::{Error, Result};
use crate::geom::{
    cayley_from_rotation_vector_jacobian, cayley_jacobians, cayley_to_rotation, min_eig_sym3,
    rotation_vector_to_cayley, skew, sym3_eigen, sym3_eigenvalues, Mat3, Rotation, SymMat3, Vec3,
};
use crate::preint::{apply_gyro_bias, Preintegration};
use crate::uncertainty::FeatureUncertainty;

/// A correspondence between unit bearings in keyframes i and j.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BearingPair {
    pub f_i: Vec3,
    pub f_j: Vec3,
    /// Uncertainty of `f_j`; required in PNEC mode.
    pub uncertainty: Option<FeatureUncertainty>,
}

impl BearingPair {
    pub fn new(f_i: Vec3, f_j: Vec3) -> Self {
        Self { f_i, f_j, uncertainty: None }
    }
}

/// Camera-to-body calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    pub r_bc: Rotation,
    /// Camera origin in the body frame, m.
    pub p_bc: Vec3,
}

impl Default for Extrinsics {
    fn default() -> Self {
        Self { r_bc: Rotation::identity(), p_bc: Vec3::zeros() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyframePairProblem {
    pub bearings: Vec<BearingPair>,
    pub preint: Preintegration,
    pub extrinsics: Extrinsics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasMode {
    Nec,
    Pnec,
}

impl std::str::FromStr for BiasMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nec" => Ok(BiasMode::Nec),
            "pnec" => Ok(BiasMode::Pnec),
            other => Err(Error::Config(format!("unknown bias mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for BiasMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BiasMode::Nec => "nec",
            BiasMode::Pnec => "pnec",
        })
    }
}

/// Translation used in the PNEC residual variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceTranslation {
    /// `p_ij = R_bcᵀ (α + γ p_bc - p_bc)` from the pre-integration. α also
    /// carries `½ g Δt²`, which skews the direction on slow motion.
    Preintegrated,
    /// Unit direction from the minimum eigenvector of the current normal
    /// matrix, which is the NEC translation estimate.
    #[default]
    Eigenvector,
}

impl std::str::FromStr for VarianceTranslation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "preintegrated" => Ok(Self::Preintegrated),
            "eigenvector" => Ok(Self::Eigenvector),
            other => Err(Error::Config(format!("unknown variance translation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasSolverOptions {
    /// Re-weighting rounds in PNEC mode.
    pub max_reweightings: usize,
    pub max_iterations: usize,
    pub initial_damping: f64,
    /// Floor on the propagated residual variance.
    pub variance_floor: f64,
    /// Pairs with fewer correspondences are dropped.
    pub min_correspondences: usize,
    pub step_tolerance: f64,
    pub relative_decrease_tolerance: f64,
    pub variance_translation: VarianceTranslation,
}

impl Default for BiasSolverOptions {
    fn default() -> Self {
        Self {
            max_reweightings: 5,
            max_iterations: 50,
            initial_damping: 1e-4,
            variance_floor: 1e-10,
            min_correspondences: 10,
            step_tolerance: 1e-10,
            relative_decrease_tolerance: 1e-12,
            variance_translation: VarianceTranslation::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasEstimate {
    /// Estimated gyroscope bias, rad/s.
    pub bg: Vec3,
    /// Sum of smallest eigenvalues at `bg`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Indices of input problems dropped for having too few correspondences.
    pub dropped_pairs: Vec<usize>,
    /// Indices of input problems whose pre-integrated translation vanishes.
    pub degenerate_pairs: Vec<usize>,
}

/// Relative gap between the two smallest eigenvalues below which the
/// analytic gradient is replaced by finite differences.
const EIGEN_GAP_TOLERANCE: f64 = 1e-10;

/// Residual variance of one correspondence, `σ̃² = vᵀ Σ_k v` with
/// `v = R_ijᵀ ⌊f_i⌋ₓᵀ p_ij`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairVariance {
    pub sigma2: f64,
    /// The pre-integrated translation is zero, so the variance is only the floor.
    pub degenerate_translation: bool,
}

/// Relative camera motion `(R_ij, p_ij)` predicted by pre-integration at bias `bg`.
pub fn preintegrated_camera_motion(problem: &KeyframePairProblem, bg: &Vec3) -> (Rotation, Vec3) {
    let gamma = apply_gyro_bias(&problem.preint, bg);
    let Extrinsics { r_bc, p_bc } = problem.extrinsics;
    let r_ij = r_bc.transpose() * gamma * r_bc;
    let p_ij = r_bc.transpose() * (problem.preint.alpha + gamma * p_bc - p_bc);
    (r_ij, p_ij)
}

fn translation_is_degenerate(p_ij: &Vec3) -> bool {
    p_ij.norm() <= 1e-9
}

fn variance_with(pair: &BearingPair, r_ij: &Rotation, p_ij: &Vec3, floor: f64) -> PairVariance {
    let degenerate_translation = translation_is_degenerate(p_ij);
    let sigma2 = match pair.uncertainty {
        Some(u) if !degenerate_translation => {
            let v = r_ij.transpose() * (skew(&pair.f_i).transpose() * p_ij);
            u.sigma3d.quadratic_form(&v)
        }
        _ => 0.0,
    };
    PairVariance { sigma2: sigma2.max(floor), degenerate_translation }
}

/// Propagated variance of the epipolar residual of one correspondence.
pub fn pnec_variance(pair: &BearingPair, problem: &KeyframePairProblem, bg: &Vec3, floor: f64) -> PairVariance {
    let (r_ij, p_ij) = preintegrated_camera_motion(problem, bg);
    variance_with(pair, &r_ij, &p_ij, floor)
}

/// Inverse-variance weights for every correspondence of a problem.
pub fn pnec_weights(problem: &KeyframePairProblem, bg: &Vec3, floor: f64) -> Vec<f64> {
    let (r_ij, p_ij) = preintegrated_camera_motion(problem, bg);
    problem
        .bearings
        .iter()
        .map(|b| 1.0 / variance_with(b, &r_ij, &p_ij, floor).sigma2)
        .collect()
}

/// Inverse-variance weights using the NEC translation estimate at `bg` under
/// the current weights.
pub fn pnec_weights_eigenvector(problem: &KeyframePairProblem, bg: &Vec3, current: &[f64], floor: f64) -> Vec<f64> {
    let (r_ij, _) = preintegrated_camera_motion(problem, bg);
    let (_, t) = min_eig_sym3(&nec_matrix_weighted(problem, bg, current));
    problem
        .bearings
        .iter()
        .map(|b| 1.0 / variance_with(b, &r_ij, &t, floor).sigma2)
        .collect()
}

/// Bias correction rotation `Exp(J bg)` through its Cayley parameters.
fn bias_rotation(problem: &KeyframePairProblem, bg: &Vec3) -> Rotation {
    let phi = problem.preint.jac_gamma_bg * (bg - problem.preint.gyro_bias);
    cayley_to_rotation(&rotation_vector_to_cayley(&phi))
}

/// Camera-frame relative rotation at bias `bg`.
fn camera_rotation(problem: &KeyframePairProblem, bg: &Vec3) -> Mat3 {
    let r_bc = problem.extrinsics.r_bc.matrix();
    r_bc.transpose() * problem.preint.gamma.matrix() * bias_rotation(problem, bg).matrix() * r_bc
}

fn normal(pair: &BearingPair, r_cc: &Mat3) -> Vec3 {
    pair.f_i.cross(&(r_cc * pair.f_j))
}

/// Unweighted normal matrix `M' = Σ n_k n_kᵀ`.
pub fn nec_matrix(problem: &KeyframePairProblem, bg: &Vec3) -> SymMat3 {
    let r_cc = camera_rotation(problem, bg);
    let mut m = SymMat3::zeros();
    for pair in &problem.bearings {
        m.add_outer(&normal(pair, &r_cc), 1.0);
    }
    m
}

/// Normal matrix with fixed per-correspondence weights.
pub fn nec_matrix_weighted(problem: &KeyframePairProblem, bg: &Vec3, weights: &[f64]) -> SymMat3 {
    let r_cc = camera_rotation(problem, bg);
    let mut m = SymMat3::zeros();
    for (pair, w) in problem.bearings.iter().zip(weights) {
        m.add_outer(&normal(pair, &r_cc), *w);
    }
    m
}

/// PNEC normal matrix `M'' = Σ n_k n_kᵀ / σ̃_k²` with weights taken at `bg`.
pub fn weighted_nec_matrix(problem: &KeyframePairProblem, bg: &Vec3, floor: f64) -> SymMat3 {
    nec_matrix_weighted(problem, bg, &pnec_weights(problem, bg, floor))
}

/// Smallest eigenvalue of the weighted normal matrix.
pub fn problem_eigenvalue(problem: &KeyframePairProblem, bg: &Vec3, weights: &[f64]) -> f64 {
    min_eig_sym3(&nec_matrix_weighted(problem, bg, weights)).0
}

/// Derivatives of `Exp(J (bg - b_lin))` with respect to each bias component.
fn bias_rotation_derivatives(problem: &KeyframePairProblem, bg: &Vec3) -> [Mat3; 3] {
    let jac = problem.preint.jac_gamma_bg;
    let phi = jac * (bg - problem.preint.gyro_bias);
    let c = rotation_vector_to_cayley(&phi);
    let dr_dc = cayley_jacobians(&c);
    let dc_dbg = cayley_from_rotation_vector_jacobian(&phi) * jac;
    std::array::from_fn(|l| (0..3).fold(Mat3::zeros(), |acc, m| acc + dr_dc[m] * dc_dbg[(m, l)]))
}

/// Per-problem objective with its gradient and Gauss-Newton Hessian.
#[derive(Debug, Clone, Copy)]
struct LocalModel {
    value: f64,
    gradient: Vec3,
    hessian: Mat3,
}

fn local_model(problem: &KeyframePairProblem, bg: &Vec3, weights: &[f64]) -> LocalModel {
    let r_bc = problem.extrinsics.r_bc.matrix();
    let r_cc = camera_rotation(problem, bg);
    let mut m = SymMat3::zeros();
    for (pair, w) in problem.bearings.iter().zip(weights) {
        m.add_outer(&normal(pair, &r_cc), *w);
    }
    let (value, v) = min_eig_sym3(&m);
    let (eigs, vecs) = sym3_eigen(&m);
    let scale = m.matrix().abs().max().max(f64::MIN_POSITIVE);
    let near_degenerate = (eigs[1] - eigs[0]) / scale < EIGEN_GAP_TOLERANCE;

    let derivs = bias_rotation_derivatives(problem, bg);
    // d(r_cc)/d(bg_l) = R_bcᵀ γ (dE/dbg_l) R_bc
    let left = r_bc.transpose() * problem.preint.gamma.matrix();
    let d_rcc: [Mat3; 3] = std::array::from_fn(|l| left * derivs[l] * r_bc);

    let mut gradient = Vec3::zeros();
    let mut gauss_newton = Mat3::zeros();
    // vᵀ (∂M/∂bg_l) u for the two larger eigenvectors u
    let mut coupling = [Vec3::zeros(); 2];
    for (pair, w) in problem.bearings.iter().zip(weights) {
        let n = normal(pair, &r_cc);
        let dn: [Vec3; 3] = std::array::from_fn(|l| pair.f_i.cross(&(d_rcc[l] * pair.f_j)));
        let e = v.dot(&n);
        let de = Vec3::new(v.dot(&dn[0]), v.dot(&dn[1]), v.dot(&dn[2]));
        gradient += de * (2.0 * w * e);
        gauss_newton += de * de.transpose() * (2.0 * w);
        for (c, u) in coupling.iter_mut().zip(&vecs[1..]) {
            let un = u.dot(&n);
            *c += Vec3::from_fn(|l, _| w * (de[l] * un + e * u.dot(&dn[l])));
        }
    }
    // second-order eigenvalue perturbation: the minimum eigenvector rotates
    // towards the others, which lowers the curvature
    let mut hessian = gauss_newton;
    for (c, lambda) in coupling.iter().zip(&eigs[1..]) {
        let gap = lambda - eigs[0];
        if gap > 0.0 {
            hessian -= c * c.transpose() * (2.0 / gap);
        }
    }
    if hessian.cholesky().is_none() {
        hessian = gauss_newton;
    }
    if near_degenerate {
        gradient = forward_difference_gradient(problem, bg, weights, value);
    }
    LocalModel { value: value.max(0.0), gradient, hessian }
}

fn forward_difference_gradient(problem: &KeyframePairProblem, bg: &Vec3, weights: &[f64], f0: f64) -> Vec3 {
    let h = 1e-7;
    Vec3::from_fn(|l, _| {
        let mut e = Vec3::zeros();
        e[l] = h;
        (problem_eigenvalue(problem, &(bg + e), weights) - f0) / h
    })
}

/// Analytic gradient of the smallest eigenvalue with respect to the bias.
pub fn eigenvalue_gradient(problem: &KeyframePairProblem, bg: &Vec3, weights: &[f64]) -> Vec3 {
    local_model(problem, bg, weights).gradient
}

/// Relative gap between the two smallest eigenvalues of the weighted normal matrix.
pub fn eigenvalue_gap(problem: &KeyframePairProblem, bg: &Vec3, weights: &[f64]) -> f64 {
    let m = nec_matrix_weighted(problem, bg, weights);
    let eigs = sym3_eigenvalues(m.matrix());
    (eigs[1] - eigs[0]) / m.matrix().abs().max().max(f64::MIN_POSITIVE)
}

fn total_objective(problems: &[&KeyframePairProblem], weights: &[Vec<f64>], bg: &Vec3) -> f64 {
    problems
        .iter()
        .zip(weights)
        .map(|(p, w)| problem_eigenvalue(p, bg, w).max(0.0))
        .sum()
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmOutcome {
    pub bg: Vec3,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Levenberg-Marquardt on the bias with frozen weights.
pub(crate) fn minimize_with_weights(
    problems: &[&KeyframePairProblem],
    weights: &[Vec<f64>],
    init: Vec3,
    opts: &BiasSolverOptions,
) -> LmOutcome {
    let evaluate = |bg: &Vec3| {
        problems.iter().zip(weights).fold((0.0, Vec3::zeros(), Mat3::zeros()), |acc, (p, w)| {
            let m = local_model(p, bg, w);
            (acc.0 + m.value, acc.1 + m.gradient, acc.2 + m.hessian)
        })
    };
    let mut bg = init;
    let (mut f, mut g, mut h) = evaluate(&bg);
    let mut damping = opts.initial_damping;
    let mut iterations = 0;
    let mut converged = f == 0.0;
    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        let mut a = h;
        for i in 0..3 {
            let d = h[(i, i)];
            a[(i, i)] += damping * if d > 0.0 { d } else { 1.0 };
        }
        let step = match a.try_inverse() {
            Some(inv) => -(inv * g),
            None => {
                damping *= 10.0;
                continue;
            }
        };
        let candidate = bg + step;
        let f_new = total_objective(problems, weights, &candidate);
        if f_new < f {
            let decrease = (f - f_new) / f;
            bg = candidate;
            (f, g, h) = evaluate(&bg);
            damping /= 10.0;
            if step.norm() < opts.step_tolerance || decrease < opts.relative_decrease_tolerance {
                converged = true;
            }
        } else {
            damping *= 10.0;
            if step.norm() < opts.step_tolerance || damping > 1e16 {
                converged = step.norm() < opts.step_tolerance || g.norm() <= 1e-12 * f.max(1e-300);
                break;
            }
        }
    }
    LmOutcome { bg, objective: f, iterations, converged }
}

/// Estimates the gyroscope bias from a set of keyframe pairs.
pub fn estimate_bias(
    problems: &[KeyframePairProblem],
    mode: BiasMode,
    init_bg: Vec3,
    opts: &BiasSolverOptions,
) -> Result<BiasEstimate> {
    let mut dropped_pairs = Vec::new();
    let mut degenerate_pairs = Vec::new();
    let mut kept = Vec::new();
    for (i, p) in problems.iter().enumerate() {
        if p.bearings.len() < opts.min_correspondences {
            dropped_pairs.push(i);
            continue;
        }
        let (_, p_ij) = preintegrated_camera_motion(p, &init_bg);
        if translation_is_degenerate(&p_ij) {
            degenerate_pairs.push(i);
        }
        kept.push(p);
    }
    if kept.is_empty() {
        return Err(Error::UnobservableBias);
    }
    if mode == BiasMode::Pnec && kept.iter().any(|p| p.bearings.iter().any(|b| b.uncertainty.is_none())) {
        return Err(Error::Config("PNEC mode requires a covariance for every bearing".into()));
    }

    let unit_weights = || kept.iter().map(|p| vec![1.0; p.bearings.len()]).collect::<Vec<_>>();
    let outcome = match mode {
        BiasMode::Nec => minimize_with_weights(&kept, &unit_weights(), init_bg, opts),
        BiasMode::Pnec => {
            let mut bg = init_bg;
            let mut total_iterations = 0;
            let mut last = None;
            let mut weights = unit_weights();
            for _ in 0..opts.max_reweightings.max(1) {
                weights = match opts.variance_translation {
                    VarianceTranslation::Preintegrated => {
                        kept.iter().map(|p| pnec_weights(p, &bg, opts.variance_floor)).collect()
                    }
                    VarianceTranslation::Eigenvector => kept
                        .iter()
                        .zip(&weights)
                        .map(|(p, w)| pnec_weights_eigenvector(p, &bg, w, opts.variance_floor))
                        .collect(),
                };
                let out = minimize_with_weights(&kept, &weights, bg, opts);
                total_iterations += out.iterations;
                let moved = (out.bg - bg).norm();
                bg = out.bg;
                last = Some(out);
                if moved < opts.step_tolerance {
                    break;
                }
            }
            let out = last.unwrap();
            LmOutcome { iterations: total_iterations, ..out }
        }
    };
    log::debug!(
        "bias estimate {:?} after {} iterations (objective {:.3e})",
        outcome.bg.as_slice(),
        outcome.iterations,
        outcome.objective
    );
    Ok(BiasEstimate {
        bg: outcome.bg,
        objective: outcome.objective.max(0.0),
        iterations: outcome.iterations,
        converged: outcome.converged,
        dropped_pairs,
        degenerate_pairs,
    })
}
