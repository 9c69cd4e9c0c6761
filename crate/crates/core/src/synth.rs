//! Synthetic segments with ground truth.
//!
//! The body follows an analytic attitude `R(t)` and velocity `v(t)` in a
//! z-up world. IMU samples are chosen per interval so that the discrete
//! integration used by [`crate::preint`] reproduces the sampled states
//! exactly:
//!
//! ```text
//! ω_k = Log(R_kᵀ R_{k+1}) / Δt
//! a_k = R_kᵀ ((v_{k+1} - v_k) / Δt + g)
//! p_{k+1} = p_k + ½ (v_k + v_{k+1}) Δt
//! ```
//!
//! Positions are therefore the trapezoid integral of the sampled velocity.
//! Landmarks are seeded inside random keyframe views and observed with
//! per-observation anisotropic pixel noise.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geom::{exp_so3, log_so3, Mat3, Rotation, Vec3};
use crate::gyro_bias::Extrinsics;
use crate::preint::{ImuSample, NANOS_PER_SEC};
use crate::segment::{InitSegment, Observation};
use crate::uncertainty::{cholesky_psd, rotate_cov_2d, CameraIntrinsics, Mat2, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    Sinusoid,
    Circle,
    Spline,
    /// Fixed position, rotating body.
    PureRotation,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sinusoid" => Ok(Self::Sinusoid),
            "circle" => Ok(Self::Circle),
            "spline" => Ok(Self::Spline),
            "pure_rotation" | "pure-rotation" => Ok(Self::PureRotation),
            other => Err(Error::Config(format!("unknown trajectory kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sinusoid => "sinusoid",
            Self::Circle => "circle",
            Self::Spline => "spline",
            Self::PureRotation => "pure_rotation",
        })
    }
}

/// How pixel noise enters the observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseModel {
    /// Each consecutive keyframe pair has its own tracks: the feature is
    /// exact in the first keyframe and the tracked position in the second
    /// one carries the noise and its covariance.
    Tracked,
    /// One track per landmark; every observation is perturbed independently.
    Independent,
}

impl std::str::FromStr for NoiseModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tracked" => Ok(Self::Tracked),
            "independent" => Ok(Self::Independent),
            other => Err(Error::Config(format!("unknown noise model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub kind: TrajectoryKind,
    /// Length of the generated stream, s. Defaults to the keyframe span.
    pub duration: Option<f64>,
    pub imu_rate: f64,
    pub frame_rate: f64,
    pub kf_rate: f64,
    pub kf_count: usize,
    pub landmarks: usize,
    pub depth_range: (f64, f64),
    /// Standard deviation along the major axis of the pixel noise, px.
    pub pixel_sigma: f64,
    /// Range of the major/minor variance ratio.
    pub anisotropy: (f64, f64),
    /// Perturb pixels; covariances are reported either way.
    pub pixel_noise: bool,
    pub noise_model: NoiseModel,
    pub gyro_bias: Vec3,
    /// Constant accelerometer bias, m/s². Not estimated by the pipeline.
    pub accel_bias: Vec3,
    /// White-noise densities, rad/s/√Hz and m/s²/√Hz.
    pub gyro_noise: f64,
    pub accel_noise: f64,
    /// Standard deviation of the noise added to metric keyframe positions, m.
    pub translation_noise: f64,
    /// Exported translations are the metric ones divided by this factor.
    pub scale_factor: f64,
    pub gravity: f64,
    pub extrinsics: Extrinsics,
    pub intrinsics: CameraIntrinsics,
    pub image_size: (f64, f64),
    pub seed: u64,
}

/// Camera looking along body x, with image x to the body's right and image
/// y down.
pub fn forward_camera_rotation() -> Rotation {
    Rotation::from_matrix_unchecked(Mat3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0))
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::Sinusoid,
            duration: None,
            imu_rate: 200.0,
            frame_rate: 20.0,
            kf_rate: 4.0,
            kf_count: 10,
            landmarks: 150,
            depth_range: (2.0, 8.0),
            pixel_sigma: 1.0,
            anisotropy: (10.0, 10.0),
            pixel_noise: true,
            noise_model: NoiseModel::Tracked,
            gyro_bias: Vec3::zeros(),
            accel_bias: Vec3::zeros(),
            gyro_noise: 0.0,
            accel_noise: 0.0,
            translation_noise: 0.0,
            scale_factor: 3.0,
            gravity: 9.81,
            extrinsics: Extrinsics { r_bc: forward_camera_rotation(), p_bc: Vec3::new(0.05, -0.02, 0.01) },
            intrinsics: CameraIntrinsics::new(458.0, 457.0, 367.0, 248.0).expect("valid default intrinsics"),
            image_size: (752.0, 480.0),
            seed: 0,
        }
    }
}

pub(crate) fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim().parse().map_err(|_| Error::Config(format!("{key}: expected a number, got '{v}'")))
}

pub(crate) fn parse_list(key: &str, v: &str, n: usize) -> Result<Vec<f64>> {
    let out: Vec<f64> = v
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| parse_f64(key, s))
        .collect::<Result<_>>()?;
    if out.len() != n {
        return Err(Error::Config(format!("{key}: expected {n} values, got {}", out.len())));
    }
    Ok(out)
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got '{v}'"))),
    }
}

impl ScenarioConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        let (mut fx, mut fy, mut cx, mut cy) = (c.intrinsics.fx(), c.intrinsics.fy(), c.intrinsics.cx(), c.intrinsics.cy());
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "kind" => c.kind = value.parse()?,
                "duration" => c.duration = Some(parse_f64(key, value)?),
                "imu_rate" => c.imu_rate = parse_f64(key, value)?,
                "frame_rate" => c.frame_rate = parse_f64(key, value)?,
                "kf_rate" => c.kf_rate = parse_f64(key, value)?,
                "kf_count" => c.kf_count = parse_f64(key, value)? as usize,
                "landmarks" => c.landmarks = parse_f64(key, value)? as usize,
                "depth_range" => {
                    let v = parse_list(key, value, 2)?;
                    c.depth_range = (v[0], v[1]);
                }
                "pixel_sigma" => c.pixel_sigma = parse_f64(key, value)?,
                "anisotropy" => {
                    let v = parse_list(key, value, 2)?;
                    c.anisotropy = (v[0], v[1]);
                }
                "pixel_noise" => c.pixel_noise = parse_bool(key, value)?,
                "noise_model" => c.noise_model = value.parse()?,
                "gyro_bias" => {
                    let v = parse_list(key, value, 3)?;
                    c.gyro_bias = Vec3::new(v[0], v[1], v[2]);
                }
                "accel_bias" => {
                    let v = parse_list(key, value, 3)?;
                    c.accel_bias = Vec3::new(v[0], v[1], v[2]);
                }
                "gyro_noise" => c.gyro_noise = parse_f64(key, value)?,
                "accel_noise" => c.accel_noise = parse_f64(key, value)?,
                "translation_noise" => c.translation_noise = parse_f64(key, value)?,
                "scale_factor" => c.scale_factor = parse_f64(key, value)?,
                "gravity" => c.gravity = parse_f64(key, value)?,
                "r_bc" => {
                    let v = parse_list(key, value, 9)?;
                    c.extrinsics.r_bc = Rotation::from_matrix(&Mat3::from_row_slice(&v));
                }
                "p_bc" => {
                    let v = parse_list(key, value, 3)?;
                    c.extrinsics.p_bc = Vec3::new(v[0], v[1], v[2]);
                }
                "fx" => fx = parse_f64(key, value)?,
                "fy" => fy = parse_f64(key, value)?,
                "cx" => cx = parse_f64(key, value)?,
                "cy" => cy = parse_f64(key, value)?,
                "image_size" => {
                    let v = parse_list(key, value, 2)?;
                    c.image_size = (v[0], v[1]);
                }
                "seed" => c.seed = value.parse().map_err(|_| Error::Config(format!("seed: bad value '{value}'")))?,
                other => return Err(Error::Config(format!("line {}: unknown key '{other}'", lineno + 1))),
            }
        }
        c.intrinsics = CameraIntrinsics::new(fx, fy, cx, cy)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn period_ns(rate: f64, what: &str) -> Result<i64> {
        if !(rate > 0.0) {
            return Err(Error::Config(format!("{what} must be positive")));
        }
        let p = NANOS_PER_SEC / rate;
        if (p - p.round()).abs() > 1e-6 {
            return Err(Error::Config(format!("{what} {rate} Hz has no integer nanosecond period")));
        }
        Ok(p.round() as i64)
    }

    pub fn validate(&self) -> Result<()> {
        let imu = Self::period_ns(self.imu_rate, "imu_rate")?;
        let frame = Self::period_ns(self.frame_rate, "frame_rate")?;
        let kf = Self::period_ns(self.kf_rate, "kf_rate")?;
        if self.imu_rate < self.frame_rate {
            return Err(Error::Config("imu_rate must not be below frame_rate".into()));
        }
        if frame % imu != 0 || kf % frame != 0 {
            return Err(Error::Config("keyframe, frame and IMU periods must divide each other".into()));
        }
        if self.kf_count < 2 {
            return Err(Error::Config("kf_count must be at least 2".into()));
        }
        if let Some(d) = self.duration {
            if d < self.keyframe_span() - 1e-9 {
                return Err(Error::Config(format!("duration {d} s does not cover {} keyframes", self.kf_count)));
            }
        }
        let (a, b) = self.anisotropy;
        if !(a >= 1.0 && b >= a) || !(self.depth_range.0 > 0.0 && self.depth_range.1 >= self.depth_range.0) {
            return Err(Error::Config("invalid anisotropy or depth range".into()));
        }
        if !(self.scale_factor > 0.0) || self.pixel_sigma < 0.0 {
            return Err(Error::Config("scale_factor must be positive and pixel_sigma non-negative".into()));
        }
        Ok(())
    }

    fn keyframe_span(&self) -> f64 {
        (self.kf_count - 1) as f64 / self.kf_rate
    }
}

/// A body state on the IMU time grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedState {
    pub t_ns: i64,
    pub position: Vec3,
    /// `R_wb`.
    pub rotation: Rotation,
    pub velocity: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Body states at the keyframes, in a z-up world frame.
    pub keyframes: Vec<TimedState>,
    /// Gravity reaction in the world frame, `(0, 0, G)`.
    pub gravity_world: Vec3,
    /// Metric positions are this factor times the exported translations.
    pub scale_factor: f64,
    pub gyro_bias: Vec3,
    pub accel_bias: Vec3,
    /// Body states at every IMU sample up to the last keyframe.
    pub trajectory: Vec<TimedState>,
    /// Camera frame timestamps up to the last keyframe.
    pub frame_ns: Vec<i64>,
}

impl GroundTruth {
    /// `R_{w c0}`.
    pub fn first_camera_rotation(&self, ext: &Extrinsics) -> Rotation {
        self.keyframes[0].rotation * ext.r_bc
    }

    pub fn first_camera_position(&self, ext: &Extrinsics) -> Vec3 {
        let s = &self.keyframes[0];
        s.position + s.rotation * ext.p_bc
    }

    pub fn gravity_c0(&self, ext: &Extrinsics) -> Vec3 {
        self.first_camera_rotation(ext).transpose() * self.gravity_world
    }

    /// `R_{c0 b_i}`.
    pub fn rotations_c0(&self, ext: &Extrinsics) -> Vec<Rotation> {
        let r = self.first_camera_rotation(ext).transpose();
        self.keyframes.iter().map(|s| r * s.rotation).collect()
    }

    pub fn velocities_c0(&self, ext: &Extrinsics) -> Vec<Vec3> {
        let r = self.first_camera_rotation(ext).transpose();
        self.keyframes.iter().map(|s| r * s.velocity).collect()
    }

    /// Metric `p_{c0 c_i}`.
    pub fn camera_positions_c0(&self, ext: &Extrinsics) -> Vec<Vec3> {
        let r = self.first_camera_rotation(ext).transpose();
        let p0 = self.first_camera_position(ext);
        self.keyframes.iter().map(|s| r * (s.position + s.rotation * ext.p_bc - p0)).collect()
    }
}

/// Analytic attitude and velocity; position only at the start.
struct Motion {
    kind: TrajectoryKind,
    phase: [f64; 6],
    knots: Vec<Vec3>,
}

const SPLINE_KNOT_PERIOD: f64 = 0.5;

impl Motion {
    fn new(kind: TrajectoryKind, rng: &mut ChaCha8Rng, duration: f64) -> Self {
        let mut phase = [0.0; 6];
        for p in &mut phase {
            *p = rng.random_range(0.0..std::f64::consts::TAU);
        }
        let knots = if kind == TrajectoryKind::Spline {
            let n = (duration / SPLINE_KNOT_PERIOD).ceil() as usize + 4;
            (0..n)
                .map(|_| Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.2..0.2)))
                .collect()
        } else {
            Vec::new()
        };
        Self { kind, phase, knots }
    }

    fn rotation(&self, t: f64) -> Rotation {
        use std::f64::consts::TAU;
        let p = &self.phase;
        let (roll, pitch, yaw) = match self.kind {
            TrajectoryKind::Circle => (
                0.08 * (TAU * 0.5 * t + p[3]).sin(),
                0.1 * (TAU * 0.4 * t + p[4]).sin(),
                0.6 * (TAU * 0.2 * t + p[5]).sin(),
            ),
            TrajectoryKind::PureRotation => (
                0.2 * (TAU * 0.45 * t + p[3]).sin(),
                0.25 * (TAU * 0.35 * t + p[4]).sin(),
                0.4 * (TAU * 0.3 * t + p[5]).sin(),
            ),
            _ => (
                0.15 * (TAU * 0.45 * t + p[3]).sin(),
                0.2 * (TAU * 0.35 * t + p[4]).sin(),
                0.3 * (TAU * 0.3 * t + p[5]).sin(),
            ),
        };
        exp_so3(&Vec3::new(0.0, 0.0, yaw)) * exp_so3(&Vec3::new(0.0, pitch, 0.0)) * exp_so3(&Vec3::new(roll, 0.0, 0.0))
    }

    fn start_position(&self) -> Vec3 {
        match self.kind {
            TrajectoryKind::Sinusoid => {
                let p = &self.phase;
                Vec3::new(0.6 * p[0].sin(), 0.5 * p[1].sin(), 0.2 * p[2].sin())
            }
            TrajectoryKind::Circle => Vec3::new(1.0 * self.phase[0].cos(), 1.0 * self.phase[0].sin(), 0.0),
            TrajectoryKind::Spline => self.knots[1],
            TrajectoryKind::PureRotation => Vec3::zeros(),
        }
    }

    fn velocity(&self, t: f64) -> Vec3 {
        use std::f64::consts::TAU;
        let p = &self.phase;
        match self.kind {
            TrajectoryKind::Sinusoid => {
                let w = [TAU * 0.5, TAU * 0.4, TAU * 0.7];
                Vec3::new(
                    0.6 * w[0] * (w[0] * t + p[0]).cos(),
                    0.5 * w[1] * (w[1] * t + p[1]).cos(),
                    0.2 * w[2] * (w[2] * t + p[2]).cos(),
                )
            }
            TrajectoryKind::Circle => {
                let (w, wz) = (TAU * 0.25, TAU * 0.6);
                Vec3::new(-w * (w * t + p[0]).sin(), w * (w * t + p[0]).cos(), 0.15 * wz * (wz * t + p[1]).cos())
            }
            TrajectoryKind::Spline => {
                // uniform Catmull-Rom through the knots, knot 1 at t = 0
                let u = t / SPLINE_KNOT_PERIOD;
                let i = (u.floor() as usize).min(self.knots.len() - 4);
                let s = u - i as f64;
                let (p0, p1, p2, p3) = (self.knots[i], self.knots[i + 1], self.knots[i + 2], self.knots[i + 3]);
                let d = (p2 - p0) + (2.0 * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3)) * s
                    + (3.0 * (-p0 + 3.0 * p1 - 3.0 * p2 + p3)) * s * s;
                d * (0.5 / SPLINE_KNOT_PERIOD)
            }
            TrajectoryKind::PureRotation => Vec3::zeros(),
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn gaussian3(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(gaussian(rng), gaussian(rng), gaussian(rng))
}

/// Generates one segment and its ground truth.
pub fn generate(config: &ScenarioConfig) -> Result<(InitSegment, GroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let imu_ns = ScenarioConfig::period_ns(config.imu_rate, "imu_rate")?;
    let frame_ns = ScenarioConfig::period_ns(config.frame_rate, "frame_rate")?;
    let kf_ns = ScenarioConfig::period_ns(config.kf_rate, "kf_rate")?;
    let last_kf_ns = kf_ns * (config.kf_count as i64 - 1);
    let duration = config.duration.unwrap_or(config.keyframe_span()).max(config.keyframe_span());
    let motion = Motion::new(config.kind, &mut rng, duration);

    // states on the IMU grid up to the last keyframe
    let steps = (last_kf_ns / imu_ns) as usize;
    let dt = imu_ns as f64 / NANOS_PER_SEC;
    let mut trajectory = Vec::with_capacity(steps + 1);
    let mut position = motion.start_position();
    for k in 0..=steps {
        let t_ns = k as i64 * imu_ns;
        let t = t_ns as f64 / NANOS_PER_SEC;
        let velocity = motion.velocity(t);
        if let Some(prev) = trajectory.last() {
            let prev: &TimedState = prev;
            position = prev.position + (prev.velocity + velocity) * (0.5 * dt);
        }
        trajectory.push(TimedState { t_ns, position, rotation: motion.rotation(t), velocity });
    }

    let gravity_world = Vec3::new(0.0, 0.0, config.gravity);
    let sg = config.gyro_noise * config.imu_rate.sqrt();
    let sa = config.accel_noise * config.imu_rate.sqrt();
    let mut imu = Vec::with_capacity(steps);
    for w in trajectory.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let omega = log_so3(&(a.rotation.transpose() * b.rotation)) / dt;
        let accel = a.rotation.transpose() * ((b.velocity - a.velocity) / dt + gravity_world);
        let mut gyro = omega + config.gyro_bias;
        let mut acc = accel + config.accel_bias;
        if sg > 0.0 {
            gyro += gaussian3(&mut rng) * sg;
        }
        if sa > 0.0 {
            acc += gaussian3(&mut rng) * sa;
        }
        imu.push(ImuSample::new(a.t_ns, gyro, acc));
    }

    let stride = (kf_ns / imu_ns) as usize;
    let keyframes: Vec<TimedState> = (0..config.kf_count).map(|i| trajectory[i * stride]).collect();
    let keyframe_ns: Vec<i64> = keyframes.iter().map(|s| s.t_ns).collect();
    let imu_spans: Vec<Vec<ImuSample>> = imu.chunks(stride).map(|c| c.to_vec()).collect();

    let truth = GroundTruth {
        keyframes,
        gravity_world,
        scale_factor: config.scale_factor,
        gyro_bias: config.gyro_bias,
        accel_bias: config.accel_bias,
        trajectory,
        frame_ns: (0..=last_kf_ns / frame_ns).map(|k| k * frame_ns).collect(),
    };
    let ext = config.extrinsics;
    let observations = observe_landmarks(config, &truth, &mut rng)?;

    let mut translations = truth.camera_positions_c0(&ext);
    for p in translations.iter_mut().skip(1) {
        if config.translation_noise > 0.0 {
            *p += gaussian3(&mut rng) * config.translation_noise;
        }
    }
    for p in &mut translations {
        *p /= config.scale_factor;
    }

    let segment = InitSegment {
        keyframe_ns,
        imu_spans,
        observations,
        extrinsics: ext,
        intrinsics: config.intrinsics,
        translations: Some(translations),
    };
    Ok((segment, truth))
}

fn observe_landmarks(config: &ScenarioConfig, truth: &GroundTruth, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<Observation>>> {
    let ext = &config.extrinsics;
    let k = &config.intrinsics;
    let (w, h) = config.image_size;
    let cams: Vec<(Rotation, Vec3)> = truth
        .keyframes
        .iter()
        .map(|s| (s.rotation * ext.r_bc, s.position + s.rotation * ext.p_bc))
        .collect();
    let margin = 10.0;
    let mut points = Vec::with_capacity(config.landmarks);
    for _ in 0..config.landmarks {
        let (r_wc, p_wc) = &cams[rng.random_range(0..cams.len())];
        let px = Vec2::new(rng.random_range(margin..w - margin), rng.random_range(margin..h - margin));
        let depth = rng.random_range(config.depth_range.0..=config.depth_range.1);
        let ray = k.inverse() * Vec3::new(px.x, px.y, 1.0);
        points.push(p_wc + *r_wc * (ray * depth));
    }

    let n = cams.len();
    let mut behind = 0usize;
    let mut pixels: Vec<Vec<Option<Vec2>>> = Vec::with_capacity(points.len());
    for x in &points {
        let row = cams
            .iter()
            .map(|(r_wc, p_wc)| {
                let pc = r_wc.transpose() * (x - p_wc);
                if pc.z <= 0.0 {
                    behind += 1;
                    return None;
                }
                k.project(&pc).filter(|px| px.x >= 0.0 && px.y >= 0.0 && px.x < w && px.y < h)
            })
            .collect();
        pixels.push(row);
    }

    let mut observations = vec![Vec::new(); n];
    match config.noise_model {
        NoiseModel::Independent => {
            for (id, row) in pixels.iter().enumerate() {
                for (i, px) in row.iter().enumerate() {
                    if let Some(px) = px {
                        let (pixel, cov) = noisy_pixel(config, px, rng)?;
                        observations[i].push(Observation { track_id: id as u64, pixel, cov: Some(cov) });
                    }
                }
            }
        }
        NoiseModel::Tracked => {
            for (l, row) in pixels.iter().enumerate() {
                for i in 0..n - 1 {
                    let (Some(host), Some(target)) = (row[i], row[i + 1]) else { continue };
                    let track_id = (l * n + i) as u64;
                    let (pixel, cov) = noisy_pixel(config, &target, rng)?;
                    observations[i].push(Observation { track_id, pixel: host, cov: None });
                    observations[i + 1].push(Observation { track_id, pixel, cov: Some(cov) });
                }
            }
            for obs in &mut observations {
                obs.sort_by_key(|o| o.track_id);
            }
        }
    }
    if 2 * behind > points.len() * cams.len() {
        return Err(Error::BadScenario(format!(
            "{behind} of {} landmark observations are behind the camera",
            points.len() * cams.len()
        )));
    }
    Ok(observations)
}

/// Samples a covariance with random orientation and anisotropy and, when
/// enabled, perturbs the pixel with it.
fn noisy_pixel(config: &ScenarioConfig, px: &Vec2, rng: &mut ChaCha8Rng) -> Result<(Vec2, Mat2)> {
    let sigma2 = config.pixel_sigma * config.pixel_sigma;
    let theta = rng.random_range(0.0..std::f64::consts::PI);
    let (lo, hi) = config.anisotropy;
    let ratio = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let c = rotate_cov_2d(&Mat2::new(sigma2, 0.0, 0.0, sigma2 / ratio), theta);
    // exactly symmetric, so the exported c_uv round-trips
    let off = 0.5 * (c[(0, 1)] + c[(1, 0)]);
    let cov = Mat2::new(c[(0, 0)], off, off, c[(1, 1)]);
    let mut pixel = *px;
    if config.pixel_noise && sigma2 > 0.0 {
        pixel += cholesky_psd(&cov)? * Vec2::new(gaussian(rng), gaussian(rng));
    }
    Ok((pixel, cov))
}

/// Batch of segments with seeds `seed, seed + 1, ...`.
pub fn generate_batch(config: &ScenarioConfig, count: usize) -> Result<Vec<(InitSegment, GroundTruth)>> {
    (0..count as u64)
        .map(|i| generate(&ScenarioConfig { seed: config.seed.wrapping_add(i), ..config.clone() }))
        .collect()
}

fn fmt_vec(out: &mut String, v: &[f64]) {
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{x:?}");
    }
}

/// Writes the segment in ASL layout, plus the sidecar files read by
/// [`crate::ingest`]: `tracks.csv`, `translations.csv` and `calib.txt`.
pub fn export_asl(root: &Path, segment: &InitSegment, truth: &GroundTruth) -> Result<()> {
    let mkdir = |p: &Path| fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    let write = |p: &Path, s: &str| fs::write(p, s).map_err(|e| Error::io(p, e));
    for d in ["imu0", "cam0", "state_groundtruth_estimate0"] {
        mkdir(&root.join(d))?;
    }

    let mut s = String::from("#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]\n");
    for m in segment.imu_spans.iter().flatten() {
        let _ = write!(s, "{},", m.t_ns);
        fmt_vec(&mut s, &[m.gyro.x, m.gyro.y, m.gyro.z, m.accel.x, m.accel.y, m.accel.z]);
        s.push('\n');
    }
    write(&root.join("imu0/data.csv"), &s)?;

    let mut s = String::from("#timestamp [ns],filename\n");
    for t in &truth.frame_ns {
        let _ = writeln!(s, "{t},{t}.png");
    }
    write(&root.join("cam0/data.csv"), &s)?;

    let mut s = String::from("#timestamp,p_RS_R_x [m],p_RS_R_y [m],p_RS_R_z [m],q_RS_w [],q_RS_x [],q_RS_y [],q_RS_z [],v_RS_R_x [m s^-1],v_RS_R_y [m s^-1],v_RS_R_z [m s^-1],b_w_RS_S_x [rad s^-1],b_w_RS_S_y [rad s^-1],b_w_RS_S_z [rad s^-1],b_a_RS_S_x [m s^-2],b_a_RS_S_y [m s^-2],b_a_RS_S_z [m s^-2]\n");
    let (b, ba) = (truth.gyro_bias, truth.accel_bias);
    for st in &truth.trajectory {
        let q = st.rotation.to_quaternion();
        let _ = write!(s, "{},", st.t_ns);
        let p = st.position;
        let v = st.velocity;
        fmt_vec(&mut s, &[p.x, p.y, p.z, q[0], q[1], q[2], q[3], v.x, v.y, v.z, b.x, b.y, b.z, ba.x, ba.y, ba.z]);
        s.push('\n');
    }
    write(&root.join("state_groundtruth_estimate0/data.csv"), &s)?;

    let mut s = String::from("# track_id,kf_index,u,v[,c_uu,c_uv,c_vv]\n");
    for (i, obs) in segment.observations.iter().enumerate() {
        for o in obs {
            let _ = write!(s, "{},{},", o.track_id, i);
            fmt_vec(&mut s, &[o.pixel.x, o.pixel.y]);
            if let Some(c) = o.cov {
                s.push(',');
                fmt_vec(&mut s, &[c[(0, 0)], c[(0, 1)], c[(1, 1)]]);
            }
            s.push('\n');
        }
    }
    write(&root.join("tracks.csv"), &s)?;

    if let Some(tr) = &segment.translations {
        let mut s = String::from("# timestamp_ns,x,y,z (up to scale, first camera frame)\n");
        for (t, p) in segment.keyframe_ns.iter().zip(tr) {
            let _ = write!(s, "{t},");
            fmt_vec(&mut s, &[p.x, p.y, p.z]);
            s.push('\n');
        }
        write(&root.join("translations.csv"), &s)?;
    }

    write(&root.join("calib.txt"), &calibration_text(&segment.extrinsics, &segment.intrinsics))
}

/// `key = value` calibration understood by the ingest module.
pub fn calibration_text(ext: &Extrinsics, k: &CameraIntrinsics) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "fx = {:?}\nfy = {:?}\ncx = {:?}\ncy = {:?}", k.fx(), k.fy(), k.cx(), k.cy());
    let r = ext.r_bc.matrix();
    s.push_str("r_bc = ");
    fmt_vec(&mut s, &(0..9).map(|i| r[(i / 3, i % 3)]).collect::<Vec<_>>());
    s.push_str("\np_bc = ");
    fmt_vec(&mut s, &[ext.p_bc.x, ext.p_bc.y, ext.p_bc.z]);
    s.push('\n');
    s
}
