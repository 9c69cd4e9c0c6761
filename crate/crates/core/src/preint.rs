//! IMU pre-integration between keyframes.
//!
//! The discrete scheme is a left Riemann sum with a half-step position term:
//!
//! ```text
//! alpha += beta * dt + 0.5 * gamma * a * dt^2
//! beta  += gamma * a * dt
//! gamma  = gamma * Exp(w * dt)
//! ```
//!
//! The rotation Jacobian with respect to the gyroscope bias is accumulated
//! with the usual on-manifold recursion so a bias estimate can later be
//! applied to first order without re-integrating.

use crate::error::{Error, Result};
use crate::geom::{exp_so3, right_jacobian, Mat3, Rotation, Vec3};

pub const NANOS_PER_SEC: f64 = 1e9;

/// Steps between polar re-projections of the accumulated rotation.
const REORTHONORMALIZE_EVERY: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    /// Timestamp in integer nanoseconds.
    pub t_ns: i64,
    /// Measured angular velocity, rad/s.
    pub gyro: Vec3,
    /// Measured specific force, m/s².
    pub accel: Vec3,
}

impl ImuSample {
    pub fn new(t_ns: i64, gyro: Vec3, accel: Vec3) -> Self {
        Self { t_ns, gyro, accel }
    }

    pub fn seconds(&self) -> f64 {
        self.t_ns as f64 / NANOS_PER_SEC
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preintegration {
    /// Position increment in the first body frame, m.
    pub alpha: Vec3,
    /// Velocity increment in the first body frame, m/s.
    pub beta: Vec3,
    /// Relative rotation from the first to the last body frame.
    pub gamma: Rotation,
    /// d(gamma)/d(bg) in the right-perturbation sense.
    pub jac_gamma_bg: Mat3,
    /// Integrated time, s.
    pub dt_total: f64,
    /// Gyroscope bias subtracted during integration.
    pub gyro_bias: Vec3,
    /// Accelerometer bias subtracted during integration (always zero in this crate).
    pub accel_bias: Vec3,
}

impl Default for Preintegration {
    fn default() -> Self {
        Self::identity()
    }
}

impl Preintegration {
    pub fn identity() -> Self {
        Self {
            alpha: Vec3::zeros(),
            beta: Vec3::zeros(),
            gamma: Rotation::identity(),
            jac_gamma_bg: Mat3::zeros(),
            dt_total: 0.0,
            gyro_bias: Vec3::zeros(),
            accel_bias: Vec3::zeros(),
        }
    }

    fn with_bias(gyro_bias: Vec3) -> Self {
        Self { gyro_bias, ..Self::identity() }
    }

    fn integrate(&mut self, gyro: &Vec3, accel: &Vec3, dt: f64) {
        let w = gyro - self.gyro_bias;
        let a = accel - self.accel_bias;
        let ra = self.gamma * a;
        self.alpha += self.beta * dt + ra * (0.5 * dt * dt);
        self.beta += ra * dt;
        let phi = w * dt;
        let step = exp_so3(&phi);
        self.jac_gamma_bg = step.transpose().matrix() * self.jac_gamma_bg - right_jacobian(&phi) * dt;
        self.gamma = self.gamma * step;
        self.dt_total += dt;
    }

    /// Rotation corrected to first order for the bias estimate `bg`.
    pub fn corrected_gamma(&self, bg: &Vec3) -> Rotation {
        apply_gyro_bias(self, bg)
    }
}

/// Pre-integrates an ordered sample list; each sample is held until the next
/// timestamp, so the last sample only marks the end of the span.
pub fn preintegrate(samples: &[ImuSample]) -> Result<Preintegration> {
    preintegrate_with_bias(samples, &Vec3::zeros())
}

/// Same as [`preintegrate`] with `gyro_bias` removed from every gyro sample.
pub fn preintegrate_with_bias(samples: &[ImuSample], gyro_bias: &Vec3) -> Result<Preintegration> {
    let first = samples.first().ok_or(Error::EmptyImuSpan)?;
    let last = samples.last().unwrap();
    preintegrate_span(samples, first.t_ns, last.t_ns, gyro_bias)
}

/// Pre-integrates over `[t_start_ns, t_end_ns]` with zero-order hold.
///
/// Sample `k` covers `[max(t_k, t_start), t_{k+1})`, the first sample is
/// extended back to `t_start` and the last one forward to `t_end`. Samples
/// outside the window are ignored.
pub fn preintegrate_span(
    samples: &[ImuSample],
    t_start_ns: i64,
    t_end_ns: i64,
    gyro_bias: &Vec3,
) -> Result<Preintegration> {
    check_monotone(samples)?;
    let inside: Vec<&ImuSample> = samples
        .iter()
        .filter(|s| s.t_ns < t_end_ns || (s.t_ns == t_end_ns && t_end_ns == t_start_ns))
        .collect();
    if inside.is_empty() {
        return Err(Error::EmptyImuSpan);
    }
    let mut p = Preintegration::with_bias(*gyro_bias);
    let mut steps = 0usize;
    for (k, s) in inside.iter().enumerate() {
        let begin = if k == 0 { t_start_ns } else { s.t_ns.max(t_start_ns) };
        let end = inside.get(k + 1).map_or(t_end_ns, |n| n.t_ns.min(t_end_ns));
        if end <= begin {
            continue;
        }
        let dt = (end - begin) as f64 / NANOS_PER_SEC;
        p.integrate(&s.gyro, &s.accel, dt);
        steps += 1;
        if steps % REORTHONORMALIZE_EVERY == 0 {
            p.gamma = p.gamma.orthonormalized();
        }
    }
    Ok(p)
}

fn check_monotone(samples: &[ImuSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptyImuSpan);
    }
    for (i, w) in samples.windows(2).enumerate() {
        if w[1].t_ns <= w[0].t_ns {
            return Err(Error::NonMonotoneImu { index: i + 1 });
        }
    }
    Ok(())
}

/// First-order bias update `gamma * Exp(J (bg - b_lin))`, where `b_lin` is the
/// bias that was removed during integration.
pub fn apply_gyro_bias(p: &Preintegration, bg: &Vec3) -> Rotation {
    let delta = bg - p.gyro_bias;
    if delta == Vec3::zeros() {
        return p.gamma;
    }
    p.gamma * exp_so3(&(p.jac_gamma_bg * delta))
}

/// Position, velocity and attitude of the body expressed in the first camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub rotation: Rotation,
}

/// Propagates a state through one pre-integrated span.
///
/// `gravity` is the gravity reaction vector (pointing up, magnitude G) in the
/// same frame as the state.
pub fn predict_state(prev: &NavState, p: &Preintegration, gravity: &Vec3) -> NavState {
    let dt = p.dt_total;
    let r = prev.rotation;
    NavState {
        position: prev.position + prev.velocity * dt - gravity * (0.5 * dt * dt) + r * p.alpha,
        velocity: prev.velocity - gravity * dt + r * p.beta,
        rotation: r * p.gamma,
    }
}
