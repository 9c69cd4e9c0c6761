//! Feature-position uncertainty: from image-patch statistics to a 2D pixel
//! covariance, and from a 2D pixel covariance to the 3D covariance of the
//! unit bearing vector via the unscented transform.

use nalgebra::{Matrix2, Matrix3, Vector2};

use crate::error::{Error, Result};
use crate::geom::{Mat3, SymMat3, Vec3};

pub type Mat2 = Matrix2<f64>;
pub type Vec2 = Vector2<f64>;

/// Pixel pattern around a tracked feature with intensities and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchData {
    /// Pixel offsets (u, v) of the pattern relative to the feature.
    pub offsets: Vec<Vec2>,
    pub intensities: Vec<f64>,
    pub gradients: Vec<Vec2>,
}

/// Covariance of a feature in pixels and of its unit bearing vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureUncertainty {
    pub sigma2d: Mat2,
    pub sigma3d: SymMat3,
}

/// Five sigma points of a 2D Gaussian (n = 2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnscentedSet {
    pub points: [Vec2; 5],
    pub weights: [f64; 5],
}

/// Pinhole intrinsics as an upper-triangular projection matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    k: Mat3,
    k_inv: Mat3,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::Config(format!("invalid intrinsics fx={fx} fy={fy} cx={cx} cy={cy}")));
        }
        let k = Mat3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0);
        let k_inv = Mat3::new(1.0 / fx, 0.0, -cx / fx, 0.0, 1.0 / fy, -cy / fy, 0.0, 0.0, 1.0);
        Ok(Self { k, k_inv })
    }

    pub fn fx(&self) -> f64 {
        self.k[(0, 0)]
    }
    pub fn fy(&self) -> f64 {
        self.k[(1, 1)]
    }
    pub fn cx(&self) -> f64 {
        self.k[(0, 2)]
    }
    pub fn cy(&self) -> f64 {
        self.k[(1, 2)]
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.k
    }

    pub fn inverse(&self) -> &Mat3 {
        &self.k_inv
    }

    /// Unit bearing vector of a pixel.
    pub fn unproject(&self, px: &Vec2) -> Vec3 {
        let x = self.k_inv * Vec3::new(px.x, px.y, 1.0);
        x / x.norm()
    }

    /// Pixel of a point in the camera frame; `None` behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<Vec2> {
        if p.z <= 0.0 {
            return None;
        }
        let h = self.k * (p / p.z);
        Some(Vec2::new(h.x, h.y))
    }
}

/// Laplace-approximation covariance of a normalized-intensity KLT track.
///
/// Builds one 1x3 Jacobian row per pattern pixel with respect to the SE(2)
/// parameters (u, v, θ), inverts the normal matrix and returns its
/// translational 2x2 block.
pub fn klt_covariance(patch: &PatchData) -> Result<Mat2> {
    let n = patch.offsets.len();
    if n < 3 || patch.intensities.len() != n || patch.gradients.len() != n {
        return Err(Error::DegeneratePatch);
    }
    let jac_xi = |eta: &Vec2| nalgebra::Matrix2x3::new(1.0, 0.0, -eta.y, 0.0, 1.0, eta.x);
    let intensity_sum: f64 = patch.intensities.iter().sum();
    if intensity_sum == 0.0 {
        return Err(Error::DegeneratePatch);
    }
    let grad_sum = patch
        .offsets
        .iter()
        .zip(&patch.gradients)
        .fold(nalgebra::RowVector3::zeros(), |acc, (eta, g)| acc + g.transpose() * jac_xi(eta));
    let scale = n as f64 / (intensity_sum * intensity_sum);
    let mut normal = Mat3::zeros();
    for ((eta, g), &intensity) in patch.offsets.iter().zip(&patch.gradients).zip(&patch.intensities) {
        let row = (g.transpose() * jac_xi(eta) * intensity_sum - grad_sum * intensity) * scale;
        normal += row.transpose() * row;
    }
    let eigs = crate::geom::sym3_eigenvalues(&normal);
    if !(eigs[2] > 0.0) || eigs[0] <= 1e-12 * eigs[2] {
        return Err(Error::DegeneratePatch);
    }
    let cov = normal.try_inverse().ok_or(Error::DegeneratePatch)?;
    let block = cov.fixed_view::<2, 2>(0, 0).into_owned();
    Ok((block + block.transpose()) * 0.5)
}

/// Transports a 2D covariance by an in-plane rotation: `R Σ Rᵀ`.
pub fn rotate_cov_2d(sigma: &Mat2, theta: f64) -> Mat2 {
    let (s, c) = theta.sin_cos();
    let r = Mat2::new(c, -s, s, c);
    r * sigma * r.transpose()
}

/// Lower Cholesky factor of a 2x2 PSD matrix; zero pivots are allowed.
pub(crate) fn cholesky_psd(sigma: &Mat2) -> Result<Mat2> {
    let (a, b, c) = (sigma[(0, 0)], 0.5 * (sigma[(0, 1)] + sigma[(1, 0)]), sigma[(1, 1)]);
    let scale = a.abs().max(c.abs()).max(b.abs());
    let tol = 1e-12 * scale;
    if !(a.is_finite() && b.is_finite() && c.is_finite()) || a < -tol || c < -tol || a * c - b * b < -tol * scale {
        return Err(Error::NotPositiveSemidefinite);
    }
    let l11 = a.max(0.0).sqrt();
    let l21 = if l11 > 0.0 { b / l11 } else { 0.0 };
    let l22 = (c - l21 * l21).max(0.0).sqrt();
    Ok(Mat2::new(l11, 0.0, l21, l22))
}

/// Sigma points `μ, μ ± √(n+1) C_i` with weights `1/(n+1)` and `1/(2(n+1))`, n = 2.
pub fn sigma_points(mu: &Vec2, sigma2d: &Mat2) -> Result<UnscentedSet> {
    const N: f64 = 2.0;
    let chol = cholesky_psd(sigma2d)?;
    let spread = (N + 1.0).sqrt();
    let c0: Vec2 = chol.column(0) * spread;
    let c1: Vec2 = chol.column(1) * spread;
    let w0 = 1.0 / (N + 1.0);
    let wi = 1.0 / (2.0 * (N + 1.0));
    Ok(UnscentedSet {
        points: [*mu, mu + c0, mu + c1, mu - c0, mu - c1],
        weights: [w0, wi, wi, wi, wi],
    })
}

/// Maps sigma points through `x -> normalize(K⁻¹ [x; 1])` and returns the
/// weighted mean (not renormalized) and covariance of the images.
pub fn unproject_unscented(set: &UnscentedSet, k: &CameraIntrinsics) -> (Vec3, SymMat3) {
    let zeta: [Vec3; 5] = std::array::from_fn(|i| k.unproject(&set.points[i]));
    // accumulate around the central point so a degenerate set returns it exactly
    let mut mean = zeta[0];
    for (z, w) in zeta.iter().zip(&set.weights).skip(1) {
        mean += (z - zeta[0]) * *w;
    }
    let mut cov = Matrix3::zeros();
    for (z, w) in zeta.iter().zip(&set.weights) {
        let d = z - mean;
        cov += d * d.transpose() * *w;
    }
    (mean, SymMat3::from_matrix(&cov))
}

/// Convenience: bearing and 3D covariance of a pixel with 2D covariance.
pub fn bearing_uncertainty(px: &Vec2, sigma2d: &Mat2, k: &CameraIntrinsics) -> Result<FeatureUncertainty> {
    let set = sigma_points(px, sigma2d)?;
    let (_, sigma3d) = unproject_unscented(&set, k);
    Ok(FeatureUncertainty { sigma2d: *sigma2d, sigma3d })
}
