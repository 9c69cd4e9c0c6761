//! Small SO(3) and symmetric 3x3 kernel shared by the rest of the crate.
//!
//! Rotations are stored as plain 3x3 matrices. All functions are pure.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// A 3D rotation stored as an orthonormal matrix with unit determinant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Wraps a matrix without checking orthonormality.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    /// Projects an arbitrary matrix onto SO(3) (closest rotation in Frobenius norm).
    pub fn from_matrix_projected(m: &Mat3) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd u");
        let v_t = svd.v_t.expect("svd v_t");
        let mut d = Mat3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Rotation(u * d * v_t)
    }

    /// Keeps `m` as is when it is orthonormal to 1e-12, otherwise projects it.
    pub fn from_matrix(m: &Mat3) -> Self {
        let err = (m * m.transpose() - Mat3::identity()).abs().max();
        if err <= 1e-12 && (m.determinant() - 1.0).abs() <= 1e-12 {
            Rotation(*m)
        } else {
            Self::from_matrix_projected(m)
        }
    }

    pub fn exp(phi: &Vec3) -> Self {
        exp_so3(phi)
    }

    pub fn log(&self) -> Vec3 {
        log_so3(self)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    /// Geodesic angle to `other`, in radians.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        (self.transpose() * *other).log().norm()
    }

    /// Re-projects onto SO(3) to remove accumulated round-off.
    pub fn orthonormalized(&self) -> Self {
        Self::from_matrix_projected(&self.0)
    }

    /// Rotation from a unit quaternion given as (w, x, y, z).
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        let (w, x, y, z) = (w / n, x / n, y / n, z / n);
        Rotation(Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ))
    }

    /// Unit quaternion (w, x, y, z) with w >= 0.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let phi = self.log();
        let theta = phi.norm();
        let (s, c) = ((theta / 2.0).sin(), (theta / 2.0).cos());
        let axis = if theta > 0.0 { phi / theta } else { Vec3::zeros() };
        let q = [c, axis.x * s, axis.y * s, axis.z * s];
        if q[0] < 0.0 {
            q.map(|v| -v)
        } else {
            q
        }
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<&Vec3> for &Rotation {
    type Output = Vec3;
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Symmetric 3x3 matrix. Only the symmetric part of the stored matrix is meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymMat3(Mat3);

impl SymMat3 {
    pub fn zeros() -> Self {
        SymMat3(Mat3::zeros())
    }

    /// Symmetrizes `m` as (m + mᵀ)/2.
    pub fn from_matrix(m: &Mat3) -> Self {
        SymMat3((m + m.transpose()) * 0.5)
    }

    pub fn outer(v: &Vec3) -> Self {
        SymMat3(v * v.transpose())
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn add_outer(&mut self, v: &Vec3, weight: f64) {
        self.0 += (v * v.transpose()) * weight;
    }

    pub fn scaled(&self, s: f64) -> Self {
        SymMat3(self.0 * s)
    }

    pub fn quadratic_form(&self, v: &Vec3) -> f64 {
        v.dot(&(self.0 * v))
    }

    pub fn min_eig(&self) -> (f64, Vec3) {
        min_eig_sym3(self)
    }
}

impl std::ops::Add for SymMat3 {
    type Output = SymMat3;
    fn add(self, rhs: SymMat3) -> SymMat3 {
        SymMat3(self.0 + rhs.0)
    }
}

/// Skew-symmetric matrix with `skew(v) * w == v.cross(w)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] applied to the antisymmetric part of `m`.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Rodrigues exponential map so(3) -> SO(3).
pub fn exp_so3(phi: &Vec3) -> Rotation {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    let (a, b) = if theta2 < 1e-8 {
        // Taylor expansions of sin(t)/t and (1-cos(t))/t^2
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation(Mat3::identity() + k * a + k * k * b)
}

/// Logarithm map SO(3) -> so(3), returning a rotation vector with norm in [0, π].
pub fn log_so3(r: &Rotation) -> Vec3 {
    let m = r.matrix();
    let cos_theta = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let w = vee(m);
    if theta < 1e-5 {
        return w * (1.0 + theta * theta / 6.0);
    }
    if PI - theta > 1e-3 {
        return w * (theta / theta.sin());
    }
    // Near π the antisymmetric part vanishes; recover the axis from the
    // symmetric part (1 - cos θ) a aᵀ instead.
    let b = (m + m.transpose()) * 0.5 - Mat3::identity() * cos_theta;
    let one_minus_cos = 1.0 - cos_theta;
    let i = (0..3)
        .max_by(|&a, &c| b[(a, a)].partial_cmp(&b[(c, c)]).unwrap())
        .unwrap();
    let mut axis: Vec3 = b.column(i).into_owned() / one_minus_cos;
    axis /= axis.norm();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Right Jacobian of SO(3).
pub fn right_jacobian(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    let (a, b) = if theta2 < 1e-8 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Mat3::identity() - k * a + k * k * b
}

/// Cayley map: `R = I + 2(⌊c⌋ₓ + ⌊c⌋ₓ²) / (1 + cᵀc)`.
///
/// Equals `exp_so3(2 atan(|c|) c/|c|)`; it cannot reach 180° rotations.
pub fn cayley_to_rotation(c: &Vec3) -> Rotation {
    let k = skew(c);
    let d = 1.0 + c.norm_squared();
    Rotation(Mat3::identity() + (k + k * k) * (2.0 / d))
}

/// Cayley parameters of the rotation `exp_so3(phi)`: `tan(|phi|/2) phi/|phi|`.
pub fn rotation_vector_to_cayley(phi: &Vec3) -> Vec3 {
    phi * half_tan_ratio(phi.norm())
}

/// tan(θ/2)/θ, continuous at zero.
fn half_tan_ratio(theta: f64) -> f64 {
    if theta < 1e-4 {
        0.5 + theta * theta / 24.0
    } else {
        (theta * 0.5).tan() / theta
    }
}

/// Derivative of [`rotation_vector_to_cayley`] with respect to `phi`.
pub fn cayley_from_rotation_vector_jacobian(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let s = half_tan_ratio(theta);
    // (ds/dθ)/θ
    let ds_over_theta = if theta < 1e-4 {
        1.0 / 12.0 + theta * theta / 60.0
    } else {
        let half = theta * 0.5;
        let sec2 = 1.0 / (half.cos() * half.cos());
        (half * sec2 - half.tan()) / (theta * theta * theta)
    };
    Mat3::identity() * s + phi * phi.transpose() * ds_over_theta
}

/// Partial derivatives of [`cayley_to_rotation`] with respect to each component of `c`.
pub fn cayley_jacobians(c: &Vec3) -> [Mat3; 3] {
    let k = skew(c);
    let a = k + k * k;
    let d = 1.0 + c.norm_squared();
    std::array::from_fn(|m| {
        let mut e = Vec3::zeros();
        e[m] = 1.0;
        let em = skew(&e);
        let da = em + em * k + k * em;
        da * (2.0 / d) - a * (4.0 * c[m] / (d * d))
    })
}

/// Smallest eigenvalue of a symmetric 3x3 matrix and a unit eigenvector.
///
/// Uses the closed-form trigonometric solution and falls back to cyclic
/// Jacobi sweeps when the two smallest eigenvalues nearly coincide. When the
/// smallest eigenvalue is repeated the eigenvector is not unique and any
/// vector of the eigenspace may be returned. The sign is fixed so that the
/// largest-magnitude component is positive.
pub fn min_eig_sym3(m: &SymMat3) -> (f64, Vec3) {
    let a = m.matrix();
    let scale = a.abs().max();
    if scale == 0.0 {
        return (0.0, Vec3::new(1.0, 0.0, 0.0));
    }
    let eigs = sym3_eigenvalues(a);
    let (l0, l1) = (eigs[0], eigs[1]);
    let gap = (l1 - l0) / scale;
    let v = if gap < 1e-12 {
        None
    } else {
        null_vector(&(a - Mat3::identity() * l0))
    };
    let (lambda, v) = match v {
        // the trigonometric roots lose accuracy next to a double root
        Some(v) if (a * v - v * l0).norm() <= 1e-10 * scale => (v.dot(&(a * v)), v),
        _ => jacobi_min_eig(a),
    };
    (lambda, canonical_sign(v))
}

/// Eigenvalues of a symmetric 3x3 matrix in ascending order.
pub fn sym3_eigenvalues(a: &Mat3) -> [f64; 3] {
    let p1 = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
    let q = a.trace() / 3.0;
    let p2 = (a[(0, 0)] - q).powi(2) + (a[(1, 1)] - q).powi(2) + (a[(2, 2)] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    if p == 0.0 {
        return [q, q, q];
    }
    let b = (a - Mat3::identity() * q) / p;
    let r = (b.determinant() * 0.5).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let largest = q + 2.0 * p * phi.cos();
    let smallest = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
    let middle = 3.0 * q - largest - smallest;
    let mut out = [smallest, middle, largest];
    out.sort_by(|x, y| x.partial_cmp(y).unwrap());
    out
}

/// Unit vector spanning the null space of a rank-2 matrix, from the best-conditioned
/// cross product of its rows.
fn null_vector(a: &Mat3) -> Option<Vec3> {
    let r0: Vec3 = a.row(0).transpose();
    let r1: Vec3 = a.row(1).transpose();
    let r2: Vec3 = a.row(2).transpose();
    let candidates = [r0.cross(&r1), r0.cross(&r2), r1.cross(&r2)];
    let best = candidates
        .iter()
        .max_by(|x, y| x.norm_squared().partial_cmp(&y.norm_squared()).unwrap())
        .unwrap();
    let row_scale = r0.norm().max(r1.norm()).max(r2.norm());
    let n = best.norm();
    if n <= 1e-12 * row_scale * row_scale || n == 0.0 {
        None
    } else {
        Some(best / n)
    }
}

fn jacobi_min_eig(a: &Mat3) -> (f64, Vec3) {
    let (_, vecs) = jacobi_eigen(a);
    let v = vecs[0];
    (v.dot(&(a * v)), v)
}

/// Full eigen-decomposition by cyclic Jacobi rotations, ascending eigenvalues.
fn jacobi_eigen(a: &Mat3) -> ([f64; 3], [Vec3; 3]) {
    let mut d = *a;
    let mut v = Mat3::identity();
    for _ in 0..50 {
        let off = d[(0, 1)].powi(2) + d[(0, 2)].powi(2) + d[(1, 2)].powi(2);
        if off <= 1e-30 * d.norm_squared().max(f64::MIN_POSITIVE) {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = d[(p, q)];
            if apq == 0.0 {
                continue;
            }
            let theta = (d[(q, q)] - d[(p, p)]) / (2.0 * apq);
            let t = if theta == 0.0 {
                1.0
            } else {
                theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
            };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut g = Mat3::identity();
            g[(p, p)] = c;
            g[(q, q)] = c;
            g[(p, q)] = s;
            g[(q, p)] = -s;
            d = g.transpose() * d * g;
            v *= g;
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&x, &y| d[(x, x)].partial_cmp(&d[(y, y)]).unwrap());
    let vals = order.map(|i| d[(i, i)]);
    let vecs = order.map(|i| {
        let c: Vec3 = v.column(i).into_owned();
        c / c.norm()
    });
    (vals, vecs)
}

/// All eigenvalues (ascending) and unit eigenvectors of a symmetric 3x3 matrix.
pub fn sym3_eigen(m: &SymMat3) -> ([f64; 3], [Vec3; 3]) {
    let (vals, vecs) = jacobi_eigen(m.matrix());
    (vals, vecs.map(canonical_sign))
}

fn canonical_sign(v: Vec3) -> Vec3 {
    let i = v.iamax();
    if v[i] < 0.0 {
        -v
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
        Vec3::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        )
    }

    fn is_rotation(r: &Rotation, tol: f64) -> bool {
        let m = r.matrix();
        (m * m.transpose() - Mat3::identity()).abs().max() < tol && (m.determinant() - 1.0).abs() < tol
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(exp_so3(&Vec3::zeros()), Rotation::identity());
    }

    #[test]
    fn exp_quarter_turn_about_z() {
        let r = exp_so3(&Vec3::new(0.0, 0.0, PI / 2.0));
        let x = r * Vec3::x();
        assert!((x - Vec3::y()).norm() < 1e-15);
    }

    #[test]
    fn exp_composed_with_negative_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let phi = random_vec(&mut rng, 3.0);
            let r = exp_so3(&phi) * exp_so3(&-phi);
            assert!((r.matrix() - Mat3::identity()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn exp_near_pi_stays_orthonormal() {
        let phi = Vec3::new(1.0, -2.0, 0.5).normalize() * (PI - 1e-9);
        assert!(is_rotation(&exp_so3(&phi), 1e-12));
    }

    #[test]
    fn log_identity_and_small_roundtrip() {
        assert_eq!(log_so3(&Rotation::identity()), Vec3::zeros());
        let phi = Vec3::new(0.1, 0.0, 0.0);
        assert!((log_so3(&exp_so3(&phi)) - phi).norm() < 1e-12);
    }

    #[test]
    fn log_roundtrip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let axis = random_vec(&mut rng, 1.0).normalize();
            let angle = rng.random_range(0.0..PI - 1e-6);
            let phi = axis * angle;
            worst = worst.max((log_so3(&exp_so3(&phi)) - phi).norm());
        }
        assert!(worst < 1e-9, "max round-trip error {worst}");
    }

    #[test]
    fn log_at_exactly_pi() {
        let r = Rotation::from_matrix_unchecked(Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0)));
        let phi = log_so3(&r);
        assert!((phi.norm() - PI).abs() < 1e-12);
        assert!((phi.normalize().x.abs() - 1.0).abs() < 1e-12);
        assert!((exp_so3(&phi).matrix() - r.matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn log_near_pi_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let axis = random_vec(&mut rng, 1.0).normalize();
            let phi = axis * (PI - rng.random_range(1e-8..1e-3));
            assert!((log_so3(&exp_so3(&phi)) - phi).norm() < 1e-9);
        }
    }

    #[test]
    fn cayley_basics() {
        assert_eq!(cayley_to_rotation(&Vec3::zeros()), Rotation::identity());
        let theta: f64 = 0.2;
        let r = cayley_to_rotation(&Vec3::new((theta / 2.0).tan(), 0.0, 0.0));
        let e = exp_so3(&Vec3::new(theta, 0.0, 0.0));
        assert!((r.matrix() - e.matrix()).abs().max() < 1e-15);
        let big = Vec3::new(10.0, -3.0, 4.0).normalize() * 10.0;
        assert!(is_rotation(&cayley_to_rotation(&big), 1e-12));
    }

    #[test]
    fn cayley_matches_exp_of_doubled_atan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let c = random_vec(&mut rng, 1.0).normalize() * rng.random_range(1e-6..10.0);
            let n = c.norm();
            let phi = c * (2.0 * n.atan() / n);
            let diff = cayley_to_rotation(&c).matrix() - exp_so3(&phi).matrix();
            assert!(diff.abs().max() < 1e-9);
            let back = rotation_vector_to_cayley(&phi);
            assert!((back - c).norm() < 1e-8 * n.max(1.0));
        }
    }

    #[test]
    fn cayley_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let c = random_vec(&mut rng, 1.0);
            let jac = cayley_jacobians(&c);
            for (m, jm) in jac.iter().enumerate() {
                let mut e = Vec3::zeros();
                e[m] = 1e-6;
                let fd = (cayley_to_rotation(&(c + e)).matrix() - cayley_to_rotation(&(c - e)).matrix()) / 2e-6;
                assert!((fd - jm).abs().max() < 1e-8);
            }
            let phi = random_vec(&mut rng, 1.0);
            let j = cayley_from_rotation_vector_jacobian(&phi);
            for k in 0..3 {
                let mut e = Vec3::zeros();
                e[k] = 1e-6;
                let fd = (rotation_vector_to_cayley(&(phi + e)) - rotation_vector_to_cayley(&(phi - e))) / 2e-6;
                assert!((fd - j.column(k)).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn skew_matches_cross_product() {
        assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
        assert_eq!(skew(&Vec3::x()) * Vec3::y(), Vec3::z());
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let v = random_vec(&mut rng, 1.0);
            let w = random_vec(&mut rng, 1.0);
            assert!((skew(&v) * w - v.cross(&w)).abs().max() <= 1e-15);
            assert_eq!(skew(&v).transpose(), -skew(&v));
        }
    }

    #[test]
    fn min_eig_diagonal_and_identity() {
        let (l, v) = min_eig_sym3(&SymMat3::from_matrix(&Mat3::from_diagonal(&Vec3::new(3.0, 2.0, 1.0))));
        assert!((l - 1.0).abs() < 1e-14);
        assert!((v - Vec3::z()).norm() < 1e-12);

        let (l, v) = min_eig_sym3(&SymMat3::from_matrix(&Mat3::identity()));
        assert!((l - 1.0).abs() < 1e-14);
        assert!((v.norm() - 1.0).abs() < 1e-14);
    }

    /// Smallest root of det(M - λI) by bisection on the characteristic cubic.
    fn char_poly_min_root(m: &Mat3) -> f64 {
        let f = |l: f64| (m - Mat3::identity() * l).determinant();
        let bound = m.abs().sum() + 1.0;
        let mut lo = -bound;
        // the cubic is +inf at -inf; walk right until the sign changes
        let steps = 20000;
        let h = 2.0 * bound / steps as f64;
        let mut hi = lo;
        let f_lo = f(lo);
        for _ in 0..steps {
            hi += h;
            if f(hi).signum() != f_lo.signum() || f(hi) == 0.0 {
                break;
            }
            lo = hi;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid).signum() == f(lo).signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn min_eig_matches_characteristic_root_on_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let a = Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let m = a * a.transpose() + Mat3::identity() * 0.01;
            let (l, _) = min_eig_sym3(&SymMat3::from_matrix(&m));
            let root = char_poly_min_root(&m);
            assert!((l - root).abs() < 1e-9, "{l} vs {root}");
        }
    }

    #[test]
    fn min_eig_residual_on_many_random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for i in 0..10_000 {
            let a = Mat3::from_fn(|_, _| rng.random_range(-10.0..10.0));
            let mut m = SymMat3::from_matrix(&a);
            if i % 10 == 0 {
                // force a repeated smallest eigenvalue
                let q = exp_so3(&random_vec(&mut rng, 3.0));
                let d = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, 5.0));
                m = SymMat3::from_matrix(&(q.matrix() * d * q.matrix().transpose()));
            }
            let (l, v) = min_eig_sym3(&m);
            let r = (m.matrix() * v - v * l).norm() / m.matrix().norm();
            assert!(r <= 1e-9, "residual {r} at {i}");
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn min_eig_sign_is_canonical() {
        let m = SymMat3::from_matrix(&Mat3::from_diagonal(&Vec3::new(2.0, 1.0, 3.0)));
        let (_, v) = min_eig_sym3(&m);
        assert!(v.y > 0.0);
    }

    #[test]
    fn quaternion_roundtrip() {
        let r = exp_so3(&Vec3::new(0.3, -0.2, 0.9));
        let q = r.to_quaternion();
        let back = Rotation::from_quaternion(q[0], q[1], q[2], q[3]);
        assert!((back.matrix() - r.matrix()).abs().max() < 1e-12);
    }
}
