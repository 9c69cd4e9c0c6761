use proptest::prelude::*;
use vi_init::geom::{
    cayley_to_rotation, exp_so3, log_so3, min_eig_sym3, rotation_vector_to_cayley, sym3_eigen, Mat3, SymMat3, Vec3,
};
use vi_init::pipeline::{initialize, PipelineConfig};
use vi_init::preint::{apply_gyro_bias, preintegrate_span, preintegrate_with_bias, ImuSample};
use vi_init::refine::vector_with_norm;
use vi_init::synth::{generate, ScenarioConfig, TrajectoryKind};
use vi_init::uncertainty::{bearing_uncertainty, rotate_cov_2d, CameraIntrinsics, Mat2, Vec2};

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-r..r).prop_map(Vec3::from)
}

fn imu_stream(gyro: Vec3, accel: Vec3, n: i64) -> Vec<ImuSample> {
    (0..n)
        .map(|k| {
            let t = k as f64 * 0.005;
            let w = gyro + Vec3::new((3.0 * t).sin(), (2.0 * t).cos(), t) * 0.3;
            ImuSample::new(k * 5_000_000, w, accel + Vec3::new(t.cos(), 0.0, t.sin()))
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn log_inverts_exp(phi in vec3(1.7)) {
        prop_assert!((log_so3(&exp_so3(&phi)) - phi).norm() < 1e-12);
    }

    #[test]
    fn cayley_matches_exp(phi in vec3(1.5)) {
        let r = cayley_to_rotation(&rotation_vector_to_cayley(&phi));
        prop_assert!(r.angle_to(&exp_so3(&phi)) < 1e-12);
    }

    #[test]
    fn symmetric_eigen_reconstructs(a in prop::array::uniform9(-3.0..3.0f64)) {
        let m = Mat3::from_row_slice(&a);
        let s = SymMat3::from_matrix(&(m + m.transpose()));
        let (eigs, vecs) = sym3_eigen(&s);
        let rebuilt = (0..3).fold(Mat3::zeros(), |acc, i| acc + vecs[i] * vecs[i].transpose() * eigs[i]);
        prop_assert!((rebuilt - s.matrix()).norm() < 1e-10 * s.matrix().norm().max(1.0));
        prop_assert!(eigs[0] <= eigs[1] && eigs[1] <= eigs[2]);
        let (l, v) = min_eig_sym3(&s);
        prop_assert!((s.matrix() * v - v * l).norm() < 1e-9 * s.matrix().norm().max(1.0));
    }

    #[test]
    fn preintegration_composes(gyro in vec3(1.0), accel in vec3(10.0), split in 1i64..49) {
        let samples = imu_stream(gyro, accel, 50);
        // splitting inside a sample changes the Euler discretisation, so split on one
        let (t0, tm, t1) = (0, split * 5_000_000, 250_000_000);
        let bias = Vec3::zeros();
        let full = preintegrate_span(&samples, t0, t1, &bias).unwrap();
        let a = preintegrate_span(&samples, t0, tm, &bias).unwrap();
        let b = preintegrate_span(&samples, tm, t1, &bias).unwrap();
        prop_assert!((a.gamma * b.gamma).angle_to(&full.gamma) < 1e-12);
        prop_assert!((a.beta + a.gamma * b.beta - full.beta).norm() < 1e-10);
        prop_assert!((a.alpha + a.beta * b.dt_total + a.gamma * b.alpha - full.alpha).norm() < 1e-10);
        prop_assert!((a.dt_total + b.dt_total - full.dt_total).abs() < 1e-15);
    }

    #[test]
    fn bias_update_is_first_order(gyro in vec3(1.0), db in vec3(1.0)) {
        let samples = imu_stream(gyro, Vec3::zeros(), 51);
        let base = preintegrate_with_bias(&samples, &Vec3::zeros()).unwrap();
        // error of the first-order update shrinks quadratically with the bias step
        let err = |h: f64| apply_gyro_bias(&base, &(db * h)).angle_to(&preintegrate_with_bias(&samples, &(db * h)).unwrap().gamma);
        let (e1, e2) = (err(0.02), err(0.01));
        prop_assert!(e2 < 0.3 * e1 + 1e-14, "{e1} {e2}");
    }

    #[test]
    fn bearing_covariance_is_psd(px in (0.0..752.0f64, 0.0..480.0f64), sigma in 0.1..2.0f64, ratio in 1.0..10.0f64, theta in -3.2..3.2f64) {
        let k = CameraIntrinsics::new(458.0, 457.0, 367.0, 248.0).unwrap();
        let cov = rotate_cov_2d(&Mat2::new(sigma * sigma, 0.0, 0.0, sigma * sigma / ratio), theta);
        let u = bearing_uncertainty(&Vec2::new(px.0, px.1), &cov, &k).unwrap();
        let m = u.sigma3d.matrix();
        prop_assert_eq!(*m, m.transpose());
        let (eigs, _) = sym3_eigen(&u.sigma3d);
        prop_assert!(eigs[0] >= -1e-18 * eigs[2]);
        prop_assert!(eigs[2] > 0.0);
    }

    #[test]
    fn exact_norm_for_any_direction(dir in vec3(100.0), mag in 0.1..100.0f64) {
        prop_assume!(dir.norm() > 1e-6);
        prop_assert_eq!(vector_with_norm(&dir, mag).norm(), mag);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn noise_free_pipeline_recovers_truth(seed in 0u64..1000, kind in 0usize..3, bias in vec3(0.04)) {
        let kinds = [TrajectoryKind::Sinusoid, TrajectoryKind::Circle, TrajectoryKind::Spline];
        let sc = ScenarioConfig { kind: kinds[kind], pixel_noise: false, gyro_bias: bias, seed, ..ScenarioConfig::default() };
        let (seg, gt) = generate(&sc).unwrap();
        let r = initialize(&seg, &PipelineConfig::default()).unwrap();
        let g = gt.gravity_c0(&seg.extrinsics);
        prop_assert!((r.bias.bg - gt.gyro_bias).norm() < 1e-6);
        prop_assert!((r.scale / gt.scale_factor - 1.0).abs() < 1e-6);
        prop_assert!(r.gravity.cross(&g).norm() / 9.81 < 1e-6);
        prop_assert_eq!(r.gravity.norm(), 9.81);
    }
}
