use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use vi_init::eval::{aggregate, evaluate, segment_errors, umeyama_scale, SegmentErrors, SegmentMetrics};
use vi_init::geom::exp_so3;
use vi_init::gyro_bias::BiasEstimate;
use vi_init::pipeline::{InitResult, PipelineConfig, StageTimings};
use vi_init::synth::{generate, GroundTruth, ScenarioConfig};
use vi_init::vgs::VgsSolution;
use vi_init::Vec3;

fn truth_result(seg: &vi_init::segment::InitSegment, gt: &GroundTruth) -> InitResult {
    let ext = &seg.extrinsics;
    let g = gt.gravity_c0(ext);
    let v = gt.velocities_c0(ext);
    InitResult {
        bias: BiasEstimate {
            bg: gt.gyro_bias,
            objective: 0.0,
            iterations: 0,
            converged: true,
            dropped_pairs: vec![],
            degenerate_pairs: vec![],
        },
        rotations: gt.rotations_c0(ext),
        vgs: VgsSolution { scale: gt.scale_factor, gravity: g, velocities: v.clone(), residual_norm: 0.0 },
        refinement: None,
        scale: gt.scale_factor,
        gravity: g,
        velocities: v,
        timings: StageTimings::default(),
    }
}

#[test]
fn perfect_estimate_scores_zero() {
    let (seg, gt) = generate(&ScenarioConfig { gyro_bias: Vec3::new(0.01, 0.0, 0.02), ..Default::default() }).unwrap();
    let e = segment_errors(&seg, &gt, &truth_result(&seg, &gt)).unwrap();
    assert!(e.bias == 0.0 && e.velocity_rmse == 0.0 && e.gravity_dir_deg == 0.0);
    assert!(e.rotation_rmse < 1e-7, "{}", e.rotation_rmse);
    assert!(e.scale < 1e-12);
}

#[test]
fn one_degree_tilt() {
    let (seg, gt) = generate(&ScenarioConfig::default()).unwrap();
    let mut r = truth_result(&seg, &gt);
    let axis = r.gravity.cross(&Vec3::new(0.3, 1.0, -0.2)).normalize();
    r.gravity = exp_so3(&(axis * 1f64.to_radians())) * r.gravity;
    let e = segment_errors(&seg, &gt, &r).unwrap();
    assert!((e.gravity_dir_deg - 1.0).abs() < 1e-9, "{}", e.gravity_dir_deg);
    assert_eq!(e.gravity_dir_pre_deg, 0.0);
}

#[test]
fn umeyama_monte_carlo_scale_spread() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let sigma = 0.01;
    let n = 30;
    let src: Vec<Vec3> = (0..n).map(|_| Vec3::from_fn(|_, _| normal.sample(&mut rng))).collect();
    let mu = src.iter().sum::<Vec3>() / n as f64;
    let var_s = src.iter().map(|p| (p - mu).norm_squared()).sum::<f64>() / n as f64;
    // linearised standard deviation of the recovered scale
    let sigma_s = sigma / (n as f64 * var_s).sqrt();
    let trials = 2000;
    let (s_true, r_true, t_true) = (2.5, exp_so3(&Vec3::new(0.4, -1.2, 0.3)), Vec3::new(1.0, -2.0, 0.5));
    let mut inside = 0;
    let mut sum_sq = 0.0;
    for _ in 0..trials {
        let dst: Vec<Vec3> = src
            .iter()
            .map(|p| r_true * *p * s_true + t_true + Vec3::from_fn(|_, _| sigma * normal.sample(&mut rng)))
            .collect();
        let sim = umeyama_scale(&src, &dst).unwrap();
        let err = sim.scale - s_true;
        sum_sq += err * err;
        if err.abs() < 3.0 * sigma_s {
            inside += 1;
        }
        assert!(sim.rotation.angle_to(&r_true) < 10.0 * sigma);
    }
    let std = (sum_sq / trials as f64).sqrt();
    assert!(inside as f64 / trials as f64 > 0.99, "{inside}/{trials}");
    assert!((std / sigma_s - 1.0).abs() < 0.1, "std {std} predicted {sigma_s}");
}

fn noisy_config(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        pixel_sigma: 2.0,
        gyro_bias: Vec3::new(0.02, -0.01, 0.03),
        gyro_noise: 1.7e-4,
        accel_noise: 2e-3,
        translation_noise: 0.01,
        seed,
        ..Default::default()
    }
}

#[test]
fn golden_noisy_run() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/eval_seed42.json");
    let (seg, gt) = generate(&noisy_config(42)).unwrap();
    let m = evaluate(0, &seg, &gt, &PipelineConfig::default());
    let got = m.errors.expect("pipeline succeeds");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, serde_json::to_string_pretty(&got).unwrap() + "\n").unwrap();
    }
    let want: SegmentErrors = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let pairs = [
        (got.bias, want.bias),
        (got.rotation_rmse, want.rotation_rmse),
        (got.velocity_rmse, want.velocity_rmse),
        (got.gravity_dir_deg, want.gravity_dir_deg),
        (got.gravity_dir_pre_deg, want.gravity_dir_pre_deg),
        (got.scale, want.scale),
    ];
    for (a, b) in pairs {
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-6), "{a} vs golden {b}");
    }
}

#[test]
fn stage_times_add_up() {
    for seed in 0..5 {
        let (seg, gt) = generate(&noisy_config(seed)).unwrap();
        let m = evaluate(0, &seg, &gt, &PipelineConfig::default());
        let t = m.timings;
        let sum = t.bias_ms + t.preint_ms + t.vgs_ms + t.refine_ms;
        assert!(sum <= t.total_ms && sum >= 0.95 * t.total_ms, "{t:?}");
    }
}

#[test]
fn aggregate_uses_successful_segments() {
    let ok = |index, scale| SegmentMetrics {
        index,
        errors: Some(SegmentErrors {
            bias: 0.001,
            rotation_rmse: 0.01,
            velocity_rmse: 0.1,
            gravity_dir_deg: 1.0,
            gravity_dir_pre_deg: 2.0,
            scale,
        }),
        success: scale < 1.0,
        failure: None,
        timings: StageTimings::default(),
    };
    let failed = SegmentMetrics { index: 9, errors: None, success: false, failure: Some("x".into()), timings: StageTimings::default() };
    let report = aggregate(&[ok(0, 0.1), ok(1, 0.2), ok(2, 0.3), ok(3, 0.4), ok(4, 0.5), ok(5, 3.0), failed]);
    assert_eq!((report.segments, report.successes, report.failures), (7, 5, 1));
    assert!((report.success_rate - 5.0 / 7.0).abs() < 1e-15);
    assert!((report.scale_iqr - 0.2).abs() < 1e-12);
    assert!((report.scale.mean - 0.3).abs() < 1e-12);
    assert_eq!(report.gravity_dir_deg.rmse, 1.0);
    let empty = aggregate(&[]);
    assert_eq!(empty.segments, 0);
    assert_eq!(empty.success_rate, 0.0);
}
