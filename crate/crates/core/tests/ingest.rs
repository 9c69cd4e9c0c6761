use std::fs;
use std::path::{Path, PathBuf};

use vi_init::gyro_bias::Extrinsics;
use vi_init::ingest::{
    load_asl, read_imu_csv, read_sensor_yaml, segment, AslDataset, Calibration, GroundTruthTranslations, SegmentOptions,
    TrackTable, TranslationTable,
};
use vi_init::preint::ImuSample;
use vi_init::segment::TranslationProvider;
use vi_init::synth::{export_asl, generate, ScenarioConfig, TrajectoryKind};
use vi_init::uncertainty::CameraIntrinsics;
use vi_init::{Error, Vec3};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/minimal")
}

#[test]
fn minimal_fixture_parses_exactly() {
    let ds = load_asl(&fixture()).unwrap();
    assert_eq!(ds.imu.len(), 3);
    let s = &ds.imu[0];
    assert_eq!(s.t_ns, 1403636579758555392);
    assert_eq!(s.gyro, Vec3::new(-0.099134701513277898, 0.14730578886832138, 0.02722713633111154));
    assert_eq!(s.accel, Vec3::new(8.1476917083333333, -0.37592158333333331, -2.4026292499999999));
    assert_eq!(ds.imu[2].accel.z, -2.4353180833333332);
    assert_eq!(ds.camera_ns, vec![1403636579763555584, 1403636579813555456, 1403636579863555584]);

    let gt = ds.ground_truth.as_ref().unwrap();
    assert_eq!(gt.len(), 3);
    assert_eq!(gt[1].position, Vec3::new(4.688177, -1.786770, 0.787350));
    assert_eq!(gt[1].velocity, Vec3::new(-0.029272, 0.033657, 0.804720));
    assert_eq!(gt[1].accel_bias, Vec3::new(-0.025266, 0.136696, 0.075593));
    let q = gt[1].rotation.to_quaternion();
    let expected = [0.534640, -0.152990, -0.826976, -0.082863];
    let n = expected.iter().map(|x| x * x).sum::<f64>().sqrt();
    for (a, b) in q.iter().zip(expected) {
        assert!((a - b / n).abs() < 1e-12);
    }

    let calib = ds.calibration.unwrap();
    assert_eq!(calib.intrinsics.fx(), 458.654);
    assert_eq!(calib.extrinsics.p_bc, Vec3::new(-0.0216401454975, -0.064676986768, 0.00981073058949));
    let yaml = read_sensor_yaml(&fixture().join("sensor.yaml")).unwrap();
    assert_eq!(yaml.intrinsics, calib.intrinsics);
    assert_eq!(yaml.extrinsics, calib.extrinsics);
}

#[test]
fn sidecar_files() {
    let tracks = TrackTable::read(&fixture().join("tracks.csv")).unwrap();
    let kf1 = tracks.observations(1);
    assert_eq!(kf1.iter().map(|o| o.track_id).collect::<Vec<_>>(), vec![3, 7]);
    let c = kf1[1].cov.unwrap();
    assert_eq!((c[(0, 0)], c[(0, 1)], c[(1, 0)], c[(1, 1)]), (4.0, 0.5, 0.5, 1.0));
    assert!(kf1[0].cov.is_none());
    assert!(tracks.observations(5).is_empty());

    let table = TranslationTable::read(&fixture().join("translations.csv")).unwrap();
    let t = table.translations(&[1403636579813555456], &Extrinsics::default()).unwrap();
    assert_eq!(t[0], Vec3::new(0.01, -0.002, 0.03));
    assert!(table.translations(&[1], &Extrinsics::default()).is_err());
}

fn copy_fixture_with(rel: &str, text: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["imu0", "cam0", "state_groundtruth_estimate0"] {
        fs::create_dir_all(dir.path().join(sub)).unwrap();
        let src = fixture().join(sub).join("data.csv");
        fs::copy(&src, dir.path().join(sub).join("data.csv")).unwrap();
    }
    fs::write(dir.path().join(rel), text).unwrap();
    dir
}

#[test]
fn shuffled_imu_rows_name_the_first_offending_line() {
    let text = fs::read_to_string(fixture().join("imu0/data.csv")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.swap(1, 2);
    let dir = copy_fixture_with("imu0/data.csv", &(lines.join("\n") + "\n"));
    match load_asl(dir.path()) {
        Err(Error::Parse { line, path, msg }) => {
            assert_eq!(line, 3, "{msg}");
            assert!(path.ends_with("imu0/data.csv"));
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn malformed_rows_and_missing_files() {
    let dir = copy_fixture_with("cam0/data.csv", "#timestamp [ns],filename\n100,a.png\nabc,b.png\n");
    assert!(matches!(load_asl(dir.path()), Err(Error::Parse { line: 3, .. })));
    let dir = copy_fixture_with("imu0/data.csv", "#t\n1,0,0,0,0,0\n");
    assert!(matches!(read_imu_csv(&dir.path().join("imu0/data.csv")), Err(Error::Parse { line: 2, .. })));
    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(load_asl(empty.path()), Err(Error::MissingFile(_))));
}

fn synthetic_stream(seconds: f64) -> AslDataset {
    let imu_period = 5_000_000;
    let end = (seconds * 1e9) as i64;
    let imu = (0..=end / imu_period)
        .map(|k| ImuSample::new(k * imu_period, Vec3::new(0.0, 0.0, 0.1), Vec3::new(0.0, 0.0, 9.81)))
        .collect();
    // camera clock offset by 1 ms from the IMU
    let camera_ns = (0..=end / 50_000_000).map(|k| 1_000_000 + k * 50_000_000).filter(|&t| t <= end).collect();
    AslDataset {
        root: PathBuf::from("memory"),
        imu,
        camera_ns,
        ground_truth: None,
        calibration: Some(Calibration {
            extrinsics: Extrinsics::default(),
            intrinsics: CameraIntrinsics::new(400.0, 400.0, 320.0, 240.0).unwrap(),
        }),
    }
}

#[test]
fn thirty_seconds_give_twelve_segments() {
    let ds = synthetic_stream(30.0);
    let segs = segment(&ds, &SegmentOptions::default(), &TrackTable::default(), None).unwrap();
    assert_eq!(segs.len(), 12);
    for (m, s) in segs.iter().enumerate() {
        assert_eq!(s.index, m);
        s.segment.validate().unwrap();
        assert_eq!(s.segment.len(), 10);
        assert_eq!(s.segment.keyframe_ns[0], 1_000_000 + m as i64 * 2_500_000_000);
    }
    // every IMU sample lies in exactly one keyframe interval
    let all: Vec<i64> = segs.iter().flat_map(|s| s.segment.imu_spans.iter().flatten().map(|x| x.t_ns)).collect();
    let mut dedup = all.clone();
    dedup.dedup();
    assert_eq!(all, dedup);
}

#[test]
fn short_stream_gives_no_segments() {
    let ds = synthetic_stream(2.0);
    assert!(segment(&ds, &SegmentOptions::default(), &TrackTable::default(), None).unwrap().is_empty());
}

#[test]
fn imu_gap_drops_only_that_segment() {
    let mut ds = synthetic_stream(10.0);
    ds.imu.retain(|s| !(3_000_000_000..3_100_000_000).contains(&s.t_ns));
    let segs = segment(&ds, &SegmentOptions::default(), &TrackTable::default(), None).unwrap();
    assert_eq!(segs.iter().map(|s| s.index).collect::<Vec<_>>(), vec![0, 2, 3]);
}

#[test]
fn export_then_ingest_is_identity() {
    for kind in [TrajectoryKind::Sinusoid, TrajectoryKind::Spline] {
        let config = ScenarioConfig {
            kind,
            gyro_bias: Vec3::new(0.02, -0.01, 0.03),
            gyro_noise: 1e-3,
            accel_noise: 1e-2,
            translation_noise: 0.01,
            seed: 5,
            ..ScenarioConfig::default()
        };
        let (seg, truth) = generate(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_asl(dir.path(), &seg, &truth).unwrap();

        let ds = load_asl(dir.path()).unwrap();
        let tracks = TrackTable::read(&dir.path().join("tracks.csv")).unwrap();
        let table = TranslationTable::read(&dir.path().join("translations.csv")).unwrap();
        let opts = SegmentOptions { kf_rate: config.kf_rate, kf_count: config.kf_count, ..SegmentOptions::default() };
        let segs = segment(&ds, &opts, &tracks, Some(&table)).unwrap();
        assert_eq!(segs.len(), 1);
        let back = &segs[0].segment;
        assert_eq!(back.keyframe_ns, seg.keyframe_ns);
        assert_eq!(back.imu_spans, seg.imu_spans, "{kind}");
        assert_eq!(back.observations, seg.observations, "{kind}");
        assert_eq!(back.extrinsics, seg.extrinsics, "{kind}");
        assert_eq!(back.intrinsics, seg.intrinsics, "{kind}");
        assert_eq!(back.translations, seg.translations, "{kind}");
        assert_eq!(*back, seg, "{kind}");

        let back = segs[0].truth.as_ref().unwrap();
        assert_eq!(back.gyro_bias, truth.gyro_bias);
        for (a, b) in back.keyframes.iter().zip(&truth.keyframes) {
            assert_eq!(a.t_ns, b.t_ns);
            assert_eq!(a.position, b.position);
            assert_eq!(a.velocity, b.velocity);
            assert!(a.rotation.angle_to(&b.rotation) < 1e-12);
        }

        // translations rebuilt from ground truth match the noise-free ones
        let gt = ds.ground_truth.as_ref().unwrap();
        let provider = GroundTruthTranslations { samples: gt, scale: truth.scale_factor };
        let from_gt = provider.translations(&seg.keyframe_ns, &seg.extrinsics).unwrap();
        for (a, b) in from_gt.iter().zip(truth.camera_positions_c0(&seg.extrinsics)) {
            assert!((a * truth.scale_factor - b).norm() < 1e-12);
        }
    }
}

mod round_trip {
    use super::*;
    use proptest::prelude::*;
    use vi_init::synth::NoiseModel;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn any_synthetic_segment_round_trips(seed in 0u64..10_000, kind in 0usize..4, tracked in any::<bool>(), kf_count in 4usize..12) {
            let kinds = [TrajectoryKind::Sinusoid, TrajectoryKind::Circle, TrajectoryKind::Spline, TrajectoryKind::PureRotation];
            let config = ScenarioConfig {
                kind: kinds[kind],
                kf_count,
                noise_model: if tracked { NoiseModel::Tracked } else { NoiseModel::Independent },
                gyro_noise: 1e-3,
                accel_noise: 1e-2,
                translation_noise: 0.01,
                seed,
                ..ScenarioConfig::default()
            };
            let (seg, truth) = generate(&config).unwrap();
            let dir = tempfile::tempdir().unwrap();
            export_asl(dir.path(), &seg, &truth).unwrap();
            let ds = load_asl(dir.path()).unwrap();
            let tracks = TrackTable::read(&dir.path().join("tracks.csv")).unwrap();
            let table = TranslationTable::read(&dir.path().join("translations.csv")).unwrap();
            let opts = SegmentOptions { kf_rate: config.kf_rate, kf_count, ..SegmentOptions::default() };
            let segs = segment(&ds, &opts, &tracks, Some(&table)).unwrap();
            prop_assert_eq!(segs.len(), 1);
            prop_assert_eq!(&segs[0].segment, &seg);
        }
    }
}
