use std::path::Path;
use std::process::Command;

use vi_init::gyro_bias::BiasMode;
use vi_init::ingest::SegmentOptions;
use vi_init::synth::{export_asl, generate, ScenarioConfig};
use vi_init_bench::{ablation_csv, base_pipeline, run, run_ablation, Source, Translations, Variant};

fn bench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vi-init-bench"))
}

fn small_source() -> Source {
    Source::Synthetic { config: ScenarioConfig { seed: 3, landmarks: 80, ..ScenarioConfig::default() }, segments: 6 }
}

#[test]
fn ablation_edge_cases() {
    let source = small_source();
    let cases = source.load().unwrap();
    let base = base_pipeline(Default::default(), Default::default());
    let empty = run_ablation(&source, &cases, &[], &base);
    assert!(empty.rows.is_empty());
    assert_eq!(ablation_csv(&empty).lines().count(), 1);

    let v = Variant { mode: BiasMode::Pnec, refine: true };
    let twice = run_ablation(&source, &cases, &[v, v], &base);
    assert_eq!(twice.rows[0], twice.rows[1]);
    let row = &twice.rows[0];
    assert!((row.sum - (row.bg + row.rotation + row.scale + row.velocity + row.gdir)).abs() < 1e-12);
}

#[test]
fn variants_parse() {
    assert_eq!("nec:off".parse::<Variant>().unwrap(), Variant { mode: BiasMode::Nec, refine: false });
    assert_eq!("PNEC:on".parse::<Variant>().unwrap(), Variant { mode: BiasMode::Pnec, refine: true });
    assert!("pnec".parse::<Variant>().is_err());
    assert!("foo:on".parse::<Variant>().is_err());
    assert_eq!("groundtruth".parse::<Translations>().unwrap(), Translations::GroundTruth);
}

#[test]
fn synthetic_segments_use_consecutive_seeds() {
    let cases = small_source().load().unwrap();
    for (i, c) in cases.iter().enumerate() {
        let (seg, _) = generate(&ScenarioConfig { seed: 3 + i as u64, landmarks: 80, ..ScenarioConfig::default() }).unwrap();
        assert_eq!(c.index, i);
        assert_eq!(c.segment, seg);
    }
}

#[test]
fn csv_and_json_reports() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    let out = bench().args(["run", "--synthetic", "default", "--segments", "4", "--out"]).arg(&csv).output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("success 4/4"), "{stdout}");
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("index,success,bias"));
    assert!(lines[1].starts_with("0,true,"));

    let json = dir.path().join("r.json");
    let out = bench().args(["run", "--synthetic", "default", "--segments", "2", "--timings", "--out"]).arg(&json).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["segments"].as_array().unwrap().len(), 2);
    assert!(v["timings"]["total_ms"].as_f64().unwrap() > 0.0);
    assert_eq!(v["variant"]["mode"], "pnec");

    let ablate = dir.path().join("a.csv");
    let out = bench()
        .args(["ablate", "--synthetic", "default", "--segments", "3", "--variants", "nec:off,pnec:on", "--out"])
        .arg(&ablate)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = std::fs::read_to_string(&ablate).unwrap();
    assert!(text.starts_with("variant,Bg,Rotation,Scale,Velocity,G.Dir,SUM"));
    assert_eq!(text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect::<Vec<_>>(), vec!["nec", "pnec+refine"]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| bench().args(args).output().unwrap().status.code();
    assert_eq!(code(&["run", "--dataset", dir.path().join("missing").to_str().unwrap()]), Some(2));

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "landmarks = many\n").unwrap();
    assert_eq!(code(&["run", "--synthetic", bad.to_str().unwrap()]), Some(2));

    let starved = dir.path().join("starved.cfg");
    std::fs::write(&starved, "landmarks = 3\n").unwrap();
    assert_eq!(code(&["run", "--synthetic", starved.to_str().unwrap(), "--segments", "3"]), Some(3));

    let out = dir.path().join("r.txt");
    assert_eq!(code(&["run", "--synthetic", "default", "--segments", "1", "--out", out.to_str().unwrap()]), Some(2));
}

fn export(root: &Path, seed: u64) -> ScenarioConfig {
    let config = ScenarioConfig { seed, ..ScenarioConfig::default() };
    let (seg, truth) = generate(&config).unwrap();
    export_asl(root, &seg, &truth).unwrap();
    config
}

#[test]
fn dataset_matches_synthetic_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = export(dir.path(), 9);
    let base = base_pipeline(Default::default(), Default::default());
    let variant = Variant { mode: BiasMode::Pnec, refine: true };

    let synthetic = Source::Synthetic { config: config.clone(), segments: 1 };
    let expected = run(&synthetic, &synthetic.load().unwrap(), variant, &base, false).unwrap();
    let dataset = Source::Dataset {
        root: dir.path().to_path_buf(),
        tracks: None,
        translations: Translations::Auto,
        options: SegmentOptions { kf_rate: config.kf_rate, kf_count: config.kf_count, ..SegmentOptions::default() },
        segments: None,
    };
    let got = run(&dataset, &dataset.load().unwrap(), variant, &base, false).unwrap();
    // ground-truth attitudes pass through quaternions in the export
    let (a, b) = (got.segments[0].errors.unwrap(), expected.segments[0].errors.unwrap());
    assert_eq!(a.bias, b.bias);
    assert_eq!(a.scale, b.scale);
    for (x, y) in [(a.rotation_rmse, b.rotation_rmse), (a.velocity_rmse, b.velocity_rmse), (a.gravity_dir_deg, b.gravity_dir_deg)] {
        assert!((x - y).abs() < 1e-9 * y, "{a:?} {b:?}");
    }

    // ground-truth translations agree with the noise-free exported ones up to scale
    let from_gt = Source::Dataset {
        root: dir.path().to_path_buf(),
        tracks: None,
        translations: Translations::GroundTruth,
        options: SegmentOptions { kf_rate: config.kf_rate, kf_count: config.kf_count, ..SegmentOptions::default() },
        segments: None,
    };
    let r = run(&from_gt, &from_gt.load().unwrap(), variant, &base, false).unwrap();
    let (a, b) = (r.segments[0].errors.unwrap(), got.segments[0].errors.unwrap());
    assert!((a.gravity_dir_deg - b.gravity_dir_deg).abs() < 1e-6, "{a:?} {b:?}");
    assert!((a.scale - b.scale).abs() < 1e-9);

    let out = bench().args(["run", "--dataset"]).arg(dir.path()).args(["--kf-rate", "4", "--kf-count", "10"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
