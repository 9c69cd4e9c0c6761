//! Benchmark harness: segment sources, the parallel evaluation loop and the
//! report writers used by the `vi-init-bench` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use vi_init::eval::{aggregate, evaluate, AggregateReport, SegmentMetrics};
use vi_init::gyro_bias::{BiasMode, VarianceTranslation};
use vi_init::ingest::{load_asl, segment, GroundTruthTranslations, SegmentOptions, TrackTable, TranslationTable};
use vi_init::pipeline::{PipelineConfig, StageTimings};
use vi_init::refine::RowWeighting;
use vi_init::segment::{InitSegment, TranslationProvider};
use vi_init::synth::{generate, GroundTruth, ScenarioConfig};

/// Failures that map to distinct exit codes.
#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    /// Bad input data or configuration (exit code 2).
    #[error("dataset error: {0}")]
    Dataset(String),
    /// Every segment failed to initialize (exit code 3).
    #[error("initialization failed on all {0} segments")]
    AllFailed(usize),
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl BenchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Dataset(_) | Self::Output { .. } => 2,
            Self::AllFailed(_) => 3,
        }
    }
}

impl From<vi_init::Error> for BenchError {
    fn from(e: vi_init::Error) -> Self {
        Self::Dataset(e.to_string())
    }
}

/// Where segments come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    /// Simulated segments; segment `i` uses seed `seed + i`.
    Synthetic { config: ScenarioConfig, segments: usize },
    /// An ASL recording with sidecar tracks.
    Dataset {
        root: PathBuf,
        tracks: Option<PathBuf>,
        translations: Translations,
        options: SegmentOptions,
        segments: Option<usize>,
    },
}

/// Where keyframe translations of a recorded dataset come from.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Translations {
    /// `translations.csv` in the dataset root if present, else ground truth.
    #[default]
    Auto,
    File(PathBuf),
    GroundTruth,
}

impl std::str::FromStr for Translations {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "auto" => Self::Auto,
            "groundtruth" | "gt" => Self::GroundTruth,
            path => Self::File(PathBuf::from(path)),
        })
    }
}

/// A segment paired with the ground truth used to score it.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub index: usize,
    pub segment: InitSegment,
    pub truth: GroundTruth,
}

impl Source {
    pub fn describe(&self) -> String {
        match self {
            Self::Synthetic { config, segments } => {
                format!("synthetic {} x{} (seed {}, kf {} @ {} Hz)", config.kind, segments, config.seed, config.kf_count, config.kf_rate)
            }
            Self::Dataset { root, options, .. } => {
                format!("{} (kf {} @ {} Hz)", root.display(), options.kf_count, options.kf_rate)
            }
        }
    }

    pub fn load(&self) -> Result<Vec<Case>, BenchError> {
        match self {
            Self::Synthetic { config, segments } => (0..*segments)
                .into_par_iter()
                .map(|i| {
                    let c = ScenarioConfig { seed: config.seed.wrapping_add(i as u64), ..config.clone() };
                    let (segment, truth) = generate(&c)?;
                    Ok(Case { index: i, segment, truth })
                })
                .collect(),
            Self::Dataset { root, tracks, translations, options, segments } => {
                load_dataset(root, tracks.as_deref(), translations, options, *segments)
            }
        }
    }
}

fn load_dataset(
    root: &Path,
    tracks: Option<&Path>,
    translations: &Translations,
    options: &SegmentOptions,
    limit: Option<usize>,
) -> Result<Vec<Case>, BenchError> {
    let dataset = load_asl(root)?;
    let tracks_path = tracks.map(Path::to_path_buf).unwrap_or_else(|| root.join("tracks.csv"));
    let tracks = TrackTable::read(&tracks_path)?;
    let table_path = match translations {
        Translations::File(p) => Some(p.clone()),
        Translations::Auto => Some(root.join("translations.csv")).filter(|p| p.exists()),
        Translations::GroundTruth => None,
    };
    let table = table_path.map(|p| TranslationTable::read(&p)).transpose()?;
    let from_truth = dataset.ground_truth.as_deref().map(|samples| GroundTruthTranslations { samples, scale: 1.0 });
    let provider: &dyn TranslationProvider = match (&table, &from_truth) {
        (Some(t), _) => t,
        (None, Some(g)) => {
            log::info!("using ground-truth camera positions as translations");
            g
        }
        (None, None) => return Err(BenchError::Dataset("no translations and no ground truth".into())),
    };
    let mut cases = Vec::new();
    for s in segment(&dataset, options, &tracks, Some(provider))? {
        match s.truth {
            Some(truth) => cases.push(Case { index: s.index, segment: s.segment, truth }),
            None => log::warn!("segment {}: no ground truth, skipped", s.index),
        }
        if limit.is_some_and(|n| cases.len() >= n) {
            break;
        }
    }
    if cases.is_empty() {
        return Err(BenchError::Dataset(format!("{} yields no segments with ground truth", root.display())));
    }
    Ok(cases)
}

/// The knobs exposed on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Variant {
    pub mode: BiasMode,
    pub refine: bool,
}

impl Variant {
    pub fn label(&self) -> String {
        format!("{}{}", self.mode, if self.refine { "+refine" } else { "" })
    }

    pub fn pipeline(&self, base: &PipelineConfig) -> PipelineConfig {
        PipelineConfig { mode: self.mode, refine: self.refine, ..base.clone() }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    /// `mode:on|off`, e.g. `pnec:on`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (mode, refine) = s.split_once(':').ok_or_else(|| format!("expected MODE:on|off, got '{s}'"))?;
        let mode = mode.parse::<BiasMode>().map_err(|e| e.to_string())?;
        let refine = parse_switch(refine)?;
        Ok(Self { mode, refine })
    }
}

pub fn parse_switch(s: &str) -> Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" => Ok(true),
        "off" | "false" | "no" => Ok(false),
        other => Err(format!("expected on or off, got '{other}'")),
    }
}

/// Base pipeline settings shared by all variants.
pub fn base_pipeline(translation: VarianceTranslation, weighting: RowWeighting) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.bias.variance_translation = translation;
    c.refinement.weighting = weighting;
    c
}

/// Scores every case in parallel; the output keeps the input order.
pub fn evaluate_all(cases: &[Case], config: &PipelineConfig) -> Vec<SegmentMetrics> {
    cases.par_iter().map(|c| evaluate(c.index, &c.segment, &c.truth, config)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub source: String,
    pub variant: Variant,
    pub segments: Vec<SegmentMetrics>,
    pub aggregate: AggregateReport,
    /// Mean stage times; only filled on request because they vary between runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
}

pub fn run(source: &Source, cases: &[Case], variant: Variant, base: &PipelineConfig, with_timings: bool) -> Result<RunReport, BenchError> {
    let segments = evaluate_all(cases, &variant.pipeline(base));
    let aggregate = aggregate(&segments);
    if !segments.is_empty() && aggregate.failures == segments.len() {
        return Err(BenchError::AllFailed(segments.len()));
    }
    let timings = with_timings.then_some(aggregate.timings);
    Ok(RunReport { source: source.describe(), variant, segments, aggregate, timings })
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    /// RMSE of the bias error, 1e-3 rad/s.
    pub bg: f64,
    /// RMSE of the rotation error, deg.
    pub rotation: f64,
    /// RMSE of the scale error.
    pub scale: f64,
    /// RMSE of the velocity error, m/s.
    pub velocity: f64,
    /// RMSE of the gravity-direction error, deg.
    pub gdir: f64,
    pub sum: f64,
    pub success_rate: f64,
}

impl AblationRow {
    pub fn from_report(label: String, r: &AggregateReport) -> Self {
        let bg = r.bias.rmse * 1e3;
        let rotation = r.rotation.rmse.to_degrees();
        let (scale, velocity, gdir) = (r.scale.rmse, r.velocity.rmse, r.gravity_dir_deg.rmse);
        Self { variant: label, bg, rotation, scale, velocity, gdir, sum: bg + rotation + scale + velocity + gdir, success_rate: r.success_rate }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub source: String,
    pub rows: Vec<AblationRow>,
}

/// Runs every variant on the same cases.
pub fn run_ablation(source: &Source, cases: &[Case], variants: &[Variant], base: &PipelineConfig) -> AblationReport {
    let rows = variants
        .iter()
        .map(|v| AblationRow::from_report(v.label(), &aggregate(&evaluate_all(cases, &v.pipeline(base)))))
        .collect();
    AblationReport { source: source.describe(), rows }
}

pub fn run_table(r: &RunReport) -> String {
    let a = &r.aggregate;
    let mut s = String::new();
    let _ = writeln!(s, "{}  [{}]", r.source, r.variant.label());
    let _ = writeln!(s, "segments {}  success {}/{} ({:.1}%)  failed {}", a.segments, a.successes, a.segments, 100.0 * a.success_rate, a.failures);
    let _ = writeln!(s, "{:<22}{:>12}{:>12}{:>12}", "metric", "rmse", "mean", "median");
    let rows = [
        ("bias [1e-3 rad/s]", a.bias, 1e3),
        ("rotation [deg]", a.rotation, 180.0 / std::f64::consts::PI),
        ("velocity [m/s]", a.velocity, 1.0),
        ("gravity dir [deg]", a.gravity_dir_deg, 1.0),
        ("  before refine [deg]", a.gravity_dir_pre_deg, 1.0),
        ("scale", a.scale, 1.0),
    ];
    for (name, m, k) in rows {
        let _ = writeln!(s, "{name:<22}{:>12.5}{:>12.5}{:>12.5}", m.rmse * k, m.mean * k, m.median * k);
    }
    let _ = writeln!(s, "{:<22}{:>12.5}", "scale IQR", a.scale_iqr);
    let t = &a.timings;
    let _ = writeln!(
        s,
        "time/segment [ms]: bias {:.3}  preint {:.3}  vgs {:.3}  refine {:.3}  total {:.3}",
        t.bias_ms, t.preint_ms, t.vgs_ms, t.refine_ms, t.total_ms
    );
    s
}

pub fn ablation_table(r: &AblationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{}", r.source);
    let _ = writeln!(s, "{:<14}{:>9}{:>10}{:>9}{:>10}{:>9}{:>9}{:>9}", "variant", "Bg", "Rotation", "Scale", "Velocity", "G.Dir", "SUM", "success");
    for row in &r.rows {
        let _ = writeln!(
            s,
            "{:<14}{:>9.3}{:>10.3}{:>9.3}{:>10.3}{:>9.3}{:>9.3}{:>8.1}%",
            row.variant, row.bg, row.rotation, row.scale, row.velocity, row.gdir, row.sum, 100.0 * row.success_rate
        );
    }
    s
}

pub fn run_csv(r: &RunReport) -> String {
    let mut s = String::from("index,success,bias,rotation_rmse,velocity_rmse,gravity_dir_deg,gravity_dir_pre_deg,scale,failure\n");
    for m in &r.segments {
        let _ = write!(s, "{},{},", m.index, m.success);
        match &m.errors {
            Some(e) => {
                let _ = write!(s, "{:?},{:?},{:?},{:?},{:?},{:?},", e.bias, e.rotation_rmse, e.velocity_rmse, e.gravity_dir_deg, e.gravity_dir_pre_deg, e.scale);
            }
            None => s.push_str(",,,,,,"),
        }
        let failure = m.failure.as_deref().unwrap_or("").replace(['"', ','], " ");
        let _ = writeln!(s, "{failure}");
    }
    s
}

pub fn ablation_csv(r: &AblationReport) -> String {
    let mut s = String::from("variant,Bg,Rotation,Scale,Velocity,G.Dir,SUM,success_rate\n");
    for row in &r.rows {
        let _ = writeln!(
            s,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            row.variant, row.bg, row.rotation, row.scale, row.velocity, row.gdir, row.sum, row.success_rate
        );
    }
    s
}

/// Writes `json` or `csv` depending on the extension of `path`.
pub fn write_report<T: Serialize>(path: &Path, value: &T, csv: impl FnOnce() -> String) -> Result<(), BenchError> {
    let text = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => csv(),
        Some("json") => serde_json::to_string_pretty(value).expect("report serializes") + "\n",
        _ => return Err(BenchError::Dataset(format!("output {} must end in .json or .csv", path.display()))),
    };
    std::fs::write(path, text).map_err(|source| BenchError::Output { path: path.to_path_buf(), source })
}
