//! ASL-format recordings (EuRoC and TUM-VI layout) and the sidecar files that
//! supply feature tracks, keyframe translations and calibration.
//!
//! Layout under the dataset root:
//!
//! ```text
//! imu0/data.csv                       t_ns, ωx, ωy, ωz, ax, ay, az
//! cam0/data.csv                       t_ns, filename
//! state_groundtruth_estimate0/data.csv  t_ns, p(3), q wxyz(4) [, v(3), bw(3), ba(3)]   (optional)
//! calib.txt                           fx, fy, cx, cy, r_bc (9, row-major), p_bc (3) as key = value
//! cam0/sensor.yaml                    EuRoC calibration, used when calib.txt is absent
//! tracks.csv                          track_id, kf_index, u, v [, c_uu, c_uv, c_vv]
//! translations.csv                    t_ns, x, y, z
//! ```
//!
//! Lines starting with `#` are comments. Pixels in `tracks.csv` are
//! undistorted; `kf_index` counts keyframes on the global keyframe grid, so
//! keyframe `i` of segment `m` has index `m * kf_count + i`. Translations are
//! camera positions in the first camera frame of the segment the keyframe
//! belongs to, up to a common scale.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geom::{exp_so3, log_so3, Mat3, Rotation, Vec3};
use crate::gyro_bias::Extrinsics;
use crate::preint::{ImuSample, NANOS_PER_SEC};
use crate::segment::{InitSegment, Observation, TranslationProvider};
use crate::synth::{parse_f64, parse_list, GroundTruth, TimedState};
use crate::uncertainty::{CameraIntrinsics, Mat2, Vec2};

/// One ground-truth record; the body frame is the IMU frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthSample {
    pub t_ns: i64,
    pub position: Vec3,
    /// `R_wb`.
    pub rotation: Rotation,
    pub velocity: Vec3,
    pub gyro_bias: Vec3,
    pub accel_bias: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub extrinsics: Extrinsics,
    pub intrinsics: CameraIntrinsics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AslDataset {
    pub root: PathBuf,
    pub imu: Vec<ImuSample>,
    pub camera_ns: Vec<i64>,
    pub ground_truth: Option<Vec<GroundTruthSample>>,
    pub calibration: Option<Calibration>,
}

struct Row {
    line: usize,
    t_ns: i64,
    values: Vec<f64>,
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Rows of `t_ns, x1, x2, ...` with at least `min_values` numbers after the
/// timestamp. Non-numeric trailing fields (file names) are not allowed here.
fn numeric_rows(path: &Path, text: &str, min_values: usize) -> Result<Vec<Row>> {
    let mut rows: Vec<Row> = Vec::new();
    for (line, raw) in data_lines(text) {
        let mut fields = raw.split(',').map(str::trim);
        let t_ns = parse_timestamp(path, line, fields.next().unwrap_or(""))?;
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|_| Error::parse(path, line, format!("bad number '{f}'"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() < min_values {
            return Err(Error::parse(path, line, format!("expected at least {} columns, got {}", min_values + 1, values.len() + 1)));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, line, "non-finite value"));
        }
        check_increasing(path, rows.last().map(|r| (r.line, r.t_ns)), line, t_ns)?;
        rows.push(Row { line, t_ns, values });
    }
    Ok(rows)
}

fn parse_timestamp(path: &Path, line: usize, field: &str) -> Result<i64> {
    field
        .trim()
        .parse::<i64>()
        .map_err(|_| Error::parse(path, line, format!("bad timestamp '{field}'")))
}

fn check_increasing(path: &Path, prev: Option<(usize, i64)>, line: usize, t_ns: i64) -> Result<()> {
    match prev {
        Some((prev_line, prev_t)) if t_ns <= prev_t => Err(Error::parse(
            path,
            line,
            format!("timestamp {t_ns} does not increase over {prev_t} on line {prev_line}"),
        )),
        _ => Ok(()),
    }
}

pub fn read_imu_csv(path: &Path) -> Result<Vec<ImuSample>> {
    let text = read_text(path)?;
    Ok(numeric_rows(path, &text, 6)?
        .into_iter()
        .map(|r| {
            let v = &r.values;
            ImuSample::new(r.t_ns, Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]))
        })
        .collect())
}

/// Camera timestamps; the file name column is ignored.
pub fn read_camera_csv(path: &Path) -> Result<Vec<i64>> {
    let text = read_text(path)?;
    let mut out: Vec<(usize, i64)> = Vec::new();
    for (line, raw) in data_lines(&text) {
        let t = parse_timestamp(path, line, raw.split(',').next().unwrap_or(""))?;
        check_increasing(path, out.last().copied(), line, t)?;
        out.push((line, t));
    }
    Ok(out.into_iter().map(|(_, t)| t).collect())
}

/// Ground truth with at least position and quaternion. Missing velocity is
/// filled by central differences, missing biases by zeros.
pub fn read_ground_truth_csv(path: &Path) -> Result<Vec<GroundTruthSample>> {
    let text = read_text(path)?;
    let rows = numeric_rows(path, &text, 7)?;
    let mut out: Vec<GroundTruthSample> = rows
        .iter()
        .map(|r| {
            let v = &r.values;
            let at = |i: usize| if v.len() >= i + 3 { Vec3::new(v[i], v[i + 1], v[i + 2]) } else { Vec3::zeros() };
            GroundTruthSample {
                t_ns: r.t_ns,
                position: Vec3::new(v[0], v[1], v[2]),
                rotation: Rotation::from_quaternion(v[3], v[4], v[5], v[6]),
                velocity: at(7),
                gyro_bias: at(10),
                accel_bias: at(13),
            }
        })
        .collect();
    if rows.first().is_some_and(|r| r.values.len() < 10) && out.len() > 1 {
        let n = out.len();
        for k in 0..n {
            let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
            let dt = (out[b].t_ns - out[a].t_ns) as f64 / NANOS_PER_SEC;
            out[k].velocity = (out[b].position - out[a].position) / dt;
        }
    }
    Ok(out)
}

/// `calib.txt`: `key = value` lines with fx, fy, cx, cy, r_bc and p_bc.
pub fn read_calibration(path: &Path) -> Result<Calibration> {
    let text = read_text(path)?;
    let (mut fx, mut fy, mut cx, mut cy) = (None, None, None, None);
    let (mut r_bc, mut p_bc) = (None, None);
    for (line, raw) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::parse(path, line, "expected 'key = value'"))?;
        let (key, value) = (key.trim(), value.trim());
        let wrap = |e: Error| Error::parse(path, line, e.to_string());
        match key {
            "fx" => fx = Some(parse_f64(key, value).map_err(wrap)?),
            "fy" => fy = Some(parse_f64(key, value).map_err(wrap)?),
            "cx" => cx = Some(parse_f64(key, value).map_err(wrap)?),
            "cy" => cy = Some(parse_f64(key, value).map_err(wrap)?),
            "r_bc" => r_bc = Some(Rotation::from_matrix(&Mat3::from_row_slice(&parse_list(key, value, 9).map_err(wrap)?))),
            "p_bc" => {
                let v = parse_list(key, value, 3).map_err(wrap)?;
                p_bc = Some(Vec3::new(v[0], v[1], v[2]));
            }
            other => return Err(Error::parse(path, line, format!("unknown key '{other}'"))),
        }
    }
    let missing = |k: &str| Error::parse(path, 0, format!("missing key '{k}'"));
    let intrinsics = CameraIntrinsics::new(
        fx.ok_or_else(|| missing("fx"))?,
        fy.ok_or_else(|| missing("fy"))?,
        cx.ok_or_else(|| missing("cx"))?,
        cy.ok_or_else(|| missing("cy"))?,
    )?;
    let extrinsics = Extrinsics { r_bc: r_bc.ok_or_else(|| missing("r_bc"))?, p_bc: p_bc.ok_or_else(|| missing("p_bc"))? };
    Ok(Calibration { extrinsics, intrinsics })
}

#[derive(Deserialize)]
struct YamlMatrix {
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct SensorYaml {
    #[serde(rename = "T_BS")]
    t_bs: YamlMatrix,
    intrinsics: Vec<f64>,
}

/// EuRoC `cam0/sensor.yaml`: `T_BS` is the camera pose in the body frame and
/// `intrinsics` holds `[fu, fv, cu, cv]`.
pub fn read_sensor_yaml(path: &Path) -> Result<Calibration> {
    let text = read_text(path)?;
    let body: String = text.lines().filter(|l| !l.starts_with('%')).collect::<Vec<_>>().join("\n");
    let y: SensorYaml = serde_yaml::from_str(&body).map_err(|e| Error::parse(path, e.location().map_or(0, |l| l.line()), e.to_string()))?;
    if y.t_bs.data.len() != 16 || y.intrinsics.len() < 4 {
        return Err(Error::parse(path, 0, "T_BS needs 16 entries and intrinsics 4"));
    }
    let d = &y.t_bs.data;
    let r = Mat3::new(d[0], d[1], d[2], d[4], d[5], d[6], d[8], d[9], d[10]);
    let k = &y.intrinsics;
    Ok(Calibration {
        extrinsics: Extrinsics { r_bc: Rotation::from_matrix(&r), p_bc: Vec3::new(d[3], d[7], d[11]) },
        intrinsics: CameraIntrinsics::new(k[0], k[1], k[2], k[3])?,
    })
}

/// Reads the IMU and camera streams, the optional ground truth and the
/// calibration (`calib.txt`, else `cam0/sensor.yaml`, else none).
pub fn load_asl(root: &Path) -> Result<AslDataset> {
    let imu = read_imu_csv(&root.join("imu0/data.csv"))?;
    let camera_ns = read_camera_csv(&root.join("cam0/data.csv"))?;
    let gt_path = root.join("state_groundtruth_estimate0/data.csv");
    let ground_truth = if gt_path.exists() { Some(read_ground_truth_csv(&gt_path)?) } else { None };
    let calib = root.join("calib.txt");
    let yaml = root.join("cam0/sensor.yaml");
    let calibration = if calib.exists() {
        Some(read_calibration(&calib)?)
    } else if yaml.exists() {
        Some(read_sensor_yaml(&yaml)?)
    } else {
        None
    };
    Ok(AslDataset { root: root.to_path_buf(), imu, camera_ns, ground_truth, calibration })
}

/// Observations grouped by global keyframe index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackTable {
    by_keyframe: BTreeMap<usize, Vec<Observation>>,
}

impl TrackTable {
    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut table = Self::default();
        for (line, raw) in data_lines(&text) {
            let f: Vec<&str> = raw.split(',').map(str::trim).collect();
            if f.len() != 4 && f.len() != 7 {
                return Err(Error::parse(path, line, format!("expected 4 or 7 columns, got {}", f.len())));
            }
            let track_id: u64 = f[0].parse().map_err(|_| Error::parse(path, line, format!("bad track id '{}'", f[0])))?;
            let kf: usize = f[1].parse().map_err(|_| Error::parse(path, line, format!("bad keyframe index '{}'", f[1])))?;
            let nums = f[2..]
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| Error::parse(path, line, format!("bad number '{s}'"))))
                .collect::<Result<Vec<f64>>>()?;
            let cov = (nums.len() == 5).then(|| Mat2::new(nums[2], nums[3], nums[3], nums[4]));
            if let Some(c) = cov {
                if c[(0, 0)] < 0.0 || c[(1, 1)] < 0.0 || c.determinant() < 0.0 {
                    return Err(Error::parse(path, line, "covariance is not positive semidefinite"));
                }
            }
            table.push(kf, Observation { track_id, pixel: Vec2::new(nums[0], nums[1]), cov });
        }
        for obs in table.by_keyframe.values_mut() {
            obs.sort_by_key(|o| o.track_id);
        }
        Ok(table)
    }

    pub fn push(&mut self, kf_index: usize, obs: Observation) {
        self.by_keyframe.entry(kf_index).or_default().push(obs);
    }

    /// Observations of one keyframe sorted by track id.
    pub fn observations(&self, kf_index: usize) -> Vec<Observation> {
        let mut v = self.by_keyframe.get(&kf_index).cloned().unwrap_or_default();
        v.sort_by_key(|o| o.track_id);
        v
    }

    pub fn is_empty(&self) -> bool {
        self.by_keyframe.is_empty()
    }
}

/// Keyframe translations read from `translations.csv`, looked up by exact
/// timestamp.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TranslationTable {
    by_ns: HashMap<i64, Vec3>,
}

impl TranslationTable {
    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let by_ns = numeric_rows(path, &text, 3)?
            .into_iter()
            .map(|r| (r.t_ns, Vec3::new(r.values[0], r.values[1], r.values[2])))
            .collect();
        Ok(Self { by_ns })
    }
}

impl TranslationProvider for TranslationTable {
    fn translations(&self, keyframe_ns: &[i64], _extrinsics: &Extrinsics) -> Result<Vec<Vec3>> {
        keyframe_ns
            .iter()
            .map(|t| self.by_ns.get(t).copied().ok_or_else(|| Error::Config(format!("no translation for keyframe at {t} ns"))))
            .collect()
    }
}

/// Ground-truth body state at `t_ns`: the sample itself when one falls on
/// `t_ns`, otherwise linear in position, velocity and biases and geodesic in
/// rotation. `None` outside the recorded interval.
pub fn interpolate_ground_truth(samples: &[GroundTruthSample], t_ns: i64) -> Option<GroundTruthSample> {
    let k = samples.partition_point(|s| s.t_ns < t_ns);
    let b = samples.get(k)?;
    if b.t_ns == t_ns {
        return Some(*b);
    }
    let a = samples.get(k.checked_sub(1)?)?;
    let u = (t_ns - a.t_ns) as f64 / (b.t_ns - a.t_ns) as f64;
    let lerp = |x: &Vec3, y: &Vec3| x + (y - x) * u;
    Some(GroundTruthSample {
        t_ns,
        position: lerp(&a.position, &b.position),
        rotation: a.rotation * exp_so3(&(log_so3(&(a.rotation.transpose() * b.rotation)) * u)),
        velocity: lerp(&a.velocity, &b.velocity),
        gyro_bias: lerp(&a.gyro_bias, &b.gyro_bias),
        accel_bias: lerp(&a.accel_bias, &b.accel_bias),
    })
}

/// Camera positions from ground truth, expressed in the first keyframe's
/// camera frame and divided by `scale`.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruthTranslations<'a> {
    pub samples: &'a [GroundTruthSample],
    pub scale: f64,
}

impl TranslationProvider for GroundTruthTranslations<'_> {
    fn translations(&self, keyframe_ns: &[i64], extrinsics: &Extrinsics) -> Result<Vec<Vec3>> {
        let states = keyframe_ns
            .iter()
            .map(|&t| interpolate_ground_truth(self.samples, t).ok_or_else(|| Error::Config(format!("no ground truth at {t} ns"))))
            .collect::<Result<Vec<_>>>()?;
        let cam = |s: &GroundTruthSample| (s.rotation * extrinsics.r_bc, s.position + s.rotation * extrinsics.p_bc);
        let (r0, p0) = cam(&states[0]);
        Ok(states.iter().map(|s| r0.transpose() * (cam(s).1 - p0) / self.scale).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentOptions {
    pub kf_rate: f64,
    pub kf_count: usize,
    /// Largest allowed IMU gap as a multiple of the nominal sample period.
    pub max_gap_factor: f64,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        Self { kf_rate: 4.0, kf_count: 10, max_gap_factor: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSegment {
    /// Position among all segments of the recording, dropped ones included.
    pub index: usize,
    pub segment: InitSegment,
    /// Present when the recording has ground truth covering the segment.
    pub truth: Option<GroundTruth>,
}

/// Median spacing of the IMU timestamps, ns.
fn nominal_period(imu: &[ImuSample]) -> Option<i64> {
    let mut d: Vec<i64> = imu.windows(2).map(|w| w[1].t_ns - w[0].t_ns).collect();
    if d.is_empty() {
        return None;
    }
    d.sort_unstable();
    Some(d[d.len() / 2])
}

/// Camera frame nearest to `t`, ties to the earlier frame.
fn nearest(frames: &[i64], t: i64) -> i64 {
    let k = frames.partition_point(|&f| f < t);
    match (k.checked_sub(1).map(|i| frames[i]), frames.get(k)) {
        (Some(a), Some(&b)) => if t - a <= b - t { a } else { b },
        (Some(a), None) => a,
        (None, Some(&b)) => b,
        (None, None) => t,
    }
}

fn segment_truth(samples: &[GroundTruthSample], keyframe_ns: &[i64], camera_ns: &[i64]) -> Option<GroundTruth> {
    let (first, last) = (keyframe_ns[0], *keyframe_ns.last()?);
    let states = keyframe_ns.iter().map(|&t| interpolate_ground_truth(samples, t)).collect::<Option<Vec<_>>>()?;
    let to_state = |s: &GroundTruthSample| TimedState { t_ns: s.t_ns, position: s.position, rotation: s.rotation, velocity: s.velocity };
    let inside: Vec<&GroundTruthSample> = samples.iter().filter(|s| s.t_ns >= first && s.t_ns <= last).collect();
    // offsets from the first value keep a constant bias exact
    let mean = |f: fn(&GroundTruthSample) -> Vec3| {
        let b0 = f(&states[0]);
        b0 + states.iter().map(|s| f(s) - b0).sum::<Vec3>() / states.len() as f64
    };
    Some(GroundTruth {
        keyframes: states.iter().map(to_state).collect(),
        gravity_world: Vec3::new(0.0, 0.0, crate::refine::DEFAULT_GRAVITY),
        scale_factor: 1.0,
        gyro_bias: mean(|s| s.gyro_bias),
        accel_bias: mean(|s| s.accel_bias),
        trajectory: inside.into_iter().map(to_state).collect(),
        frame_ns: camera_ns.iter().copied().filter(|&t| t >= first && t <= last).collect(),
    })
}

/// Splits a recording into consecutive non-overlapping segments of
/// `kf_count` keyframes. Keyframes are the camera frames nearest to a
/// `kf_rate` grid starting at the first frame. Segments with an IMU gap above
/// `max_gap_factor` times the nominal period are dropped with a warning.
pub fn segment(
    dataset: &AslDataset,
    opts: &SegmentOptions,
    tracks: &TrackTable,
    translations: Option<&dyn TranslationProvider>,
) -> Result<Vec<DatasetSegment>> {
    if !(opts.kf_rate > 0.0) || opts.kf_count < 2 {
        return Err(Error::Config(format!("invalid keyframe grid: {} Hz, {} keyframes", opts.kf_rate, opts.kf_count)));
    }
    let calib = dataset
        .calibration
        .ok_or_else(|| Error::MissingFile(dataset.root.join("calib.txt")))?;
    let (Some(&t0), Some(&t_end)) = (dataset.camera_ns.first(), dataset.camera_ns.last()) else {
        return Ok(Vec::new());
    };
    let Some(nominal) = nominal_period(&dataset.imu) else {
        return Ok(Vec::new());
    };
    let max_gap = (opts.max_gap_factor * nominal as f64).round() as i64;
    let period = (NANOS_PER_SEC / opts.kf_rate).round() as i64;
    let grid: Vec<i64> = (0..).map(|k| t0 + k * period).take_while(|&t| t <= t_end).collect();

    let mut out = Vec::new();
    for (m, chunk) in grid.chunks_exact(opts.kf_count).enumerate() {
        let keyframe_ns: Vec<i64> = chunk.iter().map(|&t| nearest(&dataset.camera_ns, t)).collect();
        if keyframe_ns.windows(2).any(|w| w[1] <= w[0]) {
            log::warn!("segment {m}: camera frames too sparse for the keyframe grid, dropped");
            continue;
        }
        match imu_spans(&dataset.imu, &keyframe_ns, max_gap) {
            Ok(imu_spans) => {
                let base = m * opts.kf_count;
                let mut segment = InitSegment {
                    observations: (0..opts.kf_count).map(|i| tracks.observations(base + i)).collect(),
                    keyframe_ns,
                    imu_spans,
                    extrinsics: calib.extrinsics,
                    intrinsics: calib.intrinsics,
                    translations: None,
                };
                if let Some(p) = translations {
                    segment.translations = Some(p.translations(&segment.keyframe_ns, &segment.extrinsics)?);
                }
                let truth = dataset
                    .ground_truth
                    .as_deref()
                    .and_then(|gt| segment_truth(gt, &segment.keyframe_ns, &dataset.camera_ns));
                out.push(DatasetSegment { index: m, segment, truth });
            }
            Err(msg) => log::warn!("segment {m}: {msg}, dropped"),
        }
    }
    Ok(out)
}

/// IMU samples of each keyframe interval `[kf_k, kf_{k+1})`, or a message
/// describing the first gap that is too long.
fn imu_spans(imu: &[ImuSample], keyframe_ns: &[i64], max_gap: i64) -> std::result::Result<Vec<Vec<ImuSample>>, String> {
    let (first, last) = (keyframe_ns[0], keyframe_ns[keyframe_ns.len() - 1]);
    let lo = imu.partition_point(|s| s.t_ns < first);
    let hi = imu.partition_point(|s| s.t_ns < last);
    let stamps: Vec<i64> = std::iter::once(first).chain(imu[lo..hi].iter().map(|s| s.t_ns)).chain(std::iter::once(last)).collect();
    if let Some(g) = stamps.windows(2).find(|g| g[1] - g[0] > max_gap) {
        return Err(format!("IMU gap of {} ns between {} and {}", g[1] - g[0], g[0], g[1]));
    }
    Ok(keyframe_ns
        .windows(2)
        .map(|w| {
            let a = imu.partition_point(|s| s.t_ns < w[0]);
            let b = imu.partition_point(|s| s.t_ns < w[1]);
            imu[a..b].to_vec()
        })
        .collect())
}
