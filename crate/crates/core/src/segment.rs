//! A window of keyframes with the IMU stream between them and the feature
//! observations in each keyframe.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::gyro_bias::{BearingPair, Extrinsics, KeyframePairProblem};
use crate::preint::{preintegrate_span, ImuSample, Preintegration, NANOS_PER_SEC};
use crate::uncertainty::{bearing_uncertainty, CameraIntrinsics, Mat2, Vec2};

/// One tracked feature seen in a keyframe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub track_id: u64,
    pub pixel: Vec2,
    /// Pixel covariance, px².
    pub cov: Option<Mat2>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitSegment {
    pub keyframe_ns: Vec<i64>,
    /// `imu_spans[k]` holds the samples with `kf_k <= t < kf_{k+1}`.
    pub imu_spans: Vec<Vec<ImuSample>>,
    /// Observations of every keyframe, sorted by track id.
    pub observations: Vec<Vec<Observation>>,
    pub extrinsics: Extrinsics,
    pub intrinsics: CameraIntrinsics,
    /// Up-to-scale camera positions `p_{c0 c_i}`, when a provider supplied them.
    pub translations: Option<Vec<Vec3>>,
}

/// Which keyframe pairs enter the bias objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pairing {
    #[default]
    Consecutive,
    All,
}

impl std::str::FromStr for Pairing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "consecutive" => Ok(Self::Consecutive),
            "all" => Ok(Self::All),
            other => Err(Error::Config(format!("unknown pairing '{other}'"))),
        }
    }
}

/// Supplies up-to-scale keyframe camera positions in the first camera frame.
pub trait TranslationProvider {
    fn translations(&self, keyframe_ns: &[i64], extrinsics: &Extrinsics) -> Result<Vec<Vec3>>;
}

impl InitSegment {
    pub fn len(&self) -> usize {
        self.keyframe_ns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframe_ns.is_empty()
    }

    pub fn keyframe_seconds(&self, i: usize) -> f64 {
        self.keyframe_ns[i] as f64 / NANOS_PER_SEC
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n < 2 {
            return Err(Error::TooFewKeyframes { needed: 2, got: n });
        }
        if self.imu_spans.len() != n - 1 || self.observations.len() != n {
            return Err(Error::Config(format!(
                "segment with {n} keyframes has {} IMU spans and {} observation lists",
                self.imu_spans.len(),
                self.observations.len()
            )));
        }
        if let Some(t) = &self.translations {
            if t.len() != n {
                return Err(Error::Config(format!("{} translations for {n} keyframes", t.len())));
            }
        }
        for (k, span) in self.imu_spans.iter().enumerate() {
            let (a, b) = (self.keyframe_ns[k], self.keyframe_ns[k + 1]);
            if b <= a {
                return Err(Error::Config(format!("keyframe timestamps not increasing at {}", k + 1)));
            }
            if span.iter().any(|s| s.t_ns < a || s.t_ns >= b) {
                return Err(Error::Config(format!("IMU span {k} leaves its keyframe interval")));
            }
        }
        Ok(())
    }

    /// Pre-integration from keyframe `i` to keyframe `j > i`.
    pub fn preintegrate_pair(&self, i: usize, j: usize, gyro_bias: &Vec3) -> Result<Preintegration> {
        if j <= i || j >= self.len() {
            return Err(Error::Config(format!("invalid keyframe pair ({i}, {j})")));
        }
        let samples: Vec<ImuSample> = self.imu_spans[i..j].iter().flatten().copied().collect();
        preintegrate_span(&samples, self.keyframe_ns[i], self.keyframe_ns[j], gyro_bias)
    }

    /// Consecutive pre-integrations `(k, k+1)` for the whole segment.
    pub fn consecutive_preints(&self, gyro_bias: &Vec3) -> Result<Vec<Preintegration>> {
        (0..self.len() - 1).map(|k| self.preintegrate_pair(k, k + 1, gyro_bias)).collect()
    }

    /// Bearings of the tracks seen in both keyframes. With `uncertainty`, the
    /// second bearing gets its propagated covariance, using `default_cov` for
    /// observations without one.
    pub fn bearing_pairs(&self, i: usize, j: usize, uncertainty: bool, default_cov: Option<&Mat2>) -> Result<Vec<BearingPair>> {
        let k = &self.intrinsics;
        let first: HashMap<u64, &Observation> = self.observations[i].iter().map(|o| (o.track_id, o)).collect();
        let mut out = Vec::new();
        for oj in &self.observations[j] {
            let Some(oi) = first.get(&oj.track_id) else {
                continue;
            };
            let mut pair = BearingPair::new(k.unproject(&oi.pixel), k.unproject(&oj.pixel));
            if uncertainty {
                if let Some(cov) = oj.cov.as_ref().or(default_cov) {
                    pair.uncertainty = Some(bearing_uncertainty(&oj.pixel, cov, k)?);
                }
            }
            out.push(pair);
        }
        Ok(out)
    }

    pub fn pair_indices(&self, pairing: Pairing) -> Vec<(usize, usize)> {
        let n = self.len();
        match pairing {
            Pairing::Consecutive => (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect(),
            Pairing::All => (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect(),
        }
    }

    /// Bias-estimation problems for the selected keyframe pairs.
    pub fn pair_problems(
        &self,
        pairing: Pairing,
        gyro_bias: &Vec3,
        uncertainty: bool,
        default_cov: Option<&Mat2>,
    ) -> Result<Vec<KeyframePairProblem>> {
        self.pair_indices(pairing)
            .into_iter()
            .map(|(i, j)| {
                Ok(KeyframePairProblem {
                    bearings: self.bearing_pairs(i, j, uncertainty, default_cov)?,
                    preint: self.preintegrate_pair(i, j, gyro_bias)?,
                    extrinsics: self.extrinsics,
                })
            })
            .collect()
    }
}
