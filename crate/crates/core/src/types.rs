//! Shared domain types: pipeline/sensor identifiers, timestamps, raw and
//! denoised frames, and the deterministic RNG used everywhere.
//!
//! All types here are immutable value types and safe to share across
//! threads. Frame lengths are a pure function of the pipeline, so a
//! mismatched frame cannot be constructed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Antennas of the CSI receiver array.
pub const CSI_ANTENNAS: usize = 4;
/// Complex time samples carried by one CSI frame, per antenna.
pub const CSI_SAMPLES_PER_FRAME: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("pipeline index {0} outside 1..=4")]
    InvalidPipelineIndex(u32),
    #[error("sensor index {k} invalid for pipeline {pipeline:?} (1..={max})")]
    InvalidSensorIndex {
        pipeline: PipelineId,
        k: u32,
        max: u32,
    },
    #[error("frame for {pipeline:?} must have {expected} values, got {got}")]
    FrameLength {
        pipeline: PipelineId,
        expected: usize,
        got: usize,
    },
    #[error("frame contains a non-finite value at position {0}")]
    NonFinite(usize),
    #[error("timestamps decrease within one sensor stream ({prev} ms then {next} ms)")]
    TimestampOrder { prev: u64, next: u64 },
    #[error("frames in one stream must share a sensor")]
    MixedSensors,
}

/// One of the four fixed data-processing pipelines.
///
/// The mapping index -> sensor kind is total and never changes:
/// 1 = FMCW radar network, 2 = sub-THz camera, 3 = IR thermopile arrays,
/// 4 = multi-antenna CSI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PipelineId {
    FmcwRadar,
    ThzCamera,
    IrArray,
    Csi,
}

impl PipelineId {
    pub const ALL: [PipelineId; 4] = [
        PipelineId::FmcwRadar,
        PipelineId::ThzCamera,
        PipelineId::IrArray,
        PipelineId::Csi,
    ];

    /// 1-based pipeline index used on the wire and in topic paths.
    pub fn index(self) -> u32 {
        match self {
            PipelineId::FmcwRadar => 1,
            PipelineId::ThzCamera => 2,
            PipelineId::IrArray => 3,
            PipelineId::Csi => 4,
        }
    }

    pub fn from_index(index: u32) -> Result<Self, CoreError> {
        match index {
            1 => Ok(PipelineId::FmcwRadar),
            2 => Ok(PipelineId::ThzCamera),
            3 => Ok(PipelineId::IrArray),
            4 => Ok(PipelineId::Csi),
            other => Err(CoreError::InvalidPipelineIndex(other)),
        }
    }

    /// Fixed length of a raw frame for this pipeline.
    ///
    /// Radar frames are 512 FFT bins, the THz camera delivers 32x32 = 1024
    /// normalized intensities, an IR array is 8x8 = 64 temperatures, and a
    /// CSI frame carries 4 antennas x 64 time samples as interleaved
    /// re/im pairs (antenna-major).
    pub fn frame_len(self) -> usize {
        match self {
            PipelineId::FmcwRadar => 512,
            PipelineId::ThzCamera => 1024,
            PipelineId::IrArray => 64,
            PipelineId::Csi => 2 * CSI_ANTENNAS * CSI_SAMPLES_PER_FRAME,
        }
    }

    /// Length of a denoised frame.
    ///
    /// Pipelines 1..3 preserve the raw length. Pipeline 4 beamforms the
    /// antennas into a single complex series, so its denoised frame is one
    /// interleaved complex series of [`CSI_SAMPLES_PER_FRAME`] samples.
    pub fn denoised_len(self) -> usize {
        match self {
            PipelineId::Csi => 2 * CSI_SAMPLES_PER_FRAME,
            other => other.frame_len(),
        }
    }

    /// Default sensor population per pipeline: 6 radars, 1024 THz
    /// detectors, 3 IR arrays, 4 CSI antennas.
    pub fn default_sensor_count(self) -> u32 {
        match self {
            PipelineId::FmcwRadar => 6,
            PipelineId::ThzCamera => 1024,
            PipelineId::IrArray => 3,
            PipelineId::Csi => 4,
        }
    }
}

impl Serialize for PipelineId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u32(self.index())
    }
}

impl<'de> Deserialize<'de> for PipelineId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let index = u32::deserialize(deserializer)?;
        PipelineId::from_index(index).map_err(D::Error::custom)
    }
}

/// A sensor within a pipeline; `k` is 1-based as in telemetry paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SensorId {
    pub pipeline: PipelineId,
    pub k: u32,
}

impl SensorId {
    pub fn new(pipeline: PipelineId, k: u32) -> Result<Self, CoreError> {
        let max = pipeline.default_sensor_count();
        if k == 0 || k > max {
            return Err(CoreError::InvalidSensorIndex { pipeline, k, max });
        }
        Ok(SensorId { pipeline, k })
    }
}

/// Milliseconds since scenario start. Wall-clock time never appears here;
/// it lives only in transport envelopes.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn millis(self) -> u64 {
        self.0
    }

    pub fn seconds(self) -> f64 {
        self.0 as f64 / 1000.0
    }
}

impl From<u64> for Timestamp {
    fn from(ms: u64) -> Self {
        Timestamp(ms)
    }
}

fn check_finite(values: &[f64]) -> Result<(), CoreError> {
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(CoreError::NonFinite(i));
        }
    }
    Ok(())
}

/// One timestamped raw sensor vector.
///
/// For pipeline 4 the values are interleaved complex pairs, antenna-major:
/// `values[2 * (k * CSI_SAMPLES_PER_FRAME + t)]` is the real part of
/// antenna `k` at within-frame sample `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFrame {
    pub sensor: SensorId,
    #[serde(rename = "t_ms")]
    pub at: Timestamp,
    pub values: Vec<f64>,
}

impl RawFrame {
    pub fn new(sensor: SensorId, at: Timestamp, values: Vec<f64>) -> Result<Self, CoreError> {
        let expected = sensor.pipeline.frame_len();
        if values.len() != expected {
            return Err(CoreError::FrameLength {
                pipeline: sensor.pipeline,
                expected,
                got: values.len(),
            });
        }
        check_finite(&values)?;
        Ok(RawFrame { sensor, at, values })
    }
}

/// A pre-processed frame, produced by the pipeline's denoising operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoisedFrame {
    pub sensor: SensorId,
    #[serde(rename = "t_ms")]
    pub at: Timestamp,
    pub values: Vec<f64>,
}

impl DenoisedFrame {
    pub fn new(sensor: SensorId, at: Timestamp, values: Vec<f64>) -> Result<Self, CoreError> {
        let expected = sensor.pipeline.denoised_len();
        if values.len() != expected {
            return Err(CoreError::FrameLength {
                pipeline: sensor.pipeline,
                expected,
                got: values.len(),
            });
        }
        check_finite(&values)?;
        Ok(DenoisedFrame { sensor, at, values })
    }
}

/// Checks the stream invariants shared by every per-sensor frame sequence:
/// one sensor, timestamps non-decreasing.
pub fn validate_stream<'a, I>(frames: I) -> Result<(), CoreError>
where
    I: IntoIterator<Item = (&'a SensorId, &'a Timestamp)>,
{
    let mut prev: Option<(SensorId, Timestamp)> = None;
    for (sensor, at) in frames {
        if let Some((prev_sensor, prev_at)) = prev {
            if prev_sensor != *sensor {
                return Err(CoreError::MixedSensors);
            }
            if at.millis() < prev_at.millis() {
                return Err(CoreError::TimestampOrder {
                    prev: prev_at.millis(),
                    next: at.millis(),
                });
            }
        }
        prev = Some((*sensor, *at));
    }
    Ok(())
}

/// Deterministic random stream. Pinned to ChaCha8 (a published
/// counter-based generator) so identical seeds yield identical draws on
/// every platform and release.
pub fn make_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives a sub-stream seed from a base seed and a tag path, so that
/// generators stay pure functions of (scenario seed, sensor, time).
/// SplitMix64 finalizer chained over the parts.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    for &part in parts {
        state = state.wrapping_add(part).wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        state = z ^ (z >> 31);
    }
    state
}
