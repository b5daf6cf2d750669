//! Pipeline-specific pre-processing: background estimation from empty-cell
//! recordings and per-frame denoising.
//!
//! Each pipeline has its own operator and parameter set:
//! - radar: whitened background subtraction `C^{-1/2} (X - mean)` where the
//!   covariance absorbs benign environmental change (robot motion);
//! - sub-THz camera: per-detector standardization `(X - b) / sigma`;
//! - IR arrays: plain subtraction of the empty-scene thermal frame
//!   (negative residuals are kept — cold spots are information);
//! - CSI: beamform the antennas and subtract the estimated LOS component,
//!   leaving the target-reflected signal.
//!
//! All estimators are population estimators (divide by N), so independent
//! test oracles agree exactly.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{
    DenoisedFrame, PipelineId, RawFrame, SensorId, CSI_ANTENNAS, CSI_SAMPLES_PER_FRAME,
};

/// Dead THz detectors get their deviation floored here so they contribute
/// zeros instead of blow-ups.
pub const THZ_SIGMA_FLOOR: f64 = 1e-9;

/// Default count of consecutive radar frames averaged before denoising
/// (non-overlapping).
pub const RADAR_AVERAGING_WINDOW: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrepError {
    #[error("need at least 2 empty frames to estimate a background, got {0}")]
    EmptyInput(usize),
    #[error("frames come from different sensors")]
    MixedSensors,
    #[error("expected a pipeline {expected:?} frame, got {got:?}")]
    WrongPipeline {
        expected: PipelineId,
        got: PipelineId,
    },
    #[error("dimension mismatch: background dim {background}, frame dim {frame}")]
    DimensionMismatch { background: usize, frame: usize },
    #[error("background parameters invalid: {0}")]
    InvalidBackground(String),
}

fn check_same_sensor(frames: &[RawFrame], pipeline: PipelineId) -> Result<SensorId, PrepError> {
    if frames.len() < 2 {
        return Err(PrepError::EmptyInput(frames.len()));
    }
    let sensor = frames[0].sensor;
    if sensor.pipeline != pipeline {
        return Err(PrepError::WrongPipeline {
            expected: pipeline,
            got: sensor.pipeline,
        });
    }
    if frames.iter().any(|f| f.sensor != sensor) {
        return Err(PrepError::MixedSensors);
    }
    Ok(sensor)
}

// ---------------------------------------------------------------------------
// Radar (pipeline 1)
// ---------------------------------------------------------------------------

/// Radar background: empty-cell mean spectrum plus the covariance of the
/// empty-cell fluctuations, with a precomputed symmetric inverse square
/// root used for whitening.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarBackground {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    eigen_floor: f64,
    inv_sqrt: DMatrix<f64>,
}

impl RadarBackground {
    /// Sample mean and population covariance (divide by N) of the given
    /// empty-cell vectors, plus `regularization * I`.
    pub fn estimate<S: AsRef<[f64]>>(
        frames: &[S],
        regularization: f64,
    ) -> Result<Self, PrepError> {
        if frames.len() < 2 {
            return Err(PrepError::EmptyInput(frames.len()));
        }
        let dim = frames[0].as_ref().len();
        if dim == 0 || frames.iter().any(|f| f.as_ref().len() != dim) {
            return Err(PrepError::DimensionMismatch {
                background: dim,
                frame: frames.iter().map(|f| f.as_ref().len()).max().unwrap_or(0),
            });
        }
        let n = frames.len() as f64;
        let mut mean = DVector::zeros(dim);
        for f in frames {
            for (i, v) in f.as_ref().iter().enumerate() {
                mean[i] += v;
            }
        }
        mean /= n;
        let mut covariance = DMatrix::zeros(dim, dim);
        let mut centered = DVector::zeros(dim);
        for f in frames {
            for (i, v) in f.as_ref().iter().enumerate() {
                centered[i] = v - mean[i];
            }
            covariance.syger(1.0 / n, &centered, &centered, 1.0);
        }
        // syger fills the lower triangle; mirror it.
        for r in 0..dim {
            for c in (r + 1)..dim {
                covariance[(r, c)] = covariance[(c, r)];
            }
        }
        for i in 0..dim {
            covariance[(i, i)] += regularization;
        }
        Self::from_parts(mean.as_slice().to_vec(), covariance)
    }

    /// Builds the whitening operator from an explicit mean and covariance.
    /// Eigenvalues are floored at `max(1e-9, 1e-9 * trace / dim)` so the
    /// inverse square root exists for any sample size.
    pub fn from_parts(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self, PrepError> {
        let dim = mean.len();
        if covariance.nrows() != dim || covariance.ncols() != dim || dim == 0 {
            return Err(PrepError::InvalidBackground(format!(
                "covariance is {}x{}, mean has {} entries",
                covariance.nrows(),
                covariance.ncols(),
                dim
            )));
        }
        let max_asym = (0..dim)
            .flat_map(|r| (0..dim).map(move |c| (r, c)))
            .map(|(r, c)| (covariance[(r, c)] - covariance[(c, r)]).abs())
            .fold(0.0, f64::max);
        if max_asym > 1e-9 {
            return Err(PrepError::InvalidBackground(format!(
                "covariance asymmetric by {max_asym:e}"
            )));
        }
        let trace: f64 = (0..dim).map(|i| covariance[(i, i)]).sum();
        let eigen_floor = (1e-9f64).max(1e-9 * trace / dim as f64);
        let eig = SymmetricEigen::new(covariance.clone());
        let mut scaled = eig.eigenvectors.clone();
        for (j, lambda) in eig.eigenvalues.iter().enumerate() {
            let floored = lambda.max(eigen_floor);
            let s = 1.0 / floored.sqrt();
            for r in 0..dim {
                scaled[(r, j)] *= s;
            }
        }
        let inv_sqrt = &scaled * eig.eigenvectors.transpose();
        Ok(RadarBackground {
            mean: DVector::from_vec(mean),
            covariance,
            eigen_floor,
            inv_sqrt,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn eigen_floor(&self) -> f64 {
        self.eigen_floor
    }

    /// `C^{-1/2} (x - mean)`.
    pub fn whiten(&self, x: &[f64]) -> Result<Vec<f64>, PrepError> {
        if x.len() != self.dim() {
            return Err(PrepError::DimensionMismatch {
                background: self.dim(),
                frame: x.len(),
            });
        }
        let centered = DVector::from_iterator(x.len(), x.iter().zip(self.mean.iter()).map(|(a, b)| a - b));
        Ok((&self.inv_sqrt * centered).as_slice().to_vec())
    }
}

/// Sample mean + covariance from empty-cell radar frames of one sensor.
pub fn estimate_radar_background(
    frames: &[RawFrame],
    regularization: f64,
) -> Result<RadarBackground, PrepError> {
    check_same_sensor(frames, PipelineId::FmcwRadar)?;
    let views: Vec<&[f64]> = frames.iter().map(|f| f.values.as_slice()).collect();
    RadarBackground::estimate(&views, regularization)
}

/// Whitened background subtraction for one radar frame.
pub fn radar_denoise(frame: &RawFrame, bg: &RadarBackground) -> Result<DenoisedFrame, PrepError> {
    if frame.sensor.pipeline != PipelineId::FmcwRadar {
        return Err(PrepError::WrongPipeline {
            expected: PipelineId::FmcwRadar,
            got: frame.sensor.pipeline,
        });
    }
    let values = bg.whiten(&frame.values)?;
    DenoisedFrame::new(frame.sensor, frame.at, values)
        .map_err(|e| PrepError::InvalidBackground(e.to_string()))
}

/// Averages consecutive raw frames in non-overlapping groups of `window`
/// (the radar pipeline's pre-denoise averaging stage). Each averaged frame
/// keeps the timestamp of the last frame in its group; a trailing partial
/// group is dropped.
pub fn average_frames(frames: &[RawFrame], window: usize) -> Result<Vec<RawFrame>, PrepError> {
    if window == 0 {
        return Err(PrepError::InvalidBackground("averaging window 0".into()));
    }
    let mut out = Vec::with_capacity(frames.len() / window);
    for chunk in frames.chunks_exact(window) {
        let sensor = chunk[0].sensor;
        if chunk.iter().any(|f| f.sensor != sensor) {
            return Err(PrepError::MixedSensors);
        }
        let len = chunk[0].values.len();
        let mut acc = vec![0.0; len];
        for f in chunk {
            for (a, v) in acc.iter_mut().zip(&f.values) {
                *a += v;
            }
        }
        for a in &mut acc {
            *a /= window as f64;
        }
        out.push(
            RawFrame::new(sensor, chunk[chunk.len() - 1].at, acc)
                .map_err(|e| PrepError::InvalidBackground(e.to_string()))?,
        );
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Sub-THz camera (pipeline 2)
// ---------------------------------------------------------------------------

/// Per-detector background radiation model: mean intensity `b` and
/// deviation `sigma`, both in normalized [0,1] intensity units.
#[derive(Debug, Clone, PartialEq)]
pub struct ThzBackground {
    b: Vec<f64>,
    sigma: Vec<f64>,
}

impl ThzBackground {
    pub fn new(b: Vec<f64>, sigma: Vec<f64>) -> Result<Self, PrepError> {
        if b.len() != sigma.len() || b.is_empty() {
            return Err(PrepError::InvalidBackground(
                "b and sigma lengths differ or are empty".into(),
            ));
        }
        if b.iter().any(|v| !(-1e-9..=1.0 + 1e-9).contains(v)) {
            return Err(PrepError::InvalidBackground(
                "b entries outside normalized [0,1] intensity".into(),
            ));
        }
        if sigma.iter().any(|v| *v < 0.0) {
            return Err(PrepError::InvalidBackground("negative sigma".into()));
        }
        Ok(ThzBackground { b, sigma })
    }

    /// Per-detector sample mean and population deviation.
    pub fn estimate<S: AsRef<[f64]>>(frames: &[S]) -> Result<Self, PrepError> {
        if frames.len() < 2 {
            return Err(PrepError::EmptyInput(frames.len()));
        }
        let dim = frames[0].as_ref().len();
        if frames.iter().any(|f| f.as_ref().len() != dim) {
            return Err(PrepError::DimensionMismatch {
                background: dim,
                frame: frames.iter().map(|f| f.as_ref().len()).max().unwrap_or(0),
            });
        }
        let n = frames.len() as f64;
        let mut b = vec![0.0; dim];
        for f in frames {
            for (acc, v) in b.iter_mut().zip(f.as_ref()) {
                *acc += v;
            }
        }
        for acc in &mut b {
            *acc /= n;
        }
        let mut sigma = vec![0.0; dim];
        for f in frames {
            for ((acc, v), mean) in sigma.iter_mut().zip(f.as_ref()).zip(&b) {
                let d = v - mean;
                *acc += d * d;
            }
        }
        for acc in &mut sigma {
            *acc = (*acc / n).sqrt();
        }
        ThzBackground::new(b, sigma)
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// `(x - b) / max(sigma, floor)` per detector.
    pub fn standardize(&self, x: &[f64]) -> Result<Vec<f64>, PrepError> {
        if x.len() != self.b.len() {
            return Err(PrepError::DimensionMismatch {
                background: self.b.len(),
                frame: x.len(),
            });
        }
        Ok(x.iter()
            .zip(&self.b)
            .zip(&self.sigma)
            .map(|((x, b), s)| (x - b) / s.max(THZ_SIGMA_FLOOR))
            .collect())
    }
}

pub fn estimate_thz_background(frames: &[RawFrame]) -> Result<ThzBackground, PrepError> {
    check_same_sensor(frames, PipelineId::ThzCamera)?;
    let views: Vec<&[f64]> = frames.iter().map(|f| f.values.as_slice()).collect();
    ThzBackground::estimate(&views)
}

pub fn thz_denoise(frame: &RawFrame, bg: &ThzBackground) -> Result<DenoisedFrame, PrepError> {
    if frame.sensor.pipeline != PipelineId::ThzCamera {
        return Err(PrepError::WrongPipeline {
            expected: PipelineId::ThzCamera,
            got: frame.sensor.pipeline,
        });
    }
    let values = bg.standardize(&frame.values)?;
    DenoisedFrame::new(frame.sensor, frame.at, values)
        .map_err(|e| PrepError::InvalidBackground(e.to_string()))
}

// ---------------------------------------------------------------------------
// IR arrays (pipeline 3)
// ---------------------------------------------------------------------------

/// Empty-scene thermal frame: stationary heat sources (robot, machinery)
/// that are not body-induced.
#[derive(Debug, Clone, PartialEq)]
pub struct IrBackground {
    frame: Vec<f64>,
}

impl IrBackground {
    pub fn new(frame: Vec<f64>) -> Result<Self, PrepError> {
        if frame.is_empty() || frame.iter().any(|v| !v.is_finite()) {
            return Err(PrepError::InvalidBackground(
                "empty or non-finite thermal background".into(),
            ));
        }
        Ok(IrBackground { frame })
    }

    /// Per-pixel mean over empty-scene frames.
    pub fn estimate<S: AsRef<[f64]>>(frames: &[S]) -> Result<Self, PrepError> {
        if frames.is_empty() {
            return Err(PrepError::EmptyInput(0));
        }
        let dim = frames[0].as_ref().len();
        if frames.iter().any(|f| f.as_ref().len() != dim) {
            return Err(PrepError::DimensionMismatch {
                background: dim,
                frame: frames.iter().map(|f| f.as_ref().len()).max().unwrap_or(0),
            });
        }
        let n = frames.len() as f64;
        let mut acc = vec![0.0; dim];
        for f in frames {
            for (a, v) in acc.iter_mut().zip(f.as_ref()) {
                *a += v;
            }
        }
        for a in &mut acc {
            *a /= n;
        }
        IrBackground::new(acc)
    }

    pub fn frame(&self) -> &[f64] {
        &self.frame
    }
}

/// Elementwise subtraction of the empty-scene frame. Negative residuals
/// are preserved.
pub fn ir_denoise(frame: &RawFrame, bg: &IrBackground) -> Result<DenoisedFrame, PrepError> {
    if frame.sensor.pipeline != PipelineId::IrArray {
        return Err(PrepError::WrongPipeline {
            expected: PipelineId::IrArray,
            got: frame.sensor.pipeline,
        });
    }
    if frame.values.len() != bg.frame.len() {
        return Err(PrepError::DimensionMismatch {
            background: bg.frame.len(),
            frame: frame.values.len(),
        });
    }
    let values = frame
        .values
        .iter()
        .zip(&bg.frame)
        .map(|(x, w)| x - w)
        .collect();
    DenoisedFrame::new(frame.sensor, frame.at, values)
        .map_err(|e| PrepError::InvalidBackground(e.to_string()))
}

// ---------------------------------------------------------------------------
// CSI (pipeline 4)
// ---------------------------------------------------------------------------

/// Decodes a pipeline-4 frame into per-antenna complex series
/// (`CSI_ANTENNAS` rows of `CSI_SAMPLES_PER_FRAME` samples).
pub fn csi_antenna_series(frame: &RawFrame) -> Result<Vec<Vec<Complex64>>, PrepError> {
    if frame.sensor.pipeline != PipelineId::Csi {
        return Err(PrepError::WrongPipeline {
            expected: PipelineId::Csi,
            got: frame.sensor.pipeline,
        });
    }
    let mut out = Vec::with_capacity(CSI_ANTENNAS);
    for k in 0..CSI_ANTENNAS {
        let mut series = Vec::with_capacity(CSI_SAMPLES_PER_FRAME);
        for t in 0..CSI_SAMPLES_PER_FRAME {
            let base = 2 * (k * CSI_SAMPLES_PER_FRAME + t);
            series.push(Complex64::new(frame.values[base], frame.values[base + 1]));
        }
        out.push(series);
    }
    Ok(out)
}

/// `w . X(t)` over the within-frame samples. The weights already carry the
/// steering conjugation, so this is a plain dot product across antennas.
pub fn beamform(frame: &RawFrame, weights: &[Complex64]) -> Result<Vec<Complex64>, PrepError> {
    if weights.len() != CSI_ANTENNAS {
        return Err(PrepError::DimensionMismatch {
            background: CSI_ANTENNAS,
            frame: weights.len(),
        });
    }
    let antennas = csi_antenna_series(frame)?;
    let mut out = vec![Complex64::new(0.0, 0.0); CSI_SAMPLES_PER_FRAME];
    for (w, series) in weights.iter().zip(&antennas) {
        for (acc, x) in out.iter_mut().zip(series) {
            *acc += w * x;
        }
    }
    Ok(out)
}

/// Beamforming weights plus the estimated LOS series subtracted from every
/// beamformed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiCalibration {
    weights: Vec<Complex64>,
    los: Vec<Complex64>,
}

impl CsiCalibration {
    /// Weights are normalized to unit L2 norm on construction.
    pub fn new(weights: Vec<Complex64>, los: Vec<Complex64>) -> Result<Self, PrepError> {
        if weights.len() != CSI_ANTENNAS {
            return Err(PrepError::DimensionMismatch {
                background: CSI_ANTENNAS,
                frame: weights.len(),
            });
        }
        if los.len() != CSI_SAMPLES_PER_FRAME {
            return Err(PrepError::DimensionMismatch {
                background: CSI_SAMPLES_PER_FRAME,
                frame: los.len(),
            });
        }
        let norm = weights.iter().map(|w| w.norm_sqr()).sum::<f64>().sqrt();
        if norm <= 0.0 {
            return Err(PrepError::InvalidBackground("zero beamforming weights".into()));
        }
        let weights = weights.into_iter().map(|w| w / norm).collect();
        Ok(CsiCalibration { weights, los })
    }

    pub fn weights(&self) -> &[Complex64] {
        &self.weights
    }

    pub fn los(&self) -> &[Complex64] {
        &self.los
    }
}

/// Uniform (boresight) weights, unit L2 norm.
pub fn uniform_weights() -> Vec<Complex64> {
    let scale = 1.0 / (CSI_ANTENNAS as f64).sqrt();
    vec![Complex64::new(scale, 0.0); CSI_ANTENNAS]
}

/// Per-time-index average of `w . X` over frames captured with no target
/// present. One frame gives that frame's beamformed series verbatim.
pub fn estimate_los(
    quiet_frames: &[RawFrame],
    weights: &[Complex64],
) -> Result<Vec<Complex64>, PrepError> {
    if quiet_frames.is_empty() {
        return Err(PrepError::EmptyInput(0));
    }
    let mut acc = vec![Complex64::new(0.0, 0.0); CSI_SAMPLES_PER_FRAME];
    for frame in quiet_frames {
        let beamformed = beamform(frame, weights)?;
        for (a, b) in acc.iter_mut().zip(&beamformed) {
            *a += b;
        }
    }
    let n = quiet_frames.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    Ok(acc)
}

/// Estimate of the target-reflected component: `w . X(t) - LOS(t)`,
/// returned as an interleaved re/im series.
pub fn csi_isolate(frame: &RawFrame, cal: &CsiCalibration) -> Result<DenoisedFrame, PrepError> {
    let beamformed = beamform(frame, &cal.weights)?;
    let mut values = Vec::with_capacity(2 * CSI_SAMPLES_PER_FRAME);
    for (y, l) in beamformed.iter().zip(&cal.los) {
        let r = y - l;
        values.push(r.re);
        values.push(r.im);
    }
    DenoisedFrame::new(frame.sensor, frame.at, values)
        .map_err(|e| PrepError::InvalidBackground(e.to_string()))
}

// ---------------------------------------------------------------------------
// Background model persistence
// ---------------------------------------------------------------------------

/// Any pipeline's background/calibration parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum BackgroundModel {
    Radar(RadarBackground),
    Thz(ThzBackground),
    Ir(IrBackground),
    Csi(CsiCalibration),
}

impl BackgroundModel {
    pub fn pipeline(&self) -> PipelineId {
        match self {
            BackgroundModel::Radar(_) => PipelineId::FmcwRadar,
            BackgroundModel::Thz(_) => PipelineId::ThzCamera,
            BackgroundModel::Ir(_) => PipelineId::IrArray,
            BackgroundModel::Csi(_) => PipelineId::Csi,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BackgroundModel::Radar(_) => "radar",
            BackgroundModel::Thz(_) => "thz",
            BackgroundModel::Ir(_) => "ir",
            BackgroundModel::Csi(_) => "csi",
        }
    }
}

/// One persisted background document:
/// `{"pipeline","sensor","kind","params"}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredBackground {
    pub sensor: SensorId,
    pub model: BackgroundModel,
}

#[derive(Serialize, Deserialize)]
struct StoredBackgroundWire {
    pipeline: PipelineId,
    sensor: u32,
    kind: String,
    params: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct RadarParamsWire {
    dim: usize,
    mean: Vec<f64>,
    covariance: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ThzParamsWire {
    b: Vec<f64>,
    sigma: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct IrParamsWire {
    frame: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CsiParamsWire {
    weights: Vec<[f64; 2]>,
    los: Vec<[f64; 2]>,
}

impl Serialize for StoredBackground {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let params = match &self.model {
            BackgroundModel::Radar(bg) => serde_json::to_value(RadarParamsWire {
                dim: bg.dim(),
                mean: bg.mean().to_vec(),
                covariance: bg.covariance.as_slice().to_vec(),
            }),
            BackgroundModel::Thz(bg) => serde_json::to_value(ThzParamsWire {
                b: bg.b.clone(),
                sigma: bg.sigma.clone(),
            }),
            BackgroundModel::Ir(bg) => serde_json::to_value(IrParamsWire {
                frame: bg.frame.clone(),
            }),
            BackgroundModel::Csi(cal) => serde_json::to_value(CsiParamsWire {
                weights: cal.weights.iter().map(|c| [c.re, c.im]).collect(),
                los: cal.los.iter().map(|c| [c.re, c.im]).collect(),
            }),
        }
        .map_err(serde::ser::Error::custom)?;
        StoredBackgroundWire {
            pipeline: self.sensor.pipeline,
            sensor: self.sensor.k,
            kind: self.model.kind().to_string(),
            params,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for StoredBackground {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let wire = StoredBackgroundWire::deserialize(deserializer)?;
        let sensor = SensorId::new(wire.pipeline, wire.sensor).map_err(D::Error::custom)?;
        let model = match wire.kind.as_str() {
            "radar" => {
                let p: RadarParamsWire =
                    serde_json::from_value(wire.params).map_err(D::Error::custom)?;
                if p.covariance.len() != p.dim * p.dim || p.mean.len() != p.dim {
                    return Err(D::Error::custom("radar params dimensions inconsistent"));
                }
                let cov = DMatrix::from_vec(p.dim, p.dim, p.covariance);
                BackgroundModel::Radar(
                    RadarBackground::from_parts(p.mean, cov).map_err(D::Error::custom)?,
                )
            }
            "thz" => {
                let p: ThzParamsWire =
                    serde_json::from_value(wire.params).map_err(D::Error::custom)?;
                BackgroundModel::Thz(ThzBackground::new(p.b, p.sigma).map_err(D::Error::custom)?)
            }
            "ir" => {
                let p: IrParamsWire =
                    serde_json::from_value(wire.params).map_err(D::Error::custom)?;
                BackgroundModel::Ir(IrBackground::new(p.frame).map_err(D::Error::custom)?)
            }
            "csi" => {
                let p: CsiParamsWire =
                    serde_json::from_value(wire.params).map_err(D::Error::custom)?;
                let weights = p.weights.iter().map(|[re, im]| Complex64::new(*re, *im)).collect();
                let los = p.los.iter().map(|[re, im]| Complex64::new(*re, *im)).collect();
                BackgroundModel::Csi(CsiCalibration::new(weights, los).map_err(D::Error::custom)?)
            }
            other => return Err(D::Error::custom(format!("unknown background kind {other}"))),
        };
        if model.pipeline() != sensor.pipeline {
            return Err(D::Error::custom("background kind does not match pipeline"));
        }
        Ok(StoredBackground { sensor, model })
    }
}
