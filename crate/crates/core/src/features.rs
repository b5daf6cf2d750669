//! Statistical feature extraction and fusion.
//!
//! Every pipeline reduces its denoised frame stream to the same four
//! moments per window — mean, standard deviation, skewness, kurtosis — so
//! features from heterogeneous sensors share one representation and can be
//! fused. All moments are population moments (divide by N), matching the
//! time-expectation operator used by the denoising stages.
//!
//! Two windowing modes exist:
//! - scalar mode ([`frame_stream_features`]): each frame collapses to the
//!   mean of its elements, the scalar series is windowed, and each window
//!   yields one [`FeatureVector`] — the lightweight telemetry payload;
//! - per-element mode ([`frame_stream_moment_maps`]): moments are computed
//!   per frame position, giving spatial moment maps that the edge arranges
//!   into the 2D classifier inputs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{validate_stream, DenoisedFrame, PipelineId, SensorId, Timestamp};

/// Side of the fused classifier input grids.
pub const GRID_SIDE: usize = 32;

/// Windows with sigma below this are degenerate: skewness and kurtosis are
/// undefined on them.
pub const DEGENERATE_SIGMA: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("window needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("degenerate window: sigma below {DEGENERATE_SIGMA:e}")]
    DegenerateWindow,
    #[error("window contains a non-finite sample")]
    NonFinite,
    #[error("frames in one stream must share a sensor")]
    MixedSensors,
    #[error("frames must be time-ordered")]
    NotTimeOrdered,
    #[error("matrix must have at least one row and one column")]
    EmptyMatrix,
    #[error("selection names pipeline {0:?} but no matrix was provided for it")]
    MissingPipeline(PipelineId),
    #[error("selection must not be empty")]
    EmptySelection,
}

/// The four population moments of one sample window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mu: f64,
    pub sigma: f64,
    pub zeta: f64,
    pub kappa: f64,
}

/// Population moments over a window: mu = mean, sigma = sqrt(mean((x-mu)^2)),
/// zeta = mean(((x-mu)/sigma)^3), kappa = mean(((x-mu)/sigma)^4).
pub fn compute_moments(window: &[f64]) -> Result<Moments, FeatureError> {
    if window.len() < 2 {
        return Err(FeatureError::TooShort(window.len()));
    }
    if window.iter().any(|v| !v.is_finite()) {
        return Err(FeatureError::NonFinite);
    }
    let n = window.len() as f64;
    let mu = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    let sigma = var.sqrt();
    if sigma < DEGENERATE_SIGMA {
        return Err(FeatureError::DegenerateWindow);
    }
    let mut zeta = 0.0;
    let mut kappa = 0.0;
    for x in window {
        let z = (x - mu) / sigma;
        let z3 = z * z * z;
        zeta += z3;
        kappa += z3 * z;
    }
    Ok(Moments {
        mu,
        sigma,
        zeta: zeta / n,
        kappa: kappa / n,
    })
}

/// One pipeline/sensor feature sample, the JSON feature telemetry payload:
/// `{"pipeline","sensor","t_ms","mu","sigma","zeta","kappa"}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub sensor: SensorId,
    pub window_end: Timestamp,
    pub mu: f64,
    pub sigma: f64,
    pub zeta: f64,
    pub kappa: f64,
}

#[derive(Serialize, Deserialize)]
struct FeatureVectorWire {
    pipeline: PipelineId,
    sensor: u32,
    t_ms: Timestamp,
    mu: f64,
    sigma: f64,
    zeta: f64,
    kappa: f64,
}

impl Serialize for FeatureVector {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        FeatureVectorWire {
            pipeline: self.sensor.pipeline,
            sensor: self.sensor.k,
            t_ms: self.window_end,
            mu: self.mu,
            sigma: self.sigma,
            zeta: self.zeta,
            kappa: self.kappa,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FeatureVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = FeatureVectorWire::deserialize(deserializer)?;
        let sensor =
            SensorId::new(wire.pipeline, wire.sensor).map_err(serde::de::Error::custom)?;
        Ok(FeatureVector {
            sensor,
            window_end: wire.t_ms,
            mu: wire.mu,
            sigma: wire.sigma,
            zeta: wire.zeta,
            kappa: wire.kappa,
        })
    }
}

/// Outcome of one feature window; degenerate windows are reported, not
/// dropped, so the edge can dead-letter them.
#[derive(Debug, Clone, PartialEq)]
pub enum WindowFeatures {
    Features(FeatureVector),
    Degenerate {
        sensor: SensorId,
        window_end: Timestamp,
    },
}

fn check_stream(frames: &[DenoisedFrame]) -> Result<(), FeatureError> {
    validate_stream(frames.iter().map(|f| (&f.sensor, &f.at))).map_err(|e| match e {
        crate::types::CoreError::MixedSensors => FeatureError::MixedSensors,
        _ => FeatureError::NotTimeOrdered,
    })
}

/// Scalar-mode windowing: summarize each frame by the mean of its elements,
/// cut the series into consecutive non-overlapping windows of `window_len`
/// frames, and compute one [`FeatureVector`] per window, stamped with the
/// window's last timestamp. A trailing partial window is dropped.
pub fn frame_stream_features(
    frames: &[DenoisedFrame],
    window_len: usize,
) -> Result<Vec<WindowFeatures>, FeatureError> {
    if window_len < 2 {
        return Err(FeatureError::TooShort(window_len));
    }
    check_stream(frames)?;
    let mut out = Vec::new();
    for chunk in frames.chunks_exact(window_len) {
        let sensor = chunk[0].sensor;
        let window_end = chunk[chunk.len() - 1].at;
        let summaries: Vec<f64> = chunk
            .iter()
            .map(|f| f.values.iter().sum::<f64>() / f.values.len() as f64)
            .collect();
        match compute_moments(&summaries) {
            Ok(m) => out.push(WindowFeatures::Features(FeatureVector {
                sensor,
                window_end,
                mu: m.mu,
                sigma: m.sigma,
                zeta: m.zeta,
                kappa: m.kappa,
            })),
            Err(FeatureError::DegenerateWindow) => {
                out.push(WindowFeatures::Degenerate { sensor, window_end })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Per-element moment maps over one window: for every frame position, the
/// four moments of that position's time series. Positions whose series is
/// degenerate get zeta = kappa = 0 so the maps stay total; those fills are
/// classifier-input plumbing, not feature telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMaps {
    pub sensor: SensorId,
    pub window_end: Timestamp,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub zeta: Vec<f64>,
    pub kappa: Vec<f64>,
}

impl MomentMaps {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

/// Per-element-mode windowing; see [`MomentMaps`].
pub fn frame_stream_moment_maps(
    frames: &[DenoisedFrame],
    window_len: usize,
) -> Result<Vec<MomentMaps>, FeatureError> {
    if window_len < 2 {
        return Err(FeatureError::TooShort(window_len));
    }
    check_stream(frames)?;
    let mut out = Vec::new();
    for chunk in frames.chunks_exact(window_len) {
        let len = chunk[0].values.len();
        let n = chunk.len() as f64;
        let mut mu = vec![0.0; len];
        let mut sigma = vec![0.0; len];
        let mut zeta = vec![0.0; len];
        let mut kappa = vec![0.0; len];
        for (pos, (((m, s), z), k)) in mu
            .iter_mut()
            .zip(sigma.iter_mut())
            .zip(zeta.iter_mut())
            .zip(kappa.iter_mut())
            .enumerate()
        {
            let mean = chunk.iter().map(|f| f.values[pos]).sum::<f64>() / n;
            let var = chunk
                .iter()
                .map(|f| {
                    let d = f.values[pos] - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            let sd = var.sqrt();
            *m = mean;
            *s = sd;
            if sd >= DEGENERATE_SIGMA {
                let mut z3 = 0.0;
                let mut z4 = 0.0;
                for f in chunk {
                    let t = (f.values[pos] - mean) / sd;
                    let t3 = t * t * t;
                    z3 += t3;
                    z4 += t3 * t;
                }
                *z = z3 / n;
                *k = z4 / n;
            }
        }
        out.push(MomentMaps {
            sensor: chunk[0].sensor,
            window_end: chunk[chunk.len() - 1].at,
            mu,
            sigma,
            zeta,
            kappa,
        });
    }
    Ok(out)
}

/// A dense row-major real matrix. Small enough here that a flat Vec beats
/// pulling matrix types into the telemetry schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, FeatureError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(FeatureError::EmptyMatrix);
        }
        Ok(Grid { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Grid {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, FeatureError> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(FeatureError::EmptyMatrix);
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(FeatureError::EmptyMatrix);
        }
        let data = rows.iter().flatten().copied().collect();
        Grid::new(rows.len(), cols, data)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Bilinear sample at fractional coordinates on the row/col lattice.
    pub fn sample(&self, u: f64, v: f64) -> f64 {
        let r0 = (u.floor() as usize).min(self.rows - 1);
        let c0 = (v.floor() as usize).min(self.cols - 1);
        let r1 = (r0 + 1).min(self.rows - 1);
        let c1 = (c0 + 1).min(self.cols - 1);
        let fu = u - r0 as f64;
        let fv = v - c0 as f64;
        let a = self.get(r0, c0);
        let b = self.get(r0, c1);
        let c = self.get(r1, c0);
        let d = self.get(r1, c1);
        a * (1.0 - fu) * (1.0 - fv) + b * (1.0 - fu) * fv + c * fu * (1.0 - fv) + d * fu * fv
    }
}

/// Bilinear resize on the unit-square parameterization: output pixel (i, j)
/// samples the input at (i*(H-1)/(TH-1), j*(W-1)/(TW-1)). A same-size
/// resize is an exact pass-through.
pub fn resize_grid(grid: &Grid, target_rows: usize, target_cols: usize) -> Result<Grid, FeatureError> {
    if grid.rows == 0 || grid.cols == 0 || target_rows == 0 || target_cols == 0 {
        return Err(FeatureError::EmptyMatrix);
    }
    if grid.rows == target_rows && grid.cols == target_cols {
        return Ok(grid.clone());
    }
    let mut out = Grid::zeros(target_rows, target_cols);
    for i in 0..target_rows {
        let u = if target_rows == 1 {
            0.0
        } else {
            i as f64 * (grid.rows - 1) as f64 / (target_rows - 1) as f64
        };
        for j in 0..target_cols {
            let v = if target_cols == 1 {
                0.0
            } else {
                j as f64 * (grid.cols - 1) as f64 / (target_cols - 1) as f64
            };
            out.set(i, j, grid.sample(u, v));
        }
    }
    Ok(out)
}

/// Min-max normalization to [0, 1]; a constant matrix maps to all 0.5.
pub fn minmax_normalize(grid: &Grid) -> Grid {
    let min = grid.data.iter().copied().fold(f64::INFINITY, f64::min);
    let max = grid.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let data = if span <= 0.0 {
        vec![0.5; grid.data.len()]
    } else {
        grid.data.iter().map(|x| (x - min) / span).collect()
    };
    Grid {
        rows: grid.rows,
        cols: grid.cols,
        data,
    }
}

/// Fused multi-pipeline classifier input: one 32x32 channel per selected
/// pipeline, kept separate so per-pipeline filters can run independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGrid {
    pub channels: Vec<(PipelineId, Grid)>,
    #[serde(rename = "window_end_ms")]
    pub window_end: Timestamp,
}

/// Resizes every selected pipeline's matrix to 32x32, min-max normalizes
/// it, and stacks the channels in ascending pipeline order.
pub fn fuse_features(
    per_pipeline: &BTreeMap<PipelineId, Grid>,
    selection: &BTreeSet<PipelineId>,
    window_end: Timestamp,
) -> Result<FeatureGrid, FeatureError> {
    if selection.is_empty() {
        return Err(FeatureError::EmptySelection);
    }
    let mut channels = Vec::with_capacity(selection.len());
    for &pid in selection {
        let matrix = per_pipeline
            .get(&pid)
            .ok_or(FeatureError::MissingPipeline(pid))?;
        let resized = resize_grid(matrix, GRID_SIDE, GRID_SIDE)?;
        channels.push((pid, minmax_normalize(&resized)));
    }
    Ok(FeatureGrid {
        channels,
        window_end,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::PipelineId;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ir_sensor() -> SensorId {
        SensorId::new(PipelineId::IrArray, 1).unwrap()
    }

    fn ir_frame(t: u64, fill: f64) -> DenoisedFrame {
        DenoisedFrame::new(ir_sensor(), Timestamp(t), vec![fill; 64]).unwrap()
    }

    /// Brute-force oracle evaluating the moment definitions directly,
    /// independent of compute_moments' accumulation strategy.
    fn oracle_moments(window: &[f64]) -> (f64, f64, f64, f64) {
        let n = window.len() as f64;
        let mu: f64 = window.iter().sum::<f64>() / n;
        let sigma = (window.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n).sqrt();
        let zeta = window.iter().map(|x| ((x - mu) / sigma).powi(3)).sum::<f64>() / n;
        let kappa = window.iter().map(|x| ((x - mu) / sigma).powi(4)).sum::<f64>() / n;
        (mu, sigma, zeta, kappa)
    }

    #[test]
    fn constant_window_is_degenerate() {
        assert_eq!(
            compute_moments(&[3.5; 16]),
            Err(FeatureError::DegenerateWindow)
        );
    }

    #[test]
    fn alternating_window_moments() {
        let m = compute_moments(&[-1.0, 1.0, -1.0, 1.0]).unwrap();
        assert_relative_eq!(m.mu, 0.0);
        assert_relative_eq!(m.sigma, 1.0);
        assert_relative_eq!(m.zeta, 0.0);
        assert_relative_eq!(m.kappa, 1.0);
    }

    #[test]
    fn skewed_window_matches_oracle() {
        // Frozen from the brute-force oracle on [0,0,0,1].
        let m = compute_moments(&[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_relative_eq!(m.mu, 0.25, epsilon = 1e-12);
        assert_relative_eq!(m.sigma, 0.25 * 3.0f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(m.sigma, 0.4330, epsilon = 1e-4);
        assert_relative_eq!(m.zeta, 1.1547, epsilon = 1e-4);
        assert_relative_eq!(m.kappa, 2.3333, epsilon = 1e-4);
        let (mu, sigma, zeta, kappa) = oracle_moments(&[0.0, 0.0, 0.0, 1.0]);
        assert_relative_eq!(m.mu, mu, epsilon = 1e-12);
        assert_relative_eq!(m.sigma, sigma, epsilon = 1e-12);
        assert_relative_eq!(m.zeta, zeta, epsilon = 1e-12);
        assert_relative_eq!(m.kappa, kappa, epsilon = 1e-12);
    }

    #[test]
    fn too_short_window() {
        assert_eq!(compute_moments(&[1.0]), Err(FeatureError::TooShort(1)));
    }

    proptest! {
        #[test]
        fn moments_match_oracle(window in prop::collection::vec(-100.0f64..100.0, 4..64)) {
            prop_assume!(oracle_moments(&window).1 > 1e-9);
            let m = compute_moments(&window).unwrap();
            let (mu, sigma, zeta, kappa) = oracle_moments(&window);
            prop_assert!((m.mu - mu).abs() <= 1e-9 * mu.abs().max(1.0));
            prop_assert!((m.sigma - sigma).abs() <= 1e-9 * sigma.abs().max(1.0));
            prop_assert!((m.zeta - zeta).abs() <= 1e-9 * zeta.abs().max(1.0));
            prop_assert!((m.kappa - kappa).abs() <= 1e-9 * kappa.abs().max(1.0));
        }

        #[test]
        fn affine_invariance(
            window in prop::collection::vec(-50.0f64..50.0, 8..40),
            a in 0.01f64..10.0,
            b in -10.0f64..10.0,
        ) {
            prop_assume!(oracle_moments(&window).1 > 1e-6);
            let scaled: Vec<f64> = window.iter().map(|x| a * x + b).collect();
            let m0 = compute_moments(&window).unwrap();
            let m1 = compute_moments(&scaled).unwrap();
            prop_assert!((m1.mu - (a * m0.mu + b)).abs() < 1e-9 * (1.0 + m1.mu.abs()));
            prop_assert!((m1.sigma - a * m0.sigma).abs() < 1e-9 * (1.0 + m1.sigma.abs()));
            prop_assert!((m1.zeta - m0.zeta).abs() < 1e-9 * (1.0 + m0.zeta.abs()));
            prop_assert!((m1.kappa - m0.kappa).abs() < 1e-9 * (1.0 + m0.kappa.abs()));
        }

        #[test]
        fn pearson_inequality(window in prop::collection::vec(-100.0f64..100.0, 4..64)) {
            prop_assume!(oracle_moments(&window).1 > 1e-9);
            let m = compute_moments(&window).unwrap();
            prop_assert!(m.kappa + 1e-9 >= 1.0 + m.zeta * m.zeta);
        }

        #[test]
        fn resize_preserves_bounds(
            rows in 1usize..12,
            cols in 1usize..12,
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = crate::types::make_rng(seed);
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-5.0..5.0)).collect();
            let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let grid = Grid::new(rows, cols, data).unwrap();
            let out = resize_grid(&grid, 32, 32).unwrap();
            for &v in &out.data {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn scalar_windowing_constant_stream_degenerates() {
        let frames: Vec<DenoisedFrame> = (0..8).map(|t| ir_frame(t, 2.0)).collect();
        let out = frame_stream_features(&frames, 4).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out
            .iter()
            .all(|w| matches!(w, WindowFeatures::Degenerate { .. })));
    }

    #[test]
    fn scalar_windowing_alternating_means() {
        let frames: Vec<DenoisedFrame> = (0..4)
            .map(|t| ir_frame(t, if t % 2 == 0 { -1.0 } else { 1.0 }))
            .collect();
        let out = frame_stream_features(&frames, 4).unwrap();
        assert_eq!(out.len(), 1);
        match &out[0] {
            WindowFeatures::Features(f) => {
                assert_relative_eq!(f.mu, 0.0);
                assert_relative_eq!(f.sigma, 1.0);
                assert_relative_eq!(f.zeta, 0.0);
                assert_relative_eq!(f.kappa, 1.0);
                assert_eq!(f.window_end, Timestamp(3));
            }
            other => panic!("expected features, got {other:?}"),
        }
    }

    #[test]
    fn scalar_windowing_matches_moment_oracle() {
        use rand::Rng;
        let mut rng = crate::types::make_rng(7);
        let frames: Vec<DenoisedFrame> = (0..32)
            .map(|t| {
                let values: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
                DenoisedFrame::new(ir_sensor(), Timestamp(t), values).unwrap()
            })
            .collect();
        let out = frame_stream_features(&frames, 8).unwrap();
        assert_eq!(out.len(), 4);
        for (w, chunk) in out.iter().zip(frames.chunks_exact(8)) {
            let summaries: Vec<f64> = chunk
                .iter()
                .map(|f| f.values.iter().sum::<f64>() / 64.0)
                .collect();
            let m = compute_moments(&summaries).unwrap();
            match w {
                WindowFeatures::Features(f) => {
                    assert_relative_eq!(f.mu, m.mu, epsilon = 1e-12);
                    assert_relative_eq!(f.sigma, m.sigma, epsilon = 1e-12);
                    assert_relative_eq!(f.zeta, m.zeta, epsilon = 1e-12);
                    assert_relative_eq!(f.kappa, m.kappa, epsilon = 1e-12);
                }
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn empty_stream_no_output() {
        assert!(frame_stream_features(&[], 4).unwrap().is_empty());
    }

    #[test]
    fn mixed_sensors_rejected() {
        let other = SensorId::new(PipelineId::IrArray, 2).unwrap();
        let frames = vec![
            ir_frame(0, 1.0),
            DenoisedFrame::new(other, Timestamp(1), vec![0.0; 64]).unwrap(),
        ];
        assert_eq!(
            frame_stream_features(&frames, 2),
            Err(FeatureError::MixedSensors)
        );
    }

    #[test]
    fn moment_maps_match_per_position_moments() {
        use rand::Rng;
        let mut rng = crate::types::make_rng(11);
        let frames: Vec<DenoisedFrame> = (0..16)
            .map(|t| {
                let values: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..1.0)).collect();
                DenoisedFrame::new(ir_sensor(), Timestamp(t), values).unwrap()
            })
            .collect();
        let maps = frame_stream_moment_maps(&frames, 16).unwrap();
        assert_eq!(maps.len(), 1);
        let map = &maps[0];
        for pos in [0usize, 17, 63] {
            let series: Vec<f64> = frames.iter().map(|f| f.values[pos]).collect();
            let m = compute_moments(&series).unwrap();
            assert_relative_eq!(map.mu[pos], m.mu, epsilon = 1e-12);
            assert_relative_eq!(map.sigma[pos], m.sigma, epsilon = 1e-12);
            assert_relative_eq!(map.zeta[pos], m.zeta, epsilon = 1e-12);
            assert_relative_eq!(map.kappa[pos], m.kappa, epsilon = 1e-12);
        }
    }

    #[test]
    fn resize_identity_at_32() {
        use rand::Rng;
        let mut rng = crate::types::make_rng(3);
        let data: Vec<f64> = (0..32 * 32).map(|_| rng.random_range(0.0..1.0)).collect();
        let grid = Grid::new(32, 32, data).unwrap();
        let out = resize_grid(&grid, 32, 32).unwrap();
        assert_eq!(out, grid);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let grid = Grid::new(5, 7, vec![4.25; 35]).unwrap();
        let out = resize_grid(&grid, 32, 32).unwrap();
        assert!(out.data.iter().all(|&v| (v - 4.25).abs() < 1e-12));
    }

    #[test]
    fn resize_bilinear_center() {
        // 2x2 corners (0,1,1,0): the interpolant at the center is 0.5.
        let grid = Grid::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let out = resize_grid(&grid, 3, 3).unwrap();
        assert_relative_eq!(out.get(1, 1), 0.5, epsilon = 1e-12);
        assert_relative_eq!(grid.sample(0.5, 0.5), 0.5, epsilon = 1e-12);
        // Corner pins.
        assert_relative_eq!(out.get(0, 0), 0.0);
        assert_relative_eq!(out.get(0, 2), 1.0);
        assert_relative_eq!(out.get(2, 0), 1.0);
        assert_relative_eq!(out.get(2, 2), 0.0);
    }

    #[test]
    fn minmax_examples() {
        let g = Grid::new(1, 3, vec![0.0, 5.0, 10.0]).unwrap();
        assert_eq!(minmax_normalize(&g).data, vec![0.0, 0.5, 1.0]);
        let c = Grid::new(2, 2, vec![7.0; 4]).unwrap();
        assert_eq!(minmax_normalize(&c).data, vec![0.5; 4]);
        let u = Grid::new(1, 3, vec![0.0, 0.25, 1.0]).unwrap();
        assert_eq!(minmax_normalize(&u).data, vec![0.0, 0.25, 1.0]);
    }

    #[test]
    fn fuse_single_and_multi_channel() {
        use rand::Rng;
        let mut rng = crate::types::make_rng(5);
        let mut per_pipeline = BTreeMap::new();
        for pid in [PipelineId::FmcwRadar, PipelineId::ThzCamera, PipelineId::IrArray] {
            let data: Vec<f64> = (0..6 * 20).map(|_| rng.random_range(-2.0..2.0)).collect();
            per_pipeline.insert(pid, Grid::new(6, 20, data).unwrap());
        }

        let single: BTreeSet<PipelineId> = [PipelineId::FmcwRadar].into_iter().collect();
        let grid = fuse_features(&per_pipeline, &single, Timestamp(100)).unwrap();
        assert_eq!(grid.channels.len(), 1);

        let pair: BTreeSet<PipelineId> =
            [PipelineId::FmcwRadar, PipelineId::ThzCamera].into_iter().collect();
        let grid = fuse_features(&per_pipeline, &pair, Timestamp(100)).unwrap();
        assert_eq!(grid.channels.len(), 2);
        for (pid, ch) in &grid.channels {
            assert_eq!((ch.rows, ch.cols), (32, 32));
            assert!(ch.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
            // Channel equals resize+normalize composed by hand.
            let expect = minmax_normalize(&resize_grid(&per_pipeline[pid], 32, 32).unwrap());
            assert_eq!(ch, &expect);
        }
        // Ascending pipeline order.
        assert_eq!(grid.channels[0].0, PipelineId::FmcwRadar);
        assert_eq!(grid.channels[1].0, PipelineId::ThzCamera);

        let triple: BTreeSet<PipelineId> = [
            PipelineId::FmcwRadar,
            PipelineId::ThzCamera,
            PipelineId::IrArray,
        ]
        .into_iter()
        .collect();
        let grid = fuse_features(&per_pipeline, &triple, Timestamp(100)).unwrap();
        assert_eq!(grid.channels.len(), 3);
    }

    #[test]
    fn fuse_missing_pipeline() {
        let per_pipeline = BTreeMap::new();
        let selection: BTreeSet<PipelineId> = [PipelineId::Csi].into_iter().collect();
        assert_eq!(
            fuse_features(&per_pipeline, &selection, Timestamp(0)),
            Err(FeatureError::MissingPipeline(PipelineId::Csi))
        );
    }

    #[test]
    fn fuse_deterministic() {
        let mut per_pipeline = BTreeMap::new();
        per_pipeline.insert(
            PipelineId::FmcwRadar,
            Grid::new(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap(),
        );
        let selection: BTreeSet<PipelineId> = [PipelineId::FmcwRadar].into_iter().collect();
        let a = fuse_features(&per_pipeline, &selection, Timestamp(1)).unwrap();
        let b = fuse_features(&per_pipeline, &selection, Timestamp(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn feature_vector_json_schema() {
        let f = FeatureVector {
            sensor: SensorId::new(PipelineId::ThzCamera, 1).unwrap(),
            window_end: Timestamp(2000),
            mu: 0.5,
            sigma: 0.1,
            zeta: -0.2,
            kappa: 3.0,
        };
        let v = serde_json::to_value(&f).unwrap();
        assert_eq!(v["pipeline"], 2);
        assert_eq!(v["sensor"], 1);
        assert_eq!(v["t_ms"], 2000);
        assert_eq!(v["mu"], 0.5);
        let back: FeatureVector = serde_json::from_value(v).unwrap();
        assert_eq!(back, f);
    }
}
