//! Beam scanning over a uniform linear array with half-wavelength spacing.
//!
//! Scan weight for antenna k at steering angle theta:
//! `w_k(theta) = exp(-j*pi*k*sin(theta)) / sqrt(M)` (unit L2 norm). A
//! wavefront arriving from theta0 carries per-antenna phase
//! `exp(+j*pi*k*sin(theta0))`, so the response peaks when the scan angle
//! matches the arrival angle.

use num_complex::Complex64;

use super::CountingError;
use crate::prep::csi_antenna_series;
use crate::types::{PipelineId, RawFrame};

/// One beamformed power series: `|w(theta) . X(t)|^2` over time.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialStream {
    /// Steering angle, radians, in (-pi/2, pi/2).
    pub steering_angle: f64,
    pub samples: Vec<f64>,
}

impl SpatialStream {
    pub fn variance(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let n = self.samples.len() as f64;
        let mean = self.samples.iter().sum::<f64>() / n;
        self.samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    }
}

/// Unit-norm steering weights for an M-element half-wavelength ULA.
pub fn steering_weights(angle_rad: f64, m: usize) -> Vec<Complex64> {
    let scale = 1.0 / (m as f64).sqrt();
    (0..m)
        .map(|k| Complex64::from_polar(scale, -std::f64::consts::PI * k as f64 * angle_rad.sin()))
        .collect()
}

/// Scans the session's CSI frames over the given angles, producing one
/// power-over-time stream per angle (frames concatenated in time order).
pub fn beam_scan(frames: &[RawFrame], angles: &[f64]) -> Result<Vec<SpatialStream>, CountingError> {
    if angles.is_empty() {
        return Err(CountingError::InvalidConfig("no scan angles".into()));
    }
    if frames.is_empty() {
        return Err(CountingError::EmptyInput);
    }
    for a in angles {
        if !(-std::f64::consts::FRAC_PI_2 < *a && *a < std::f64::consts::FRAC_PI_2) {
            return Err(CountingError::InvalidConfig(format!(
                "scan angle {a} outside (-pi/2, pi/2)"
            )));
        }
    }
    if let Some(bad) = frames.iter().find(|f| f.sensor.pipeline != PipelineId::Csi) {
        return Err(CountingError::DimensionMismatch(format!(
            "expected CSI frames, got pipeline {:?}",
            bad.sensor.pipeline
        )));
    }
    let decoded: Vec<Vec<Vec<Complex64>>> = frames
        .iter()
        .map(|f| csi_antenna_series(f).map_err(|e| CountingError::DimensionMismatch(e.to_string())))
        .collect::<Result<_, _>>()?;
    let m = decoded[0].len();
    let samples_per_frame = decoded[0][0].len();
    let mut out = Vec::with_capacity(angles.len());
    for &angle in angles {
        let weights = steering_weights(angle, m);
        let mut samples = Vec::with_capacity(frames.len() * samples_per_frame);
        for antennas in &decoded {
            for t in 0..samples_per_frame {
                let mut y = Complex64::new(0.0, 0.0);
                for (w, series) in weights.iter().zip(antennas) {
                    y += w * series[t];
                }
                samples.push(y.norm_sqr());
            }
        }
        out.push(SpatialStream {
            steering_angle: angle,
            samples,
        });
    }
    Ok(out)
}
