//! Speed-and-separation monitoring: the protective separation distance
//! `d_p` (closed form and general integral form) and a latched monitor
//! that turns live distance estimates into robot commands.
//!
//! `d_p = v_w*(T_w+T_r+T_s) + v_r*(T_w+T_r) + v_s*T_s + Z_w`, where the
//! worker terms are ruled by the sensing platform (localization accuracy
//! `Z_w`, detection latency `T_w`) and the robot terms by the cell
//! (stop-command activation `T_r`, stopping time `T_s`, speeds).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transport::LatencyStats;
use crate::types::Timestamp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SafetyError {
    #[error("speed profiles cover {covered_ms:.3} ms, horizon needs {needed_ms:.3} ms")]
    HorizonTooShort { covered_ms: f64, needed_ms: f64 },
    #[error("no ground-truth positions available for uncertainty evaluation")]
    NoGroundTruth,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Cell and sensing parameters for the separation-distance formula.
/// Units are in the serialized field names.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyParams {
    /// Max directed worker speed, m/s.
    pub v_w_mps: f64,
    /// Max directed robot speed, m/s.
    pub v_r_mps: f64,
    /// Mean directed robot speed while stopping, m/s.
    pub v_s_mps: f64,
    /// Worker detection latency, s.
    #[serde(rename = "T_w_s")]
    pub t_w_s: f64,
    /// Stop-command activation time, s.
    #[serde(rename = "T_r_s")]
    pub t_r_s: f64,
    /// Time to complete the stop, s.
    #[serde(rename = "T_s_s")]
    pub t_s_s: f64,
    /// Worker localization accuracy, m.
    #[serde(rename = "Z_w_m")]
    pub z_w_m: f64,
    /// Robot localization accuracy, m (assumed much smaller than Z_w).
    #[serde(rename = "Z_r_m")]
    pub z_r_m: f64,
}

impl SafetyParams {
    pub fn validate(&self) -> Result<(), SafetyError> {
        let fields = [
            ("v_w_mps", self.v_w_mps),
            ("v_r_mps", self.v_r_mps),
            ("v_s_mps", self.v_s_mps),
            ("T_w_s", self.t_w_s),
            ("T_r_s", self.t_r_s),
            ("T_s_s", self.t_s_s),
            ("Z_w_m", self.z_w_m),
            ("Z_r_m", self.z_r_m),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(SafetyError::InvalidParams(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.z_r_m > self.z_w_m {
            return Err(SafetyError::InvalidParams(
                "Z_r_m must not exceed Z_w_m".into(),
            ));
        }
        Ok(())
    }
}

/// Reconstructed robotic-cell constants for the shipped demo
/// configuration. The stop-activation time is derived from the reference
/// operating behavior (a 0.5 -> 0.15 m/s robot slowdown buys 0.040 m of
/// separation at T_w = 90 ms); worker and stopping speeds are then fixed by
/// the two reference operating points d_p = 0.63 m (T_w = 90 ms,
/// Z_w = 0.28 m) and d_p = 0.83 m (T_w = 37 ms, Z_w = 0.54 m). These are
/// reconstructed values, not plant measurements.
pub const RECONSTRUCTED_T_R_S: f64 = 0.04 / 0.35 - 0.09;
pub const RECONSTRUCTED_T_S_S: f64 = 0.3;
pub const RECONSTRUCTED_V_W_MPS: f64 = 0.06 / 0.053 - 0.5;
pub const RECONSTRUCTED_V_S_MPS: f64 = (0.63
    - 0.28
    - RECONSTRUCTED_V_W_MPS * (0.09 + RECONSTRUCTED_T_R_S + RECONSTRUCTED_T_S_S)
    - 0.5 * (0.09 + RECONSTRUCTED_T_R_S))
    / RECONSTRUCTED_T_S_S;

impl SafetyParams {
    /// Demo parameters for motion detection in the operating space
    /// (d > 1 m): T_w = 37 ms, Z_w = 0.54 m.
    pub fn demo_operating_space() -> Self {
        SafetyParams {
            v_w_mps: RECONSTRUCTED_V_W_MPS,
            v_r_mps: 0.5,
            v_s_mps: RECONSTRUCTED_V_S_MPS,
            t_w_s: 0.037,
            t_r_s: RECONSTRUCTED_T_R_S,
            t_s_s: RECONSTRUCTED_T_S_S,
            z_w_m: 0.54,
            z_r_m: 0.0,
        }
    }

    /// Demo parameters for co-presence monitoring in the collaborative
    /// space (d < 1 m): T_w = 90 ms, Z_w = 0.28 m.
    pub fn demo_collaborative_space() -> Self {
        SafetyParams {
            t_w_s: 0.090,
            z_w_m: 0.28,
            ..Self::demo_operating_space()
        }
    }
}

/// Closed-form protective separation distance (constant speeds, Z_r
/// dropped as negligible against Z_w).
pub fn protective_distance(params: &SafetyParams) -> f64 {
    let p = params;
    p.v_w_mps * (p.t_w_s + p.t_r_s + p.t_s_s)
        + p.v_r_mps * (p.t_w_s + p.t_r_s)
        + p.v_s_mps * p.t_s_s
        + p.z_w_m
}

/// Sampled speed functions over the integration horizon. Sample `i` of
/// each profile is the speed at `t0 + i*step_ms` milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedProfiles {
    pub t0: Timestamp,
    pub step_ms: f64,
    pub v_w: Vec<f64>,
    pub v_r: Vec<f64>,
    pub v_s: Vec<f64>,
}

impl SpeedProfiles {
    /// Constant profiles covering `horizon_ms` at 1 ms resolution.
    pub fn constant(t0: Timestamp, horizon_ms: f64, v_w: f64, v_r: f64, v_s: f64) -> Self {
        let n = horizon_ms.ceil() as usize + 2;
        SpeedProfiles {
            t0,
            step_ms: 1.0,
            v_w: vec![v_w; n],
            v_r: vec![v_r; n],
            v_s: vec![v_s; n],
        }
    }
}

/// Integral of the piecewise-linear interpolant of `samples` (spaced
/// `step_ms` apart) over `[from_ms, to_ms]`, in (value-units * ms).
fn integrate_linear(samples: &[f64], step_ms: f64, from_ms: f64, to_ms: f64) -> f64 {
    debug_assert!(from_ms <= to_ms);
    let value_at = |t: f64| -> f64 {
        let pos = t / step_ms;
        let i = (pos.floor() as usize).min(samples.len() - 1);
        let j = (i + 1).min(samples.len() - 1);
        let frac = pos - i as f64;
        samples[i] * (1.0 - frac) + samples[j] * frac
    };
    let mut acc = 0.0;
    let mut a = from_ms;
    loop {
        // Advance to the next sample boundary or the end, whichever first.
        let next_boundary = ((a / step_ms).floor() + 1.0) * step_ms;
        let b = next_boundary.min(to_ms);
        acc += 0.5 * (value_at(a) + value_at(b)) * (b - a);
        if b >= to_ms {
            break;
        }
        a = b;
    }
    acc
}

/// General form of the separation distance: trapezoidal integration of the
/// worker speed over `[t0, t0+T_w+T_r+T_s]`, the robot speed over
/// `[t0, t0+T_w+T_r]`, and the stopping speed over
/// `[t0+T_w+T_r, t0+T_w+T_r+T_s]`, plus `Z_r + Z_w`. With constant
/// profiles this equals the closed form plus the `Z_r` term.
pub fn protective_distance_integral(
    profiles: &SpeedProfiles,
    params: &SafetyParams,
) -> Result<f64, SafetyError> {
    params.validate()?;
    let t1_ms = (params.t_w_s + params.t_r_s) * 1000.0;
    let t2_ms = (params.t_w_s + params.t_r_s + params.t_s_s) * 1000.0;
    for samples in [&profiles.v_w, &profiles.v_r, &profiles.v_s] {
        let covered_ms = (samples.len().saturating_sub(1)) as f64 * profiles.step_ms;
        if covered_ms + 1e-9 < t2_ms || samples.is_empty() {
            return Err(SafetyError::HorizonTooShort {
                covered_ms,
                needed_ms: t2_ms,
            });
        }
    }
    // ms * (m/s) -> meters needs /1000.
    let worker = integrate_linear(&profiles.v_w, profiles.step_ms, 0.0, t2_ms) / 1000.0;
    let robot = integrate_linear(&profiles.v_r, profiles.step_ms, 0.0, t1_ms) / 1000.0;
    let stopping = integrate_linear(&profiles.v_s, profiles.step_ms, t1_ms, t2_ms) / 1000.0;
    Ok(worker + robot + stopping + params.z_r_m + params.z_w_m)
}

/// Monitor mode. `ProtectiveStop` is latched: it releases only once the
/// distance clears `d_p + 2*hysteresis` (the manual-reset analogue).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsmMode {
    Run,
    Slow,
    ProtectiveStop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsmState {
    pub mode: SsmMode,
    pub last_d: f64,
    pub last_update: Timestamp,
}

impl SsmState {
    pub fn initial() -> Self {
        SsmState {
            mode: SsmMode::Run,
            last_d: f64::INFINITY,
            last_update: Timestamp(0),
        }
    }
}

/// Command message published on `cloud/<cell>/ssm`:
/// `{"t_ms","d_m","d_p_m","mode"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmCommand {
    pub t_ms: Timestamp,
    pub d_m: f64,
    pub d_p_m: f64,
    pub mode: SsmMode,
}

/// One monitor step. A memoryless comparator would chatter at the
/// boundary, so the band `(d_p, d_p + hysteresis]` maps to `Slow` and a
/// protective stop stays latched until `d > d_p + 2*hysteresis`.
pub fn ssm_step(
    state: &SsmState,
    d: f64,
    d_p: f64,
    hysteresis: f64,
    at: Timestamp,
) -> (SsmState, SsmCommand) {
    let d = d.max(0.0);
    let mode = if state.mode == SsmMode::ProtectiveStop && d <= d_p + 2.0 * hysteresis {
        SsmMode::ProtectiveStop
    } else if d <= d_p {
        SsmMode::ProtectiveStop
    } else if d <= d_p + hysteresis {
        SsmMode::Slow
    } else {
        SsmMode::Run
    };
    let next = SsmState {
        mode,
        last_d: d,
        last_update: at,
    };
    let command = SsmCommand {
        t_ms: at,
        d_m: d,
        d_p_m: d_p,
        mode,
    };
    (next, command)
}

/// One evaluated window: the true label and the classifier's prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPrediction {
    pub window_end: Timestamp,
    pub true_label: String,
    pub predicted_label: String,
}

/// Measured uncertainty factors of one HRC function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyEstimate {
    /// Mean Euclidean error between predicted and true landmark positions.
    pub z_w_m: f64,
    /// Mean measured detection latency, seconds.
    pub t_w_s: f64,
    /// Windows that entered the position average.
    pub windows_used: usize,
    /// Windows skipped because a label had no landmark coordinates.
    pub windows_skipped: usize,
}

/// Derives (Z_w, T_w) from a completed evaluation run: Z_w is the mean
/// distance between predicted and true landmark centroids; T_w is the mean
/// measured latency. Windows whose true or predicted label has no entry in
/// the landmark table (e.g. "empty") are skipped and counted.
pub fn evaluate_uncertainty(
    windows: &[LabeledPrediction],
    landmarks: &BTreeMap<String, (f64, f64)>,
    latency: &LatencyStats,
) -> Result<UncertaintyEstimate, SafetyError> {
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for w in windows {
        match (landmarks.get(&w.true_label), landmarks.get(&w.predicted_label)) {
            (Some(truth), Some(pred)) => {
                sum += ((truth.0 - pred.0).powi(2) + (truth.1 - pred.1).powi(2)).sqrt();
                used += 1;
            }
            _ => skipped += 1,
        }
    }
    if used == 0 {
        return Err(SafetyError::NoGroundTruth);
    }
    Ok(UncertaintyEstimate {
        z_w_m: sum / used as f64,
        t_w_s: latency.mean_ms / 1000.0,
        windows_used: used,
        windows_skipped: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn zero_speeds_reduce_to_z_w() {
        let params = SafetyParams {
            v_w_mps: 0.0,
            v_r_mps: 0.0,
            v_s_mps: 0.0,
            t_w_s: 0.09,
            t_r_s: 0.02,
            t_s_s: 0.3,
            z_w_m: 0.28,
            z_r_m: 0.0,
        };
        assert_relative_eq!(protective_distance(&params), 0.28);
    }

    #[test]
    fn demo_operating_points_reproduce_reference_distances() {
        // Regression fixture: the reconstructed cell constants reproduce
        // the reference operating points exactly.
        let motion = SafetyParams::demo_operating_space();
        let copresence = SafetyParams::demo_collaborative_space();
        assert_relative_eq!(protective_distance(&motion), 0.83, epsilon = 1e-9);
        assert_relative_eq!(protective_distance(&copresence), 0.63, epsilon = 1e-9);
        assert!(protective_distance(&copresence) < protective_distance(&motion));
    }

    #[test]
    fn slowdown_delta_rule() {
        // d_p(v_r=0.5) - d_p(v_r=0.15) = 0.35 * (T_w + T_r).
        let base = SafetyParams::demo_collaborative_space();
        let slow = SafetyParams {
            v_r_mps: 0.15,
            ..base
        };
        let delta = protective_distance(&base) - protective_distance(&slow);
        assert_relative_eq!(delta, 0.35 * (base.t_w_s + base.t_r_s), epsilon = 1e-12);
        assert_relative_eq!(delta, 0.040, epsilon = 1e-6);
        assert_relative_eq!(protective_distance(&slow), 0.59, epsilon = 1e-9);
    }

    #[test]
    fn constant_profiles_match_closed_form() {
        let params = SafetyParams::demo_collaborative_space();
        let horizon_ms = (params.t_w_s + params.t_r_s + params.t_s_s) * 1000.0;
        let profiles = SpeedProfiles::constant(
            Timestamp(0),
            horizon_ms,
            params.v_w_mps,
            params.v_r_mps,
            params.v_s_mps,
        );
        let integral = protective_distance_integral(&profiles, &params).unwrap();
        let closed = protective_distance(&params) + params.z_r_m;
        assert_relative_eq!(integral, closed, epsilon = 1e-9);
    }

    #[test]
    fn zero_speeds_integral_is_uncertainty_sum() {
        let params = SafetyParams {
            v_w_mps: 0.0,
            v_r_mps: 0.0,
            v_s_mps: 0.0,
            t_w_s: 0.05,
            t_r_s: 0.05,
            t_s_s: 0.2,
            z_w_m: 0.4,
            z_r_m: 0.1,
        };
        let profiles = SpeedProfiles::constant(Timestamp(0), 300.0, 0.0, 0.0, 0.0);
        let d = protective_distance_integral(&profiles, &params).unwrap();
        assert_relative_eq!(d, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn linear_ramp_matches_analytic_integral() {
        // v_r(t) = a*t: its contribution is a*(T_w+T_r)^2/2.
        let a = 0.8; // m/s per second
        let params = SafetyParams {
            v_w_mps: 0.0,
            v_r_mps: 1.0, // unused by the integral form
            v_s_mps: 0.0,
            t_w_s: 0.040,
            t_r_s: 0.035,
            t_s_s: 0.1,
            z_w_m: 0.0,
            z_r_m: 0.0,
        };
        let horizon_ms = (params.t_w_s + params.t_r_s + params.t_s_s) * 1000.0;
        let n = horizon_ms.ceil() as usize + 2;
        let v_r: Vec<f64> = (0..n).map(|i| a * (i as f64 / 1000.0)).collect();
        let profiles = SpeedProfiles {
            t0: Timestamp(0),
            step_ms: 1.0,
            v_w: vec![0.0; n],
            v_r,
            v_s: vec![0.0; n],
        };
        let d = protective_distance_integral(&profiles, &params).unwrap();
        let t1 = params.t_w_s + params.t_r_s;
        assert_relative_eq!(d, a * t1 * t1 / 2.0, epsilon = 1e-6);
    }

    #[test]
    fn horizon_too_short_detected() {
        let params = SafetyParams::demo_collaborative_space();
        let profiles = SpeedProfiles::constant(Timestamp(0), 100.0, 1.0, 1.0, 1.0);
        assert!(matches!(
            protective_distance_integral(&profiles, &params),
            Err(SafetyError::HorizonTooShort { .. })
        ));
    }

    #[test]
    fn monotone_in_every_parameter() {
        let mut rng = crate::types::make_rng(31337);
        for _ in 0..300 {
            let params = SafetyParams {
                v_w_mps: rng.random_range(0.0..2.0),
                v_r_mps: rng.random_range(0.0..1.0),
                v_s_mps: rng.random_range(0.0..0.5),
                t_w_s: rng.random_range(0.0..0.2),
                t_r_s: rng.random_range(0.0..0.1),
                t_s_s: rng.random_range(0.0..0.5),
                z_w_m: rng.random_range(0.0..1.0),
                z_r_m: 0.0,
            };
            let base = protective_distance(&params);
            let bump = rng.random_range(1e-6..0.1);
            for field in 0..7 {
                let mut p = params;
                match field {
                    0 => p.v_w_mps += bump,
                    1 => p.v_r_mps += bump,
                    2 => p.v_s_mps += bump,
                    3 => p.t_w_s += bump,
                    4 => p.t_r_s += bump,
                    5 => p.t_s_s += bump,
                    _ => p.z_w_m += bump,
                }
                assert!(
                    protective_distance(&p) >= base - 1e-12,
                    "field {field} not monotone"
                );
            }
        }
    }

    #[test]
    fn ssm_basic_modes() {
        let s = SsmState::initial();
        let (s1, c1) = ssm_step(&s, 2.0, 0.63, 0.1, Timestamp(1));
        assert_eq!(s1.mode, SsmMode::Run);
        assert_eq!(c1.mode, SsmMode::Run);
        let (s2, _) = ssm_step(&s1, 0.70, 0.63, 0.1, Timestamp(2));
        assert_eq!(s2.mode, SsmMode::Slow);
        let (s3, _) = ssm_step(&s2, 0.5, 0.63, 0.1, Timestamp(3));
        assert_eq!(s3.mode, SsmMode::ProtectiveStop);
    }

    #[test]
    fn ssm_latch_holds_until_release() {
        let s = SsmState::initial();
        let (stopped, _) = ssm_step(&s, 0.5, 0.63, 0.1, Timestamp(0));
        assert_eq!(stopped.mode, SsmMode::ProtectiveStop);
        // 0.70 <= 0.63 + 0.2 keeps the latch closed.
        let (still, _) = ssm_step(&stopped, 0.70, 0.63, 0.1, Timestamp(1));
        assert_eq!(still.mode, SsmMode::ProtectiveStop);
        let (still2, _) = ssm_step(&still, 0.83, 0.63, 0.1, Timestamp(2));
        assert_eq!(still2.mode, SsmMode::ProtectiveStop, "boundary stays latched");
        let (released, _) = ssm_step(&still2, 0.84, 0.63, 0.1, Timestamp(3));
        assert_eq!(released.mode, SsmMode::Run);
    }

    #[test]
    fn ssm_never_skips_latch_release() {
        let mut rng = crate::types::make_rng(99);
        let d_p = 0.63;
        let h = 0.1;
        let mut state = SsmState::initial();
        for t in 0..5000u64 {
            let d: f64 = rng.random_range(0.0..1.2);
            let prev_mode = state.mode;
            let (next, _) = ssm_step(&state, d, d_p, h, Timestamp(t));
            if prev_mode == SsmMode::ProtectiveStop && next.mode != SsmMode::ProtectiveStop {
                assert!(d > d_p + 2.0 * h, "released at d={d}");
            }
            state = next;
        }
    }

    #[test]
    fn ssm_command_schema() {
        let (_, cmd) = ssm_step(&SsmState::initial(), 0.5, 0.63, 0.1, Timestamp(7));
        let v = serde_json::to_value(&cmd).unwrap();
        assert_eq!(v["t_ms"], 7);
        assert_eq!(v["d_m"], 0.5);
        assert_eq!(v["d_p_m"], 0.63);
        assert_eq!(v["mode"], "protective_stop");
    }

    #[test]
    fn uncertainty_from_landmark_predictions() {
        let mut landmarks = BTreeMap::new();
        landmarks.insert("A".to_string(), (0.0, 0.0));
        landmarks.insert("B".to_string(), (0.5, 0.0));
        let perfect: Vec<LabeledPrediction> = (0..10)
            .map(|i| LabeledPrediction {
                window_end: Timestamp(i),
                true_label: "A".into(),
                predicted_label: "A".into(),
            })
            .collect();
        let latency = LatencyStats {
            count: 10,
            mean_ms: 37.0,
            p50_ms: 37.0,
            p95_ms: 37.0,
            max_ms: 37.0,
        };
        let est = evaluate_uncertainty(&perfect, &landmarks, &latency).unwrap();
        assert_relative_eq!(est.z_w_m, 0.0);
        assert_relative_eq!(est.t_w_s, 0.037);

        let off_by_one: Vec<LabeledPrediction> = (0..10)
            .map(|i| LabeledPrediction {
                window_end: Timestamp(i),
                true_label: "A".into(),
                predicted_label: "B".into(),
            })
            .collect();
        let est = evaluate_uncertainty(&off_by_one, &landmarks, &latency).unwrap();
        assert_relative_eq!(est.z_w_m, 0.5);

        let unknown: Vec<LabeledPrediction> = vec![LabeledPrediction {
            window_end: Timestamp(0),
            true_label: "empty".into(),
            predicted_label: "empty".into(),
        }];
        assert_eq!(
            evaluate_uncertainty(&unknown, &landmarks, &latency),
            Err(SafetyError::NoGroundTruth)
        );
    }

    #[test]
    fn params_json_field_names() {
        let p = SafetyParams::demo_collaborative_space();
        let v = serde_json::to_value(p).unwrap();
        for key in [
            "v_w_mps", "v_r_mps", "v_s_mps", "T_w_s", "T_r_s", "T_s_s", "Z_w_m", "Z_r_m",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}
