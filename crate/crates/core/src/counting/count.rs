//! End-to-end worker count estimation and the occupancy analysis
//! (per-stream KL profile, correlation false-positive filter).

use serde::{Deserialize, Serialize};

use super::beam::{beam_scan, SpatialStream};
use super::hac::{build_distance_matrix, hac_cluster, Linkage};
use super::jade::{abs_correlation, jade_separate};
use super::kl::kl_divergence;
use super::CountingError;
use crate::prep::csi_antenna_series;
use crate::types::{RawFrame, CSI_ANTENNAS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingConfig {
    /// Steering angles scanned, radians.
    pub scan_angles: Vec<f64>,
    /// A stream is active when its power variance exceeds this floor.
    pub activity_threshold: f64,
    /// Sakoe-Chiba half-width fraction for cDDTW.
    pub dtw_window_frac: f64,
    /// Sources are block-averaged to about this many samples before DTW.
    pub dtw_series_len: usize,
    pub linkage: Linkage,
    /// HAC distance cut separating same-worker from different-worker
    /// sources.
    pub hac_cut: f64,
    /// A cluster counts as occupied when its aggregate activity reaches
    /// this fraction of the strongest cluster's activity.
    pub occupancy_fraction: f64,
    /// Count cap (the antenna array cannot resolve more).
    pub max_count: usize,
    /// Minimum session span, ms.
    pub min_session_ms: u64,
    /// Histogram bins for the KL occupancy profile.
    pub kl_bins: usize,
    /// Neighbor-correlation threshold of the false-positive filter.
    pub corr_threshold: f64,
}

impl Default for CountingConfig {
    fn default() -> Self {
        CountingConfig {
            scan_angles: (-12..=12).map(|i| (i as f64 * 5.0).to_radians()).collect(),
            activity_threshold: 1e-3,
            dtw_window_frac: 0.1,
            dtw_series_len: 256,
            linkage: Linkage::Average,
            hac_cut: 0.5,
            occupancy_fraction: 0.02,
            max_count: CSI_ANTENNAS,
            min_session_ms: 1000,
            kl_bins: 40,
            corr_threshold: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub angle_rad: f64,
    pub power_variance: f64,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountEstimate {
    pub count: usize,
    pub streams: Vec<StreamSummary>,
    /// Cluster id per separated source.
    pub cluster_of_source: Vec<usize>,
    /// Aggregate activity (mixing energy) per cluster.
    pub cluster_activity: Vec<f64>,
    /// False when JADE failed to converge and clustering fell back to the
    /// gated streams themselves.
    pub separation_converged: bool,
}

/// Per-session counting report, serialized to JSON by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub true_count: Option<usize>,
    pub estimated_count: usize,
    pub per_stream_kl: Vec<f64>,
    pub cluster_assignment: Vec<usize>,
    pub stream_angles_rad: Vec<f64>,
    pub separation_converged: bool,
}

fn block_average(series: &[f64], target_len: usize) -> Vec<f64> {
    if series.len() <= target_len.max(3) {
        return series.to_vec();
    }
    let block = series.len().div_ceil(target_len);
    series
        .chunks(block)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

/// Removes each antenna's session mean (the static LOS and any standing
/// reflections) so beamformed power fluctuation reflects motion only.
fn remove_static_component(frames: &[RawFrame]) -> Result<Vec<RawFrame>, CountingError> {
    if frames.is_empty() {
        return Err(CountingError::EmptyInput);
    }
    let decoded: Vec<_> = frames
        .iter()
        .map(|f| csi_antenna_series(f).map_err(|e| CountingError::DimensionMismatch(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let antennas = decoded[0].len();
    let per_frame = decoded[0][0].len();
    let total = (frames.len() * per_frame) as f64;
    let mut means = vec![num_complex::Complex64::new(0.0, 0.0); antennas];
    for frame in &decoded {
        for (k, series) in frame.iter().enumerate() {
            for v in series {
                means[k] += v;
            }
        }
    }
    for m in &mut means {
        *m /= total;
    }
    let mut out = Vec::with_capacity(frames.len());
    for (frame, decoded_frame) in frames.iter().zip(&decoded) {
        let mut values = Vec::with_capacity(frame.values.len());
        for (k, series) in decoded_frame.iter().enumerate() {
            for v in series {
                let centered = v - means[k];
                values.push(centered.re);
                values.push(centered.im);
            }
        }
        out.push(
            RawFrame::new(frame.sensor, frame.at, values)
                .map_err(|e| CountingError::DimensionMismatch(e.to_string()))?,
        );
    }
    Ok(out)
}

/// Estimates the number of workers in one CSI session.
pub fn estimate_count(
    frames: &[RawFrame],
    config: &CountingConfig,
) -> Result<CountEstimate, CountingError> {
    if frames.is_empty() {
        return Err(CountingError::EmptyInput);
    }
    let span_ms = frames
        .last()
        .unwrap()
        .at
        .millis()
        .saturating_sub(frames[0].at.millis());
    if span_ms < config.min_session_ms {
        return Err(CountingError::TooShort {
            len: span_ms as usize,
            min: config.min_session_ms as usize,
        });
    }

    let centered = remove_static_component(frames)?;
    let streams = beam_scan(&centered, &config.scan_angles)?;
    let summaries: Vec<StreamSummary> = streams
        .iter()
        .map(|s| {
            let v = s.variance();
            StreamSummary {
                angle_rad: s.steering_angle,
                power_variance: v,
                active: v > config.activity_threshold,
            }
        })
        .collect();
    let active: Vec<&SpatialStream> = streams
        .iter()
        .zip(&summaries)
        .filter(|(_, s)| s.active)
        .map(|(s, _)| s)
        .collect();

    if active.is_empty() {
        return Ok(CountEstimate {
            count: 0,
            streams: summaries,
            cluster_of_source: Vec::new(),
            cluster_activity: Vec::new(),
            separation_converged: true,
        });
    }

    let stream_rows: Vec<Vec<f64>> = active.iter().map(|s| s.samples.clone()).collect();
    let mut wanted = config.max_count.min(stream_rows.len()).max(1);
    let mut separation = None;
    let mut converged = true;
    loop {
        match jade_separate(&stream_rows, wanted) {
            Ok(sep) => {
                separation = Some(sep);
                break;
            }
            Err(CountingError::RankDeficient { rank, .. }) if rank >= 1 => {
                wanted = rank;
            }
            Err(CountingError::NonConvergence { .. }) => {
                converged = false;
                break;
            }
            Err(e) => return Err(e),
        }
    }

    // Sources to cluster: separated components, or the gated streams
    // themselves when separation was not possible.
    let (series, activity): (Vec<Vec<f64>>, Vec<f64>) = match &separation {
        Some(sep) => (
            sep.sources.clone(),
            (0..sep.sources.len())
                .map(|j| sep.mixing.column(j).norm_squared())
                .collect(),
        ),
        None => (
            stream_rows.clone(),
            active.iter().map(|s| s.variance()).collect(),
        ),
    };

    let compact: Vec<Vec<f64>> = series
        .iter()
        .map(|s| block_average(s, config.dtw_series_len))
        .collect();
    let cluster_of_source = if compact.len() == 1 {
        vec![0]
    } else {
        let normalized: Vec<Vec<f64>> = compact
            .iter()
            .map(|s| {
                let n = s.len() as f64;
                let mean = s.iter().sum::<f64>() / n;
                let sd = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
                    .sqrt()
                    .max(1e-12);
                s.iter().map(|v| (v - mean) / sd).collect()
            })
            .collect();
        let d = build_distance_matrix(&normalized, config.dtw_window_frac)?;
        hac_cluster(&d, config.linkage, config.hac_cut)
    };

    let n_clusters = cluster_of_source.iter().copied().max().unwrap_or(0) + 1;
    let mut cluster_activity = vec![0.0; n_clusters];
    for (src, &cl) in cluster_of_source.iter().enumerate() {
        cluster_activity[cl] += activity[src];
    }
    let max_activity = cluster_activity.iter().copied().fold(0.0, f64::max);
    let occupied = cluster_activity
        .iter()
        .filter(|&&a| a >= config.occupancy_fraction * max_activity && a > 0.0)
        .count();

    Ok(CountEstimate {
        count: occupied.min(config.max_count),
        streams: summaries,
        cluster_of_source,
        cluster_activity,
        separation_converged: converged,
    })
}

/// KL divergence of each stream against its neighbors (max over the
/// adjacent streams), the per-stream occupancy profile.
pub fn stream_pair_kl(streams: &[SpatialStream], bins: usize) -> Result<Vec<f64>, CountingError> {
    if streams.len() < 2 {
        return Err(CountingError::TooFewSamples {
            got: streams.len(),
            min: 2,
        });
    }
    let mut out = Vec::with_capacity(streams.len());
    for i in 0..streams.len() {
        let mut best: f64 = 0.0;
        if i > 0 {
            best = best.max(kl_divergence(
                &streams[i].samples,
                &streams[i - 1].samples,
                bins,
            )?);
        }
        if i + 1 < streams.len() {
            best = best.max(kl_divergence(
                &streams[i].samples,
                &streams[i + 1].samples,
                bins,
            )?);
        }
        out.push(best);
    }
    Ok(out)
}

/// Demotes predicted-occupied streams that correlate above the threshold
/// with a strictly stronger occupied neighbor (leakage false positives).
/// All demotions are judged against the original predictions, so two
/// genuinely occupied correlated streams cannot annihilate each other.
pub fn false_positive_filter(
    streams: &[SpatialStream],
    predictions: &[bool],
    corr_threshold: f64,
) -> Vec<bool> {
    let n = streams.len().min(predictions.len());
    let mut out = predictions.to_vec();
    for i in 0..n {
        if !predictions[i] {
            continue;
        }
        let power_i = streams[i].variance();
        let neighbors = [i.checked_sub(1), (i + 1 < n).then_some(i + 1)];
        for j in neighbors.into_iter().flatten() {
            if !predictions[j] {
                continue;
            }
            let corr = abs_correlation(&streams[i].samples, &streams[j].samples);
            if corr > corr_threshold && streams[j].variance() > power_i {
                out[i] = false;
                break;
            }
        }
    }
    out
}

/// Aggregate confusion matrix over sessions as CSV (rows = actual count,
/// columns = estimated count).
pub fn count_confusion_csv(pairs: &[(usize, usize)], max_count: usize) -> String {
    let k = max_count + 1;
    let mut counts = vec![0u64; k * k];
    for &(actual, estimated) in pairs {
        let a = actual.min(max_count);
        let e = estimated.min(max_count);
        counts[a * k + e] += 1;
    }
    let mut out = String::from("actual");
    for e in 0..k {
        out.push_str(&format!(",est_{e}"));
    }
    out.push('\n');
    for a in 0..k {
        out.push_str(&a.to_string());
        for e in 0..k {
            out.push_str(&format!(",{}", counts[a * k + e]));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn false_positive_filter_rules() {
        let strong = SpatialStream {
            steering_angle: 0.0,
            samples: (0..100).map(|i| (i as f64 * 0.2).sin() * 2.0).collect(),
        };
        let weak_copy = SpatialStream {
            steering_angle: 0.1,
            samples: (0..100).map(|i| (i as f64 * 0.2).sin()).collect(),
        };
        // Perfectly correlated neighbors, one stronger: weaker demoted.
        let out = false_positive_filter(&[strong.clone(), weak_copy.clone()], &[true, true], 0.9);
        assert_eq!(out, vec![true, false]);

        // Uncorrelated occupied neighbors: unchanged.
        let other = SpatialStream {
            steering_angle: 0.1,
            samples: (0..100).map(|i| ((i * i) as f64 * 0.37).cos()).collect(),
        };
        let out = false_positive_filter(&[strong.clone(), other], &[true, true], 0.9);
        assert_eq!(out, vec![true, true]);

        // Unoccupied neighbors never demote.
        let out = false_positive_filter(&[strong, weak_copy], &[false, true], 0.9);
        assert_eq!(out, vec![false, true]);
    }

    #[test]
    fn confusion_csv_layout() {
        let csv = count_confusion_csv(&[(0, 0), (1, 1), (1, 2), (3, 3)], 4);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "actual,est_0,est_1,est_2,est_3,est_4");
        assert_eq!(lines[1], "0,1,0,0,0,0");
        assert_eq!(lines[2], "1,0,1,1,0,0");
        assert_eq!(lines[4], "3,0,0,0,1,0");
    }
}
