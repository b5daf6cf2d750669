//! End-to-end latency instrumentation: the detection latency of one window
//! is the interval between the pre-processing of the first raw frame that
//! entered the window (edge side) and the classification of the fused
//! features (cloud side).

use super::TransportError;
use crate::types::Timestamp;

/// Latency between an ingestion stamp and a classification stamp, ms.
pub fn measure_latency(ingestion: Timestamp, classified: Timestamp) -> Result<u64, TransportError> {
    if classified < ingestion {
        return Err(TransportError::ClockSkew {
            ingestion: ingestion.millis(),
            classified: classified.millis(),
        });
    }
    Ok(classified.millis() - ingestion.millis())
}

/// Latency summary: count, mean, nearest-rank p50/p95, max (all ms).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    pub fn empty() -> Self {
        LatencyStats {
            count: 0,
            mean_ms: 0.0,
            p50_ms: 0.0,
            p95_ms: 0.0,
            max_ms: 0.0,
        }
    }
}

/// Collects per-window latency samples for one HRC function.
#[derive(Debug, Clone, Default)]
pub struct LatencyHistogram {
    samples_ms: Vec<f64>,
}

impl LatencyHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a wall-clock pair (fractional ms). Classification must not
    /// precede ingestion.
    pub fn record_pair(&mut self, ingest_ms: f64, classified_ms: f64) -> Result<f64, TransportError> {
        if classified_ms < ingest_ms {
            return Err(TransportError::ClockSkew {
                ingestion: ingest_ms.round() as u64,
                classified: classified_ms.round() as u64,
            });
        }
        let latency = classified_ms - ingest_ms;
        self.samples_ms.push(latency);
        Ok(latency)
    }

    pub fn record(&mut self, latency_ms: f64) {
        self.samples_ms.push(latency_ms.max(0.0));
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples_ms
    }

    pub fn stats(&self) -> LatencyStats {
        if self.samples_ms.is_empty() {
            return LatencyStats::empty();
        }
        let mut sorted = self.samples_ms.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len();
        let rank = |p: f64| -> f64 {
            let idx = ((p * n as f64).ceil() as usize).clamp(1, n) - 1;
            sorted[idx]
        };
        LatencyStats {
            count: n,
            mean_ms: self.samples_ms.iter().sum::<f64>() / n as f64,
            p50_ms: rank(0.50),
            p95_ms: rank(0.95),
            max_ms: sorted[n - 1],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_pair() {
        assert_eq!(measure_latency(Timestamp(1000), Timestamp(1037)).unwrap(), 37);
        assert_eq!(measure_latency(Timestamp(0), Timestamp(0)).unwrap(), 0);
        assert!(matches!(
            measure_latency(Timestamp(5), Timestamp(3)),
            Err(TransportError::ClockSkew {
                ingestion: 5,
                classified: 3
            })
        ));
    }

    #[test]
    fn histogram_stats() {
        let mut h = LatencyHistogram::new();
        for v in [10.0, 20.0, 30.0, 40.0, 100.0] {
            h.record(v);
        }
        let s = h.stats();
        assert_eq!(s.count, 5);
        assert!((s.mean_ms - 40.0).abs() < 1e-12);
        assert_eq!(s.p50_ms, 30.0);
        assert_eq!(s.p95_ms, 100.0);
        assert_eq!(s.max_ms, 100.0);
    }

    #[test]
    fn histogram_pair_skew() {
        let mut h = LatencyHistogram::new();
        assert!(h.record_pair(10.0, 5.0).is_err());
        assert_eq!(h.record_pair(10.0, 47.0).unwrap(), 37.0);
        assert_eq!(h.stats().count, 1);
    }

    #[test]
    fn empty_histogram() {
        assert_eq!(LatencyHistogram::new().stats(), LatencyStats::empty());
    }
}
