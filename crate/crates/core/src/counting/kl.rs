//! KL divergence between sample sets via smoothed histograms.

use super::CountingError;

pub const MIN_KL_SAMPLES: usize = 30;

/// Histograms both sample sets over the union range with `bins`
/// equal-width bins, applies add-one (Laplace) smoothing, and returns
/// `sum p * ln(p/q)` in nats. Always non-negative; zero (within the
/// smoothing error) iff both multisets induce identical histograms.
pub fn kl_divergence(
    p_samples: &[f64],
    q_samples: &[f64],
    bins: usize,
) -> Result<f64, CountingError> {
    if p_samples.len() < MIN_KL_SAMPLES || q_samples.len() < MIN_KL_SAMPLES {
        return Err(CountingError::TooFewSamples {
            got: p_samples.len().min(q_samples.len()),
            min: MIN_KL_SAMPLES,
        });
    }
    if bins == 0 {
        return Err(CountingError::InvalidConfig("zero histogram bins".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in p_samples.iter().chain(q_samples) {
        if !v.is_finite() {
            return Err(CountingError::InvalidConfig("non-finite sample".into()));
        }
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let span = hi - lo;
    if span <= 0.0 {
        // All samples identical: identical histograms, zero divergence.
        return Ok(0.0);
    }
    let bin_of = |v: f64| -> usize {
        let idx = ((v - lo) / span * bins as f64) as usize;
        idx.min(bins - 1)
    };
    let mut p_counts = vec![0u64; bins];
    let mut q_counts = vec![0u64; bins];
    for v in p_samples {
        p_counts[bin_of(*v)] += 1;
    }
    for v in q_samples {
        q_counts[bin_of(*v)] += 1;
    }
    let p_total = (p_samples.len() + bins) as f64;
    let q_total = (q_samples.len() + bins) as f64;
    let mut kl = 0.0;
    for (pc, qc) in p_counts.iter().zip(&q_counts) {
        let p = (pc + 1) as f64 / p_total;
        let q = (qc + 1) as f64 / q_total;
        kl += p * (p / q).ln();
    }
    Ok(kl.max(0.0))
}

/// Occupancy decision threshold from empty-room divergences:
/// mean + 3 * deviation (population).
pub fn calibrate_kl_threshold(empty_divergences: &[f64]) -> f64 {
    if empty_divergences.is_empty() {
        return 0.0;
    }
    let n = empty_divergences.len() as f64;
    let mean = empty_divergences.iter().sum::<f64>() / n;
    let var = empty_divergences
        .iter()
        .map(|v| (v - mean).powi(2))
        .sum::<f64>()
        / n;
    mean + 3.0 * var.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::make_rng;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn identical_sets_are_zero_within_smoothing() {
        let mut rng = make_rng(10);
        let samples: Vec<f64> = (0..500).map(|_| rng.random_range(0.0..1.0)).collect();
        let kl = kl_divergence(&samples, &samples, 20).unwrap();
        assert!(kl <= 0.01, "kl {kl}");
    }

    #[test]
    fn gaussian_shift_matches_closed_form() {
        // KL(N(0,1) || N(1,1)) = (mu1-mu2)^2 / 2 = 0.5 nats.
        let normal0 = Normal::new(0.0, 1.0).unwrap();
        let normal1 = Normal::new(1.0, 1.0).unwrap();
        let mut rng = make_rng(2025);
        let p: Vec<f64> = (0..10_000).map(|_| normal0.sample(&mut rng)).collect();
        let q: Vec<f64> = (0..10_000).map(|_| normal1.sample(&mut rng)).collect();
        let kl = kl_divergence(&p, &q, 50).unwrap();
        assert!((kl - 0.5).abs() < 0.1, "kl {kl}");
    }

    #[test]
    fn non_negative_on_random_inputs() {
        let mut rng = make_rng(3);
        for _ in 0..50 {
            let p: Vec<f64> = (0..200).map(|_| rng.random_range(-2.0..2.0)).collect();
            let q: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..3.0)).collect();
            let bins = rng.random_range(5..60);
            let kl = kl_divergence(&p, &q, bins).unwrap();
            assert!(kl >= 0.0);
        }
    }

    #[test]
    fn too_few_samples() {
        let a = vec![0.0; 29];
        let b = vec![0.0; 100];
        assert!(matches!(
            kl_divergence(&a, &b, 10),
            Err(CountingError::TooFewSamples { got: 29, min: 30 })
        ));
    }

    #[test]
    fn threshold_is_mean_plus_three_sigma() {
        let divergences = [0.1, 0.2, 0.3];
        let mean = 0.2;
        let std = (((0.01f64) + 0.0 + 0.01) / 3.0).sqrt();
        let t = calibrate_kl_threshold(&divergences);
        assert!((t - (mean + 3.0 * std)).abs() < 1e-12);
    }
}
