//! Constrained derivative dynamic time warping.
//!
//! Series are first mapped to derivative estimates (average of the
//! one-step slope and the two-step centered slope, endpoints replicated),
//! which makes the distance invariant to constant offsets. Alignment runs
//! under a Sakoe-Chiba band with squared-difference cell cost; the
//! accumulated cost at the final cell is the distance.

use super::CountingError;

/// Derivative estimate: `d[i] = ((x[i]-x[i-1]) + (x[i+1]-x[i-1])/2) / 2`
/// with endpoints replicated from their neighbors.
pub fn derivative(series: &[f64]) -> Vec<f64> {
    let n = series.len();
    debug_assert!(n >= 3);
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = ((series[i] - series[i - 1]) + (series[i + 1] - series[i - 1]) / 2.0) / 2.0;
    }
    d[0] = d[1];
    d[n - 1] = d[n - 2];
    d
}

/// cDDTW distance between two series. `window_frac` in (0, 1] sets the
/// Sakoe-Chiba half-width as `ceil(window_frac * max(len))`, widened to
/// the length difference so the end cell stays reachable.
pub fn cddtw_distance(a: &[f64], b: &[f64], window_frac: f64) -> Result<f64, CountingError> {
    if a.len() < 3 || b.len() < 3 {
        return Err(CountingError::TooShort {
            len: a.len().min(b.len()),
            min: 3,
        });
    }
    if !(window_frac > 0.0 && window_frac <= 1.0) {
        return Err(CountingError::InvalidConfig(format!(
            "window_frac {window_frac} outside (0, 1]"
        )));
    }
    let da = derivative(a);
    let db = derivative(b);
    let (la, lb) = (da.len(), db.len());
    let band = ((window_frac * la.max(lb) as f64).ceil() as usize).max(la.abs_diff(lb));

    let inf = f64::INFINITY;
    let mut prev = vec![inf; lb + 1];
    let mut curr = vec![inf; lb + 1];
    prev[0] = 0.0;
    for i in 1..=la {
        curr.fill(inf);
        let lo = i.saturating_sub(band).max(1);
        let hi = (i + band).min(lb);
        for j in lo..=hi {
            let cost = (da[i - 1] - db[j - 1]).powi(2);
            let best = prev[j - 1].min(prev[j]).min(curr[j - 1]);
            curr[j] = cost + best;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    Ok(prev[lb])
}
