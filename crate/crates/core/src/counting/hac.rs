//! Pairwise cDDTW distance matrices and hierarchical agglomerative
//! clustering with a distance cut.

use serde::{Deserialize, Serialize};

use super::dtw::cddtw_distance;
use super::CountingError;

/// Symmetric, zero-diagonal, non-negative distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(n: usize, d: Vec<f64>) -> Result<Self, CountingError> {
        if n == 0 || d.len() != n * n {
            return Err(CountingError::DimensionMismatch(format!(
                "{} entries for a {n}x{n} matrix",
                d.len()
            )));
        }
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(CountingError::InvalidConfig("nonzero diagonal".into()));
            }
            for j in 0..n {
                let v = d[i * n + j];
                if v < 0.0 || !v.is_finite() {
                    return Err(CountingError::InvalidConfig("negative or non-finite distance".into()));
                }
                if (v - d[j * n + i]).abs() > 1e-9 {
                    return Err(CountingError::InvalidConfig(format!(
                        "asymmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(DistanceMatrix { n, d })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

/// Pairwise cDDTW over the given series.
pub fn build_distance_matrix(
    series: &[Vec<f64>],
    window_frac: f64,
) -> Result<DistanceMatrix, CountingError> {
    let n = series.len();
    if n < 2 {
        return Err(CountingError::TooFewSamples { got: n, min: 2 });
    }
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = cddtw_distance(&series[i], &series[j], window_frac)?;
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    DistanceMatrix::new(n, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    Single,
    #[default]
    Average,
    Complete,
}

fn linkage_distance(d: &DistanceMatrix, a: &[usize], b: &[usize], linkage: Linkage) -> f64 {
    let mut acc = match linkage {
        Linkage::Single => f64::INFINITY,
        Linkage::Complete => f64::NEG_INFINITY,
        Linkage::Average => 0.0,
    };
    for &i in a {
        for &j in b {
            let v = d.get(i, j);
            match linkage {
                Linkage::Single => acc = acc.min(v),
                Linkage::Complete => acc = acc.max(v),
                Linkage::Average => acc += v,
            }
        }
    }
    if linkage == Linkage::Average {
        acc / (a.len() * b.len()) as f64
    } else {
        acc
    }
}

/// Agglomerative clustering: merge while the minimum inter-cluster linkage
/// distance is at most `cut`. Ties break on the lowest pair of cluster
/// representatives (smallest member indices). Returns one cluster id per
/// input index; ids are dense and ordered by each cluster's smallest
/// member.
pub fn hac_cluster(d: &DistanceMatrix, linkage: Linkage, cut: f64) -> Vec<usize> {
    let n = d.len();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    loop {
        if clusters.len() < 2 {
            break;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let dist = linkage_distance(d, &clusters[a], &clusters[b], linkage);
                let candidate = (dist, clusters[a][0], clusters[b][0]);
                let better = match &best {
                    None => true,
                    Some((bd, ba, bb)) => {
                        dist < *bd - 1e-15
                            || ((dist - bd).abs() <= 1e-15
                                && (candidate.1, candidate.2) < (*ba, *bb))
                    }
                };
                if better {
                    best = Some((dist, clusters[a][0], clusters[b][0]));
                }
            }
        }
        let (dist, rep_a, rep_b) = best.expect("at least one pair");
        if dist > cut {
            break;
        }
        let ia = clusters.iter().position(|c| c[0] == rep_a).unwrap();
        let ib = clusters.iter().position(|c| c[0] == rep_b).unwrap();
        let merged = clusters.remove(ib.max(ia).max(ia.max(ib)));
        let keep = ia.min(ib);
        clusters[keep].extend(merged);
        clusters[keep].sort_unstable();
    }
    clusters.sort_by_key(|c| c[0]);
    let mut assignment = vec![0usize; n];
    for (id, members) in clusters.iter().enumerate() {
        for &m in members {
            assignment[m] = id;
        }
    }
    assignment
}
