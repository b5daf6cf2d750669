//! Blind source separation by joint approximate diagonalization of
//! fourth-order cumulant matrices (real-valued JADE).
//!
//! Steps: center and whiten to the requested source count via the
//! eigendecomposition of the sample covariance, estimate the m(m+1)/2
//! parallel cumulant matrices of the whitened data, then jointly
//! diagonalize them with Givens rotations until the off-diagonal mass
//! stops decreasing (< 1e-9 per sweep) or 100 sweeps elapse. Recovered
//! sources are defined up to permutation, sign, and scale; components are
//! ordered by explained input energy with a deterministic sign fix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::CountingError;

pub const MAX_SWEEPS: usize = 100;
pub const OFFDIAG_DECREASE_TOL: f64 = 1e-9;
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct JadeSeparation {
    /// Recovered unit-variance sources, one per row (n_sources x T).
    pub sources: Vec<Vec<f64>>,
    /// Estimated mixing matrix (n_streams x n_sources): column j maps
    /// source j back onto the input streams.
    pub mixing: DMatrix<f64>,
    /// Unmixing matrix (n_sources x n_streams) applied to centered input.
    pub unmixing: DMatrix<f64>,
    pub sweeps: usize,
    pub offdiag_residual: f64,
}

fn offdiag_mass(cumulants: &[DMatrix<f64>]) -> f64 {
    let mut acc = 0.0;
    for a in cumulants {
        for r in 0..a.nrows() {
            for c in 0..a.ncols() {
                if r != c {
                    acc += a[(r, c)] * a[(r, c)];
                }
            }
        }
    }
    acc
}

/// Separates `n_sources` independent components from `streams` (one
/// stream per row, equal lengths, `T >= 10 * n_streams`).
pub fn jade_separate(
    streams: &[Vec<f64>],
    n_sources: usize,
) -> Result<JadeSeparation, CountingError> {
    let n = streams.len();
    if n == 0 || n_sources == 0 {
        return Err(CountingError::EmptyInput);
    }
    if n_sources > n {
        return Err(CountingError::InvalidConfig(format!(
            "{n_sources} sources from {n} streams"
        )));
    }
    let t = streams[0].len();
    if streams.iter().any(|s| s.len() != t) {
        return Err(CountingError::DimensionMismatch(
            "streams have unequal lengths".into(),
        ));
    }
    if t < 10 * n {
        return Err(CountingError::TooFewSamples { got: t, min: 10 * n });
    }

    // Center rows.
    let mut x = DMatrix::zeros(n, t);
    for (r, s) in streams.iter().enumerate() {
        let mean = s.iter().sum::<f64>() / t as f64;
        for (c, v) in s.iter().enumerate() {
            x[(r, c)] = v - mean;
        }
    }

    // Whiten to n_sources dimensions.
    let cov = &x * x.transpose() / t as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > RANK_TOL * lambda_max.max(RANK_TOL))
        .count();
    if rank < n_sources {
        return Err(CountingError::RankDeficient {
            rank,
            needed: n_sources,
        });
    }
    let m = n_sources;
    let mut whitener = DMatrix::zeros(m, n); // W: m x n
    let mut dewhitener = DMatrix::zeros(n, m); // W^+: n x m
    for (row, &idx) in order.iter().take(m).enumerate() {
        let lambda = eig.eigenvalues[idx];
        let scale = lambda.sqrt();
        for c in 0..n {
            let u = eig.eigenvectors[(c, idx)];
            whitener[(row, c)] = u / scale;
            dewhitener[(c, row)] = u * scale;
        }
    }
    let z = &whitener * &x; // m x T, identity covariance

    // Cumulant matrix set of the whitened data.
    let mut cumulants: Vec<DMatrix<f64>> = Vec::with_capacity(m * (m + 1) / 2);
    let scale = 1.0 / t as f64;
    for im in 0..m {
        for jm in 0..=im {
            let mut q = DMatrix::zeros(m, m);
            for col in 0..t {
                let w = z[(im, col)] * z[(jm, col)] * scale;
                let zcol = z.column(col);
                q.syger(w, &zcol, &zcol, 1.0);
            }
            for r in 0..m {
                for c in (r + 1)..m {
                    q[(r, c)] = q[(c, r)];
                }
            }
            if im == jm {
                for d in 0..m {
                    q[(d, d)] -= 1.0;
                }
                q[(im, im)] -= 2.0;
            } else {
                q[(im, jm)] -= 1.0;
                q[(jm, im)] -= 1.0;
                q *= std::f64::consts::SQRT_2;
            }
            cumulants.push(q);
        }
    }

    // Joint diagonalization by Givens rotations.
    let mut rotation = DMatrix::<f64>::identity(m, m);
    let mut prev_mass = offdiag_mass(&cumulants);
    let mut sweeps = 0usize;
    let mut converged = m < 2;
    while !converged && sweeps < MAX_SWEEPS {
        sweeps += 1;
        for p in 0..m - 1 {
            for q in p + 1..m {
                let mut g11 = 0.0;
                let mut g12 = 0.0;
                let mut g22 = 0.0;
                for a in &cumulants {
                    let h1 = a[(p, p)] - a[(q, q)];
                    let h2 = a[(p, q)] + a[(q, p)];
                    g11 += h1 * h1;
                    g12 += h1 * h2;
                    g22 += h2 * h2;
                }
                let ton = g11 - g22;
                let toff = 2.0 * g12;
                let theta = 0.5 * toff.atan2(ton + (ton * ton + toff * toff).sqrt());
                if theta.abs() < 1e-14 {
                    continue;
                }
                let (s, c) = theta.sin_cos();
                for a in cumulants.iter_mut() {
                    // Rows p,q: [c s; -s c] applied from the left.
                    for col in 0..m {
                        let ap = a[(p, col)];
                        let aq = a[(q, col)];
                        a[(p, col)] = c * ap + s * aq;
                        a[(q, col)] = -s * ap + c * aq;
                    }
                    // Columns p,q: rotation from the right.
                    for row in 0..m {
                        let ap = a[(row, p)];
                        let aq = a[(row, q)];
                        a[(row, p)] = c * ap + s * aq;
                        a[(row, q)] = -s * ap + c * aq;
                    }
                }
                for row in 0..m {
                    let vp = rotation[(row, p)];
                    let vq = rotation[(row, q)];
                    rotation[(row, p)] = c * vp + s * vq;
                    rotation[(row, q)] = -s * vp + c * vq;
                }
            }
        }
        let mass = offdiag_mass(&cumulants);
        if prev_mass - mass < OFFDIAG_DECREASE_TOL {
            converged = true;
        }
        prev_mass = mass;
    }
    if !converged {
        return Err(CountingError::NonConvergence {
            residual: prev_mass,
        });
    }

    let unmixing = rotation.transpose() * &whitener; // m x n
    let mut mixing = &dewhitener * &rotation; // n x m

    // Order components by explained energy (mixing column norm), fix the
    // sign so each column's largest-magnitude entry is positive.
    let mut idx: Vec<usize> = (0..m).collect();
    let energy: Vec<f64> = (0..m).map(|j| mixing.column(j).norm_squared()).collect();
    idx.sort_by(|&a, &b| energy[b].partial_cmp(&energy[a]).unwrap());
    let mut unmix_sorted = DMatrix::zeros(m, n);
    let mut mix_sorted = DMatrix::zeros(n, m);
    for (new_j, &old_j) in idx.iter().enumerate() {
        let col = mixing.column(old_j);
        let mut sign = 1.0;
        let mut best = 0.0;
        for v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                sign = if *v < 0.0 { -1.0 } else { 1.0 };
            }
        }
        for r in 0..n {
            mix_sorted[(r, new_j)] = mixing[(r, old_j)] * sign;
        }
        for c in 0..n {
            unmix_sorted[(new_j, c)] = unmixing[(old_j, c)] * sign;
        }
    }
    mixing = mix_sorted;

    let sources_matrix = &unmix_sorted * &x;
    let sources: Vec<Vec<f64>> = (0..m)
        .map(|r| sources_matrix.row(r).iter().copied().collect())
        .collect();

    Ok(JadeSeparation {
        sources,
        mixing,
        unmixing: unmix_sorted,
        sweeps,
        offdiag_residual: prev_mass,
    })
}

/// Absolute Pearson correlation between two equal-length series.
pub(crate) fn abs_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    if n < 2.0 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    (cov / (va * vb).sqrt()).abs()
}
