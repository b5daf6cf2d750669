//! Training-free worker counting from multi-antenna CSI.
//!
//! The chain: beam scanning turns the antenna array into directional
//! spatial streams; activity gating keeps streams whose power fluctuates
//! above the noise floor; JADE blind source separation unmixes the
//! partially overlapping streams; a cDDTW distance matrix plus
//! hierarchical clustering groups the separated sources; clusters with
//! enough aggregate activity count as workers, capped by the antenna
//! count. A KL-divergence profile over neighboring streams and a
//! correlation-based false-positive filter support the occupancy analysis.

mod beam;
mod count;
mod dtw;
mod hac;
mod jade;
mod kl;

pub use beam::{beam_scan, steering_weights, SpatialStream};
pub use count::{
    count_confusion_csv, estimate_count, false_positive_filter, stream_pair_kl, CountEstimate,
    CountingConfig, SessionReport, StreamSummary,
};
pub use dtw::{cddtw_distance, derivative};
pub use hac::{build_distance_matrix, hac_cluster, DistanceMatrix, Linkage};
pub use jade::{jade_separate, JadeSeparation};
pub use kl::{calibrate_kl_threshold, kl_divergence};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CountingError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("covariance rank {rank} below requested {needed} sources")]
    RankDeficient { rank: usize, needed: usize },
    #[error("joint diagonalization did not converge (off-diagonal residual {residual:e})")]
    NonConvergence { residual: f64 },
    #[error("series of length {len} below minimum {min}")]
    TooShort { len: usize, min: usize },
    #[error("{got} samples below minimum {min}")]
    TooFewSamples { got: usize, min: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no input data")]
    EmptyInput,
}
