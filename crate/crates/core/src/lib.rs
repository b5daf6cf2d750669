//! Multisensor data-fusion (MDF) edge-cloud platform.
//!
//! Simulated radio sensors (FMCW radar network, sub-THz camera, IR
//! thermopile arrays, multi-antenna CSI) feed per-pipeline micro-edge
//! stages that denoise raw frames and extract statistical features. A
//! cloud tier fuses the features per HRC function, classifies worker
//! position/activity, counts workers training-free from CSI spatial
//! streams, and turns measured accuracy and latency into an ISO/TS 15066
//! protective separation distance.
//!
//! Module map:
//! - [`types`]: shared identifiers, frames, timestamps, seeded RNG
//! - [`prep`]: per-pipeline background estimation and denoising
//! - [`features`]: statistical moments, 2D grids, min-max fusion
//! - [`transport`]: topics, in-process broker, TCP binding, capture files,
//!   latency instrumentation
//! - [`edge`]: micro-edge runtime and the cloud-driven data controller
//! - [`cloud`]: dataset split, reference classifier, confusion metrics
//! - [`counting`]: beam scanning, JADE, cDDTW, HAC, KL occupancy analysis
//! - [`safety`]: protective separation distance and the SSM monitor
//! - [`simgen`]: synthetic scenario and sensor-signal generators

pub mod cloud;
pub mod counting;
pub mod edge;
pub mod features;
pub mod prep;
pub mod safety;
pub mod simgen;
pub mod transport;
pub mod types;

pub use types::{make_rng, DenoisedFrame, PipelineId, RawFrame, SensorId, Timestamp};
