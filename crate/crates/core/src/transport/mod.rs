//! Telemetry transport: JSON schemas, an in-process publish/subscribe
//! broker with retained messages, a newline-delimited-JSON TCP binding,
//! capture/replay files, and end-to-end latency instrumentation.
//!
//! Every message travels as one envelope:
//! `{"topic","t_ms","kind","payload"}` where `t_ms` is wall-clock
//! milliseconds (fractional, microsecond resolution) and `payload` is the
//! JSON document registered for the topic's kind.
//!
//! Delivery is at-most-once in-process (bounded queues, drop-oldest by
//! default) and at-least-once over TCP (ack plus a single retry), so
//! downstream consumers must tolerate duplicates.

mod broker;
mod capture;
mod latency;
mod tcp;
mod topic;

pub use broker::{Broker, OverflowPolicy, PublishAck, Subscription};
pub use capture::{read_capture, replay_capture, CaptureWriter, ReplayStats};
pub use latency::{measure_latency, LatencyHistogram, LatencyStats};
pub use tcp::{TcpBrokerClient, TcpBrokerServer, TcpSubscription};
pub use topic::{Topic, TopicFilter};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureGrid, FeatureVector};
use crate::safety::SsmCommand;
use crate::types::{RawFrame, Timestamp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("topic {0} is not registered")]
    UnknownTopic(String),
    #[error("invalid topic {topic}: {reason}")]
    BadTopic { topic: String, reason: String },
    #[error("invalid filter {filter}: {reason}")]
    BadFilter { filter: String, reason: String },
    #[error("no retained message on topic {0}")]
    NotFound(String),
    #[error("classified timestamp {classified} ms precedes ingestion {ingestion} ms")]
    ClockSkew { ingestion: u64, classified: u64 },
    #[error("payload does not match schema for kind {kind:?}: {reason}")]
    SchemaViolation { kind: MessageKind, reason: String },
    #[error("topic {topic} already registered with kind {registered:?}")]
    KindMismatch {
        topic: String,
        registered: MessageKind,
    },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("codec error: {0}")]
    Codec(String),
    #[error("request timed out waiting for broker ack")]
    AckTimeout,
}

impl From<std::io::Error> for TransportError {
    fn from(e: std::io::Error) -> Self {
        TransportError::Io(e.to_string())
    }
}

/// Message classes carried by the platform; each has a fixed payload
/// schema that the broker validates on publish.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    RawFrame,
    Feature,
    FusedGrid,
    Classification,
    Error,
    Controller,
    Ssm,
}

/// Fused classifier input published by the edge on
/// `edge/<cell>/fused/<function>`. `ingest_wall_ms` is the wall-clock
/// stamp of the first pre-processed frame that entered the window, the
/// anchor for end-to-end latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedGridMsg {
    pub function: String,
    pub ingest_wall_ms: f64,
    pub grid: FeatureGrid,
}

/// Classification result pushed back by the cloud on
/// `cloud/<cell>/<function>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMsg {
    pub function: String,
    pub window_end_ms: Timestamp,
    pub class: usize,
    pub label: String,
    pub probs: Vec<f64>,
    /// Measured detection latency for this window, ms.
    pub latency_ms: f64,
}

/// Dead-letter record published on `edge/<cell>/errors`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMsg {
    pub t_ms: Timestamp,
    pub pipeline: Option<u32>,
    pub sensor: Option<u32>,
    pub error: String,
}

/// Data-controller feedback published on `cloud/<cell>/controller`:
/// replaces the pipeline subset feeding one HRC function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerMsg {
    pub function: String,
    pub pipelines: Vec<u32>,
}

/// One telemetry envelope: `{"topic","t_ms","kind","payload"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryMessage {
    pub topic: Topic,
    /// Wall-clock publish stamp, fractional milliseconds.
    #[serde(rename = "t_ms")]
    pub published_at_ms: f64,
    pub kind: MessageKind,
    pub payload: serde_json::Value,
}

impl TelemetryMessage {
    pub fn new<T: Serialize>(
        topic: Topic,
        published_at_ms: f64,
        kind: MessageKind,
        payload: &T,
    ) -> Result<Self, TransportError> {
        let payload = serde_json::to_value(payload).map_err(|e| TransportError::Codec(e.to_string()))?;
        Ok(TelemetryMessage {
            topic,
            published_at_ms,
            kind,
            payload,
        })
    }

    pub fn decode_payload<T: for<'de> Deserialize<'de>>(&self) -> Result<T, TransportError> {
        serde_json::from_value(self.payload.clone()).map_err(|e| TransportError::SchemaViolation {
            kind: self.kind,
            reason: e.to_string(),
        })
    }
}

/// Checks that a payload parses as its kind's schema.
pub fn validate_payload(kind: MessageKind, payload: &serde_json::Value) -> Result<(), TransportError> {
    let check = |r: Result<(), serde_json::Error>| {
        r.map_err(|e| TransportError::SchemaViolation {
            kind,
            reason: e.to_string(),
        })
    };
    match kind {
        MessageKind::RawFrame => check(serde_json::from_value::<RawFrame>(payload.clone()).map(|_| ())),
        MessageKind::Feature => {
            check(serde_json::from_value::<FeatureVector>(payload.clone()).map(|_| ()))
        }
        MessageKind::FusedGrid => {
            check(serde_json::from_value::<FusedGridMsg>(payload.clone()).map(|_| ()))
        }
        MessageKind::Classification => {
            check(serde_json::from_value::<ClassificationMsg>(payload.clone()).map(|_| ()))
        }
        MessageKind::Error => check(serde_json::from_value::<ErrorMsg>(payload.clone()).map(|_| ())),
        MessageKind::Controller => {
            check(serde_json::from_value::<ControllerMsg>(payload.clone()).map(|_| ()))
        }
        MessageKind::Ssm => check(serde_json::from_value::<SsmCommand>(payload.clone()).map(|_| ())),
    }
}

/// Wall-clock source. Live deployments use [`SystemClock`]; replay and
/// determinism tests drive a [`ManualClock`] so runs are reproducible.
pub trait Clock: Send + Sync {
    /// Milliseconds (fractional) on this clock's timeline.
    fn now_ms(&self) -> f64;
}

/// Microsecond-resolution wall clock anchored at process start.
pub struct SystemClock {
    origin: std::time::Instant,
    epoch_ms: f64,
}

impl SystemClock {
    pub fn new() -> Self {
        let epoch_ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_micros() as f64 / 1000.0)
            .unwrap_or(0.0);
        SystemClock {
            origin: std::time::Instant::now(),
            epoch_ms,
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> f64 {
        self.epoch_ms + self.origin.elapsed().as_micros() as f64 / 1000.0
    }
}

/// Deterministic clock advanced by the driver (stores microseconds).
#[derive(Default)]
pub struct ManualClock {
    micros: AtomicU64,
}

impl ManualClock {
    pub fn new() -> Arc<Self> {
        Arc::new(ManualClock::default())
    }

    pub fn set_ms(&self, ms: f64) {
        self.micros.store((ms * 1000.0).round() as u64, Ordering::SeqCst);
    }

    pub fn advance_ms(&self, ms: f64) {
        self.micros
            .fetch_add((ms * 1000.0).round() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> f64 {
        self.micros.load(Ordering::SeqCst) as f64 / 1000.0
    }
}

impl<C: Clock + ?Sized> Clock for Arc<C> {
    fn now_ms(&self) -> f64 {
        (**self).now_ms()
    }
}
