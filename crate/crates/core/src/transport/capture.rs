//! Capture files: one telemetry envelope per line, replayable into a
//! broker at original, scaled, or instant pacing.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use super::broker::Broker;
use super::{TelemetryMessage, TransportError};

pub struct CaptureWriter<W: Write> {
    out: BufWriter<W>,
    written: usize,
}

impl CaptureWriter<File> {
    pub fn create<P: AsRef<Path>>(path: P) -> Result<Self, TransportError> {
        Ok(Self::from_writer(File::create(path)?))
    }
}

impl<W: Write> CaptureWriter<W> {
    pub fn from_writer(w: W) -> Self {
        CaptureWriter {
            out: BufWriter::new(w),
            written: 0,
        }
    }

    pub fn write(&mut self, msg: &TelemetryMessage) -> Result<(), TransportError> {
        let line = serde_json::to_string(msg).map_err(|e| TransportError::Codec(e.to_string()))?;
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn finish(mut self) -> Result<(), TransportError> {
        self.out.flush()?;
        Ok(())
    }
}

/// Reads a whole capture file into memory, in file order.
pub fn read_capture<P: AsRef<Path>>(path: P) -> Result<Vec<TelemetryMessage>, TransportError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let msg: TelemetryMessage = serde_json::from_str(&line)
            .map_err(|e| TransportError::Codec(format!("line {}: {e}", lineno + 1)))?;
        out.push(msg);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayStats {
    pub published: usize,
    pub topics_registered: usize,
}

/// Publishes captured messages into a broker in capture order, registering
/// each topic with the kind first seen on it. `speed` of `None` replays as
/// fast as possible; `Some(s)` paces messages at `s`x the original
/// timestamp spacing.
pub fn replay_capture(
    messages: &[TelemetryMessage],
    broker: &Broker,
    speed: Option<f64>,
) -> Result<ReplayStats, TransportError> {
    let mut registered = 0usize;
    let t0 = messages.first().map(|m| m.published_at_ms).unwrap_or(0.0);
    let start = std::time::Instant::now();
    for msg in messages {
        if broker.registered_kind(&msg.topic).is_none() {
            broker.register(&msg.topic, msg.kind)?;
            registered += 1;
        }
        if let Some(s) = speed {
            let offset_ms = (msg.published_at_ms - t0).max(0.0) / s.max(1e-9);
            let due = Duration::from_micros((offset_ms * 1000.0) as u64);
            let elapsed = start.elapsed();
            if due > elapsed {
                std::thread::sleep(due - elapsed);
            }
        }
        broker.publish(msg.clone())?;
    }
    Ok(ReplayStats {
        published: messages.len(),
        topics_registered: registered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{MessageKind, Topic};
    use crate::types::{PipelineId, RawFrame, SensorId, Timestamp};

    #[test]
    fn capture_roundtrip_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("capture.jsonl");
        let topic = Topic::parse("edge/c1/3/1").unwrap();
        let mut writer = CaptureWriter::create(&path).unwrap();
        let mut originals = Vec::new();
        for t in 0..5u64 {
            let frame = RawFrame::new(
                SensorId::new(PipelineId::IrArray, 1).unwrap(),
                Timestamp(t),
                vec![t as f64 * 0.5; 64],
            )
            .unwrap();
            let msg =
                TelemetryMessage::new(topic.clone(), t as f64, MessageKind::RawFrame, &frame)
                    .unwrap();
            writer.write(&msg).unwrap();
            originals.push(msg);
        }
        writer.finish().unwrap();

        let loaded = read_capture(&path).unwrap();
        assert_eq!(loaded, originals);

        let broker = Broker::new();
        let sub = {
            let _ = broker; // subscription must exist before replay
            broker.subscribe("edge/c1/3/1").unwrap()
        };
        let stats = replay_capture(&loaded, &broker, None).unwrap();
        assert_eq!(stats.published, 5);
        assert_eq!(stats.topics_registered, 1);
        for expect in &originals {
            assert_eq!(&sub.recv().unwrap(), expect);
        }
    }
}
