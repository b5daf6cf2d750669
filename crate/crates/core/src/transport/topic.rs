//! Topic paths and subscription filters.
//!
//! Grammar (all segments non-empty):
//! - `edge/<cell>/<pipeline>/<sensor>` — per-sensor telemetry; the
//!   pipeline segment parses to a pipeline index 1..=4, the sensor to a
//!   positive integer;
//! - `edge/<cell>/errors` — dead-letter stream;
//! - `edge/<cell>/fused/<function>` — fused classifier inputs;
//! - `cloud/<cell>/<function>` — results, `ssm` commands, or `controller`
//!   feedback.
//!
//! Filters use `+` as a single-segment wildcard.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::TransportError;
use crate::types::PipelineId;

pub(crate) const FUNCTION_SEGMENTS: [&str; 3] = ["counting", "motion", "copresence"];
const CLOUD_SEGMENTS: [&str; 5] = ["counting", "motion", "copresence", "ssm", "controller"];

fn bad(topic: &str, reason: &str) -> TransportError {
    TransportError::BadTopic {
        topic: topic.to_string(),
        reason: reason.to_string(),
    }
}

fn valid_cell(seg: &str) -> bool {
    !seg.is_empty() && !seg.contains(['+', '#']) && !seg.chars().any(char::is_whitespace)
}

/// A validated topic path.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Topic(String);

impl Topic {
    pub fn parse(path: &str) -> Result<Self, TransportError> {
        let segments: Vec<&str> = path.split('/').collect();
        if segments.iter().any(|s| s.is_empty()) {
            return Err(bad(path, "empty segment"));
        }
        match segments.as_slice() {
            ["edge", cell, "errors"] if valid_cell(cell) => Ok(()),
            ["edge", cell, "fused", function]
                if valid_cell(cell) && FUNCTION_SEGMENTS.contains(function) =>
            {
                Ok(())
            }
            ["edge", cell, pipeline, sensor] if valid_cell(cell) => {
                let idx: u32 = pipeline
                    .parse()
                    .map_err(|_| bad(path, "pipeline segment is not an index"))?;
                PipelineId::from_index(idx).map_err(|_| bad(path, "pipeline index outside 1..=4"))?;
                let k: u32 = sensor
                    .parse()
                    .map_err(|_| bad(path, "sensor segment is not an index"))?;
                if k == 0 {
                    return Err(bad(path, "sensor index must be positive"));
                }
                Ok(())
            }
            ["cloud", cell, function] if valid_cell(cell) && CLOUD_SEGMENTS.contains(function) => {
                Ok(())
            }
            _ => Err(bad(path, "unrecognized topic shape")),
        }?;
        Ok(Topic(path.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.0.split('/')
    }

    pub fn edge_sensor(cell: &str, pipeline: PipelineId, sensor: u32) -> Result<Self, TransportError> {
        Topic::parse(&format!("edge/{cell}/{}/{sensor}", pipeline.index()))
    }

    pub fn edge_errors(cell: &str) -> Result<Self, TransportError> {
        Topic::parse(&format!("edge/{cell}/errors"))
    }

    pub fn edge_fused(cell: &str, function: &str) -> Result<Self, TransportError> {
        Topic::parse(&format!("edge/{cell}/fused/{function}"))
    }

    pub fn cloud(cell: &str, function: &str) -> Result<Self, TransportError> {
        Topic::parse(&format!("cloud/{cell}/{function}"))
    }
}

impl std::fmt::Display for Topic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for Topic {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Topic {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Topic::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Subscription filter: literal segments plus `+` single-segment
/// wildcards. A filter matches topics with the same segment count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicFilter {
    segments: Vec<String>,
}

impl TopicFilter {
    pub fn parse(filter: &str) -> Result<Self, TransportError> {
        let segments: Vec<&str> = filter.split('/').collect();
        if segments.is_empty() || segments.iter().any(|s| s.is_empty()) {
            return Err(TransportError::BadFilter {
                filter: filter.to_string(),
                reason: "empty segment".to_string(),
            });
        }
        for s in &segments {
            if s.contains('+') && *s != "+" {
                return Err(TransportError::BadFilter {
                    filter: filter.to_string(),
                    reason: "wildcard must stand alone in its segment".to_string(),
                });
            }
        }
        Ok(TopicFilter {
            segments: segments.into_iter().map(str::to_string).collect(),
        })
    }

    pub fn matches(&self, topic: &Topic) -> bool {
        let topic_segments: Vec<&str> = topic.segments().collect();
        topic_segments.len() == self.segments.len()
            && self
                .segments
                .iter()
                .zip(&topic_segments)
                .all(|(f, t)| f == "+" || f == t)
    }
}

impl std::fmt::Display for TopicFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.segments.join("/"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topic_shapes() {
        assert!(Topic::parse("edge/c1/1/3").is_ok());
        assert!(Topic::parse("edge/c1/errors").is_ok());
        assert!(Topic::parse("edge/c1/fused/motion").is_ok());
        assert!(Topic::parse("cloud/c1/copresence").is_ok());
        assert!(Topic::parse("cloud/c1/ssm").is_ok());
        assert!(Topic::parse("cloud/c1/controller").is_ok());

        assert!(Topic::parse("edge/c1/5/3").is_err(), "pipeline out of range");
        assert!(Topic::parse("edge/c1/0/3").is_err());
        assert!(Topic::parse("edge/c1/1/0").is_err(), "sensor must be positive");
        assert!(Topic::parse("edge//1/3").is_err(), "empty cell");
        assert!(Topic::parse("cloud/c1/unknown").is_err());
        assert!(Topic::parse("other/c1/1/1").is_err());
    }

    #[test]
    fn filter_matching() {
        let t = Topic::parse("edge/c1/1/3").unwrap();
        assert!(TopicFilter::parse("edge/c1/1/+").unwrap().matches(&t));
        assert!(!TopicFilter::parse("edge/c1/2/+").unwrap().matches(&t));
        assert!(TopicFilter::parse("+/+/+/+").unwrap().matches(&t));
        assert!(!TopicFilter::parse("+/+/+").unwrap().matches(&t));
        let fused = Topic::parse("edge/c1/fused/motion").unwrap();
        assert!(TopicFilter::parse("edge/c1/fused/+").unwrap().matches(&fused));
    }

    #[test]
    fn filter_validation() {
        assert!(TopicFilter::parse("edge//1").is_err());
        assert!(TopicFilter::parse("edge/c+1/1").is_err());
        assert!(TopicFilter::parse("+").is_ok());
    }
}
