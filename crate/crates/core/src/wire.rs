//! Packet schema and topic names shared by publisher, sink and browser client.
//!
//! Packets are compact JSON objects with a fixed key order:
//! `{"seq":0,"t_sensor_ms":1000.000,"t_rms_ms":1000.500,"rms_mv":0.250000}`.
//! Timestamps carry three decimals and `rms_mv` six.

use serde_json::{Map, Value};
use thiserror::Error;

pub const DEFAULT_DATA_TOPIC: &str = "vrx/emg/rms";
pub const DEFAULT_CONTROL_TOPIC: &str = "vrx/ui/control";

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("payload is not a JSON object: {0}")]
    NotAnObject(String),
    #[error("missing key {0}")]
    MissingKey(&'static str),
    #[error("key {0} is not a number")]
    NotNumeric(&'static str),
    #[error("seq must be a non-negative integer")]
    BadSeq,
    #[error("rms_mv is negative ({0})")]
    NegativeRms(f64),
    #[error("invalid topic {0:?}")]
    InvalidTopic(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsPacket {
    pub seq: u64,
    pub t_sensor_ms: f64,
    pub t_rms_ms: f64,
    pub rms_mv: f64,
}

impl RmsPacket {
    /// The packet as it will look after a trip through the wire format.
    pub fn quantized(self) -> Self {
        Self {
            seq: self.seq,
            t_sensor_ms: round_to(self.t_sensor_ms, 3),
            t_rms_ms: round_to(self.t_rms_ms, 3),
            rms_mv: round_to(self.rms_mv, 6),
        }
    }
}

fn round_to(v: f64, decimals: usize) -> f64 {
    format!("{:.*}", decimals, v).parse().unwrap_or(v)
}

/// Canonical encoding. Deterministic: equal packets give equal bytes.
pub fn encode_packet(p: &RmsPacket) -> Vec<u8> {
    format!(
        "{{\"seq\":{},\"t_sensor_ms\":{:.3},\"t_rms_ms\":{:.3},\"rms_mv\":{:.6}}}",
        p.seq, p.t_sensor_ms, p.t_rms_ms, p.rms_mv
    )
    .into_bytes()
}

/// Tolerant decoder: any JSON object carrying the four keys; extra keys are ignored.
pub fn decode_packet(bytes: &[u8]) -> Result<RmsPacket, WireError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| WireError::NotAnObject(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| WireError::NotAnObject(value.to_string()))?;

    let seq = match obj.get("seq") {
        None => return Err(WireError::MissingKey("seq")),
        Some(v) if v.is_u64() => v.as_u64().unwrap(),
        Some(v) if v.is_number() => return Err(WireError::BadSeq),
        Some(_) => return Err(WireError::NotNumeric("seq")),
    };
    let t_sensor_ms = number(obj, "t_sensor_ms")?;
    let t_rms_ms = number(obj, "t_rms_ms")?;
    let rms_mv = number(obj, "rms_mv")?;
    if rms_mv < 0.0 {
        return Err(WireError::NegativeRms(rms_mv));
    }
    Ok(RmsPacket {
        seq,
        t_sensor_ms,
        t_rms_ms,
        rms_mv,
    })
}

fn number(obj: &Map<String, Value>, key: &'static str) -> Result<f64, WireError> {
    obj.get(key)
        .ok_or(WireError::MissingKey(key))?
        .as_f64()
        .ok_or(WireError::NotNumeric(key))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicMap {
    data_topic: String,
    control_topic: String,
}

impl TopicMap {
    pub fn new(data_topic: impl Into<String>, control_topic: impl Into<String>) -> Result<Self, WireError> {
        let map = Self {
            data_topic: data_topic.into(),
            control_topic: control_topic.into(),
        };
        for t in [&map.data_topic, &map.control_topic] {
            validate_topic(t)?;
        }
        Ok(map)
    }

    pub fn data_topic(&self) -> &str {
        &self.data_topic
    }

    pub fn control_topic(&self) -> &str {
        &self.control_topic
    }
}

impl Default for TopicMap {
    fn default() -> Self {
        Self {
            data_topic: DEFAULT_DATA_TOPIC.to_string(),
            control_topic: DEFAULT_CONTROL_TOPIC.to_string(),
        }
    }
}

pub fn validate_topic(topic: &str) -> Result<(), WireError> {
    if topic.is_empty() || topic.contains(['+', '#', '\0']) {
        return Err(WireError::InvalidTopic(topic.to_string()));
    }
    Ok(())
}
