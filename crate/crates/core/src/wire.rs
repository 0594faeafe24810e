//! Topic frame codec.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! version u8 | topic_len u16 | topic bytes | capture_ts u64 | payload_len u32 | payload
//! ```

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

pub const PROTOCOL_VERSION: u8 = 1;
pub const MAX_TOPIC_LEN: usize = 255;
pub const MAX_PAYLOAD_LEN: usize = 16 * 1024 * 1024;

/// version + topic length prefix.
pub const PREFIX_LEN: usize = 1 + 2;
/// capture_ts + payload length, following the topic bytes.
pub const MIDDLE_LEN: usize = 8 + 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("topic must not be empty")]
    EmptyTopic,
    #[error("topic is {0} bytes, limit is {MAX_TOPIC_LEN}")]
    TopicTooLong(usize),
    #[error("payload is {0} bytes, limit is {MAX_PAYLOAD_LEN}")]
    PayloadTooLarge(usize),
    #[error("unsupported protocol version {0}")]
    Version(u8),
    #[error("topic is not valid UTF-8")]
    TopicEncoding,
    #[error("frame truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("{0} trailing bytes after frame")]
    Trailing(usize),
}

/// One message on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicFrame {
    pub version: u8,
    pub topic: String,
    /// Monotonic nanoseconds at publish time.
    pub capture_ts: u64,
    pub payload: Vec<u8>,
}

impl TopicFrame {
    pub fn new(topic: impl Into<String>, capture_ts: u64, payload: Vec<u8>) -> Self {
        Self { version: PROTOCOL_VERSION, topic: topic.into(), capture_ts, payload }
    }

    pub fn validate(&self) -> Result<(), WireError> {
        validate_parts(self.version, &self.topic, self.payload.len())
    }

    pub fn encoded_len(&self) -> usize {
        PREFIX_LEN + self.topic.len() + MIDDLE_LEN + self.payload.len()
    }
}

fn validate_parts(version: u8, topic: &str, payload_len: usize) -> Result<(), WireError> {
    if version != PROTOCOL_VERSION {
        return Err(WireError::Version(version));
    }
    if topic.is_empty() {
        return Err(WireError::EmptyTopic);
    }
    if topic.len() > MAX_TOPIC_LEN {
        return Err(WireError::TopicTooLong(topic.len()));
    }
    if payload_len > MAX_PAYLOAD_LEN {
        return Err(WireError::PayloadTooLarge(payload_len));
    }
    Ok(())
}

pub fn encode_frame(frame: &TopicFrame) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(frame.encoded_len());
    encode_into(frame, &mut out)?;
    Ok(out)
}

/// Appends the encoded frame to `out`.
pub fn encode_into(frame: &TopicFrame, out: &mut Vec<u8>) -> Result<(), WireError> {
    frame.validate()?;
    out.reserve(frame.encoded_len());
    out.push(frame.version);
    out.extend_from_slice(&(frame.topic.len() as u16).to_le_bytes());
    out.extend_from_slice(frame.topic.as_bytes());
    out.extend_from_slice(&frame.capture_ts.to_le_bytes());
    out.extend_from_slice(&(frame.payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&frame.payload);
    Ok(())
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<TopicFrame, WireError> {
    let (frame, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(WireError::Trailing(bytes.len() - used));
    }
    Ok(frame)
}

/// Decodes the first frame of `bytes`, returning it and its encoded length.
pub fn decode_prefix(bytes: &[u8]) -> Result<(TopicFrame, usize), WireError> {
    let need = |needed: usize| {
        if bytes.len() < needed {
            Err(WireError::Truncated { needed, have: bytes.len() })
        } else {
            Ok(())
        }
    };
    need(PREFIX_LEN)?;
    let version = bytes[0];
    if version != PROTOCOL_VERSION {
        return Err(WireError::Version(version));
    }
    let topic_len = u16::from_le_bytes([bytes[1], bytes[2]]) as usize;
    if topic_len == 0 {
        return Err(WireError::EmptyTopic);
    }
    if topic_len > MAX_TOPIC_LEN {
        return Err(WireError::TopicTooLong(topic_len));
    }
    let middle = PREFIX_LEN + topic_len;
    need(middle + MIDDLE_LEN)?;
    let topic = core::str::from_utf8(&bytes[PREFIX_LEN..middle]).map_err(|_| WireError::TopicEncoding)?;
    let capture_ts = u64::from_le_bytes(bytes[middle..middle + 8].try_into().unwrap());
    let payload_len = u32::from_le_bytes(bytes[middle + 8..middle + 12].try_into().unwrap()) as usize;
    if payload_len > MAX_PAYLOAD_LEN {
        return Err(WireError::PayloadTooLarge(payload_len));
    }
    let start = middle + MIDDLE_LEN;
    need(start + payload_len)?;
    let frame =
        TopicFrame { version, topic: String::from(topic), capture_ts, payload: bytes[start..start + payload_len].to_vec() };
    Ok((frame, start + payload_len))
}

/// Header fields parsed from the fixed-size parts, for stream readers that
/// pull the topic and payload separately.
pub fn parse_prefix(prefix: &[u8; PREFIX_LEN]) -> Result<usize, WireError> {
    if prefix[0] != PROTOCOL_VERSION {
        return Err(WireError::Version(prefix[0]));
    }
    let topic_len = u16::from_le_bytes([prefix[1], prefix[2]]) as usize;
    if topic_len == 0 {
        return Err(WireError::EmptyTopic);
    }
    if topic_len > MAX_TOPIC_LEN {
        return Err(WireError::TopicTooLong(topic_len));
    }
    Ok(topic_len)
}

/// `(capture_ts, payload_len)` from the 12 bytes after the topic.
pub fn parse_middle(middle: &[u8; MIDDLE_LEN]) -> Result<(u64, usize), WireError> {
    let capture_ts = u64::from_le_bytes(middle[..8].try_into().unwrap());
    let payload_len = u32::from_le_bytes(middle[8..].try_into().unwrap()) as usize;
    if payload_len > MAX_PAYLOAD_LEN {
        return Err(WireError::PayloadTooLarge(payload_len));
    }
    Ok((capture_ts, payload_len))
}
