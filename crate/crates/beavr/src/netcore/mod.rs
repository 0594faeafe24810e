//! Topic-framed pub/sub over TCP.
//!
//! A publisher owns one listening socket per endpoint and a single sender
//! thread. Subscribers connect, receive every frame, and filter by topic
//! prefix locally. Critical messages are re-sent until enough subscribers
//! acknowledge them on the request-reply channel at `port + 1`.

mod publisher;
mod subscriber;

use std::time::Duration;

use beavr_core::wire::WireError;
use thiserror::Error;

pub use publisher::{bind_count, is_registered, register_publisher, DeliveryReport, EnqueueStatus, Publisher, StallGuard};
pub use subscriber::{RetryPolicy, Subscriber};

/// Queue depth for control topics: the freshest command wins.
pub const CONTROL_HWM: usize = 2;
/// Queue depth for bulk topics.
pub const BULK_HWM: usize = 1000;

/// Topics starting with this byte carry a handshake message id in the first
/// eight payload bytes. User topics may not start with it.
pub(crate) const CRITICAL_MARK: char = '\u{0}';
const ACK_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("cannot bind {endpoint}: {source}")]
    Bind { endpoint: Endpoint, source: std::io::Error },
    #[error("publisher for {0} is shut down")]
    Closed(Endpoint),
    #[error("{endpoint} unreachable after {attempts} attempts")]
    Unreachable { endpoint: Endpoint, attempts: usize },
    #[error("handshake timed out with {acks} of {required} acks")]
    HandshakeTimeout { acks: usize, required: usize },
    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),
    #[error("invalid argument: {0}")]
    Invalid(&'static str),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Endpoint {
    pub host: String,
    pub port: u16,
}

impl Endpoint {
    pub fn new(host: impl Into<String>, port: u16) -> Result<Self, NetError> {
        let host = host.into();
        if port < 1024 {
            return Err(NetError::InvalidEndpoint(format!("port {port} below 1024")));
        }
        if host.is_empty() {
            return Err(NetError::InvalidEndpoint("empty host".into()));
        }
        Ok(Self { host, port })
    }

    pub fn localhost(port: u16) -> Result<Self, NetError> {
        Self::new("127.0.0.1", port)
    }

    /// Request-reply endpoint that collects handshake acks.
    pub fn ack_endpoint(&self) -> Result<Endpoint, NetError> {
        let port =
            self.port.checked_add(1).ok_or_else(|| NetError::InvalidEndpoint(format!("no ack port above {}", self.port)))?;
        Endpoint::new(self.host.clone(), port)
    }

    pub(crate) fn addr(&self) -> (&str, u16) {
        (self.host.as_str(), self.port)
    }
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "tcp://{}:{}", self.host, self.port)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueuePolicy {
    pub high_water_mark: usize,
}

impl QueuePolicy {
    pub fn new(high_water_mark: usize) -> Result<Self, NetError> {
        if high_water_mark == 0 {
            return Err(NetError::Invalid("high_water_mark must be at least 1"));
        }
        Ok(Self { high_water_mark })
    }

    pub fn control() -> Self {
        Self { high_water_mark: CONTROL_HWM }
    }

    pub fn bulk() -> Self {
        Self { high_water_mark: BULK_HWM }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HandshakeToken {
    pub message_id: u64,
    pub required_acks: usize,
    pub timeout: Duration,
}

impl HandshakeToken {
    /// Token with a fresh random message id.
    pub fn new(required_acks: usize, timeout: Duration) -> Result<Self, NetError> {
        Self::with_id(rand::random(), required_acks, timeout)
    }

    pub fn with_id(message_id: u64, required_acks: usize, timeout: Duration) -> Result<Self, NetError> {
        if required_acks == 0 {
            return Err(NetError::Invalid("required_acks must be at least 1"));
        }
        if timeout < Duration::from_millis(1) {
            return Err(NetError::Invalid("timeout must be at least 1 ms"));
        }
        Ok(Self { message_id, required_acks, timeout })
    }
}

pub(crate) fn encode_ack(message_id: u64, subscriber_id: u64) -> [u8; ACK_LEN] {
    let mut out = [0u8; ACK_LEN];
    out[..8].copy_from_slice(&message_id.to_le_bytes());
    out[8..].copy_from_slice(&subscriber_id.to_le_bytes());
    out
}

pub(crate) fn decode_ack(bytes: &[u8; ACK_LEN]) -> (u64, u64) {
    (u64::from_le_bytes(bytes[..8].try_into().unwrap()), u64::from_le_bytes(bytes[8..].try_into().unwrap()))
}
