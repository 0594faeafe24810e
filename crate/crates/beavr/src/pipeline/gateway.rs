//! WebSocket gateway between a browser cockpit and the pipeline.
//!
//! Inbound text messages carry keypoint frames and session commands; they
//! are published on the gateway bus, where the detector picks them up.
//! Outbound, robot state and live metrics from the interface endpoint are
//! mirrored to every connection at no more than 30 messages/s per topic.
//!
//! The first connection is the operator. Later ones are read-only
//! observers until the operator leaves.

use std::collections::HashMap;
use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use beavr_core::geometry::Vec3;
use beavr_core::keypoints::{Hand, KeypointFrame, KEYPOINT_COUNT};
use crossbeam::channel::{unbounded, Receiver, Sender};
use serde::{Deserialize, Serialize};
use tungstenite::{Message, WebSocket};

use super::PipelineError;
use crate::clock::monotonic_ns;
use crate::messages::{from_payload, to_payload, topics, CommandKind, Pose, RobotMetrics, RobotState, SessionCommand};
use crate::netcore::{register_publisher, Endpoint, HandshakeToken, Publisher, QueuePolicy, Subscriber};

const POLL: Duration = Duration::from_millis(20);
const COMMAND_ACK_TIMEOUT: Duration = Duration::from_millis(500);

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayConfig {
    /// WebSocket listen address; port 0 picks a free one.
    pub listen: SocketAddr,
    /// Where cockpit input is published.
    pub bus: Endpoint,
    /// Interface endpoint mirrored back to the cockpit.
    pub states: Endpoint,
    /// Per-topic cap on outbound messages.
    pub max_rate: f64,
}

impl GatewayConfig {
    pub fn new(port: u16, bus: Endpoint, states: Endpoint) -> Self {
        Self { listen: SocketAddr::from(([127, 0, 0, 1], port)), bus, states, max_rate: 30.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientRole {
    Operator,
    Observer,
}

/// Messages a client sends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Inbound {
    Hello {
        role: ClientRole,
    },
    /// `t` is the capture time in milliseconds.
    Keypoints {
        hand: String,
        t: f64,
        points: Vec<[f64; 3]>,
    },
    Command {
        kind: String,
    },
}

/// Messages the gateway sends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Outbound {
    Hello {
        role: ClientRole,
    },
    State {
        robot: String,
        q: Vec<f64>,
        pose: Pose,
        blocked: bool,
    },
    Metrics {
        robot: String,
        hz: f64,
        jitter_ms: f64,
        latency_ms: f64,
    },
    /// A command reached the pipeline.
    Ack {
        kind: String,
    },
    Error {
        message: String,
    },
}

impl Outbound {
    fn text(&self) -> Message {
        Message::text(serde_json::to_string(self).expect("outbound messages serialize"))
    }
}

/// Converts a keypoint message to the frame the detector would publish.
pub fn keypoint_frame(hand: &str, t_ms: f64, points: &[[f64; 3]]) -> Result<KeypointFrame, String> {
    let hand = Hand::parse(hand).ok_or_else(|| format!("unknown hand `{hand}`"))?;
    if !(t_ms.is_finite() && t_ms >= 0.0) {
        return Err(format!("bad timestamp {t_ms}"));
    }
    if points.len() != KEYPOINT_COUNT {
        return Err(format!("expected {KEYPOINT_COUNT} points, got {}", points.len()));
    }
    if points.iter().flatten().any(|c| !c.is_finite()) {
        return Err("non-finite coordinate".into());
    }
    let mut frame = KeypointFrame { timestamp_ns: (t_ms * 1e6).round() as u64, hand, points: [Vec3::zeros(); KEYPOINT_COUNT] };
    for (dst, p) in frame.points.iter_mut().zip(points) {
        *dst = Vec3::from(*p);
    }
    Ok(frame)
}

struct Shared {
    stop: AtomicBool,
    operator: Mutex<Option<u64>>,
    clients: Mutex<HashMap<u64, Sender<Message>>>,
    next_id: AtomicU64,
    bus: Publisher,
}

impl Shared {
    fn broadcast(&self, message: &Outbound) {
        let text = message.text();
        self.clients.lock().unwrap().retain(|_, tx| tx.send(text.clone()).is_ok());
    }
}

/// Running gateway; stops on drop.
pub struct Gateway {
    shared: Arc<Shared>,
    local: SocketAddr,
    threads: Vec<JoinHandle<()>>,
}

impl Gateway {
    pub fn start(config: &GatewayConfig) -> Result<Self, PipelineError> {
        let listener = TcpListener::bind(config.listen)
            .map_err(|e| PipelineError::Gateway(format!("cannot listen on {}: {e}", config.listen)))?;
        listener.set_nonblocking(true).map_err(|e| PipelineError::Gateway(e.to_string()))?;
        let local = listener.local_addr().map_err(|e| PipelineError::Gateway(e.to_string()))?;
        let shared = Arc::new(Shared {
            stop: AtomicBool::new(false),
            operator: Mutex::new(None),
            clients: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(0),
            bus: register_publisher(&config.bus, QueuePolicy::bulk())?,
        });
        let accept = {
            let shared = shared.clone();
            std::thread::Builder::new()
                .name("gateway-accept".into())
                .spawn(move || accept_loop(listener, &shared))
                .expect("spawn gateway thread")
        };
        let mirror = {
            let shared = shared.clone();
            let states = config.states.clone();
            let min_gap = Duration::from_secs_f64(1.0 / config.max_rate);
            std::thread::Builder::new()
                .name("gateway-mirror".into())
                .spawn(move || mirror_loop(&states, min_gap, &shared))
                .expect("spawn gateway thread")
        };
        log::info!("gateway listening on ws://{local}");
        Ok(Self { shared, local, threads: vec![accept, mirror] })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local
    }

    pub fn local_port(&self) -> u16 {
        self.local.port()
    }

    pub fn connections(&self) -> usize {
        self.shared.clients.lock().unwrap().len()
    }

    pub fn stop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    /// Serves until `stop` is set.
    pub fn serve(config: &GatewayConfig, stop: &AtomicBool) -> Result<(), PipelineError> {
        let mut gateway = Self::start(config)?;
        crate::clock::sleep_while(Duration::MAX, || stop.load(Ordering::SeqCst));
        gateway.stop();
        Ok(())
    }
}

impl Drop for Gateway {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop(listener: TcpListener, shared: &Arc<Shared>) {
    let mut connections: Vec<JoinHandle<()>> = Vec::new();
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let shared = shared.clone();
                let handle = std::thread::Builder::new()
                    .name(format!("gateway-{peer}"))
                    .spawn(move || {
                        if let Err(e) = serve_connection(stream, &shared) {
                            log::debug!("connection {peer} closed: {e}");
                        }
                    })
                    .expect("spawn connection thread");
                connections.push(handle);
                connections.retain(|h| !h.is_finished());
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(POLL),
            Err(e) => {
                log::warn!("accept failed: {e}");
                std::thread::sleep(POLL);
            }
        }
    }
    for h in connections {
        let _ = h.join();
    }
}

fn serve_connection(stream: TcpStream, shared: &Shared) -> Result<(), tungstenite::Error> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_secs(2)))?;
    let mut ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::Io(ErrorKind::TimedOut.into()),
    })?;
    ws.get_ref().set_read_timeout(Some(POLL))?;

    let id = shared.next_id.fetch_add(1, Ordering::SeqCst);
    let (tx, rx) = unbounded();
    let mut role = {
        let mut operator = shared.operator.lock().unwrap();
        if operator.is_none() {
            *operator = Some(id);
            ClientRole::Operator
        } else {
            ClientRole::Observer
        }
    };
    shared.clients.lock().unwrap().insert(id, tx);
    let result = connection_loop(&mut ws, id, &mut role, &rx, shared);
    shared.clients.lock().unwrap().remove(&id);
    let mut operator = shared.operator.lock().unwrap();
    if *operator == Some(id) {
        *operator = None;
    }
    drop(operator);
    let _ = ws.close(None);
    let _ = ws.flush();
    result
}

fn connection_loop(
    ws: &mut WebSocket<TcpStream>,
    id: u64,
    role: &mut ClientRole,
    outbound: &Receiver<Message>,
    shared: &Shared,
) -> Result<(), tungstenite::Error> {
    ws.send(Outbound::Hello { role: *role }.text())?;
    while !shared.stop.load(Ordering::SeqCst) {
        for m in outbound.try_iter() {
            ws.write(m)?;
        }
        ws.flush()?;
        let message = match ws.read() {
            Ok(m) => m,
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => continue,
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e),
        };
        let text = match message {
            Message::Text(t) => t,
            Message::Close(_) => return Ok(()),
            Message::Binary(_) => {
                ws.send(error("binary messages are not supported"))?;
                continue;
            }
            _ => continue,
        };
        let reply = match serde_json::from_str::<Inbound>(text.as_str()) {
            Err(e) => Some(Outbound::Error { message: format!("malformed message: {e}") }),
            Ok(Inbound::Hello { role: wanted }) => Some(change_role(id, role, wanted, shared)),
            Ok(_) if *role == ClientRole::Observer => Some(Outbound::Error { message: "observers are read-only".into() }),
            Ok(Inbound::Keypoints { hand, t, points }) => match keypoint_frame(&hand, t, &points) {
                Ok(frame) => {
                    let topic = topics::keypoints(frame.hand);
                    match shared.bus.publish_stamped(topic, monotonic_ns(), &frame.encode()) {
                        Ok(_) => None,
                        Err(e) => Some(Outbound::Error { message: e.to_string() }),
                    }
                }
                Err(message) => Some(Outbound::Error { message }),
            },
            Ok(Inbound::Command { kind }) => Some(forward_command(&kind, shared)),
        };
        if let Some(r) = reply {
            ws.send(r.text())?;
        }
    }
    Ok(())
}

fn error(message: &str) -> Message {
    Outbound::Error { message: message.into() }.text()
}

fn change_role(id: u64, role: &mut ClientRole, wanted: ClientRole, shared: &Shared) -> Outbound {
    let mut operator = shared.operator.lock().unwrap();
    match wanted {
        ClientRole::Observer => {
            if *operator == Some(id) {
                *operator = None;
            }
        }
        ClientRole::Operator => match *operator {
            None => *operator = Some(id),
            Some(other) if other != id => return Outbound::Error { message: "another client is the operator".into() },
            Some(_) => {}
        },
    }
    *role = wanted;
    Outbound::Hello { role: wanted }
}

fn forward_command(kind: &str, shared: &Shared) -> Outbound {
    let Some(k) = CommandKind::parse(kind) else {
        return Outbound::Error { message: format!("unknown command `{kind}`") };
    };
    let command = SessionCommand { kind: k, timestamp_ns: monotonic_ns() };
    let token = match HandshakeToken::new(1, COMMAND_ACK_TIMEOUT) {
        Ok(t) => t,
        Err(e) => return Outbound::Error { message: e.to_string() },
    };
    match shared.bus.publish_critical(command.topic(), &to_payload(&command), &token) {
        Ok(_) => Outbound::Ack { kind: kind.to_owned() },
        Err(e) => Outbound::Error { message: format!("command not delivered: {e}") },
    }
}

fn mirror_loop(states: &Endpoint, min_gap: Duration, shared: &Shared) {
    let sub = Subscriber::new(states, "");
    let mut last_sent: HashMap<String, Instant> = HashMap::new();
    while !shared.stop.load(Ordering::SeqCst) {
        let frame = match sub.recv_timeout(POLL) {
            Ok(Some(f)) => f,
            Ok(None) => continue,
            Err(e) => {
                log::warn!("state mirror stopped: {e}");
                return;
            }
        };
        let now = Instant::now();
        if last_sent.get(&frame.topic).is_some_and(|t| now.duration_since(*t) < min_gap) {
            continue;
        }
        let message = if frame.topic.starts_with(topics::ROBOT_STATE_PREFIX) {
            from_payload::<RobotState>(&frame.payload)
                .map(|s| Outbound::State { robot: s.robot, q: s.q, pose: s.pose, blocked: s.blocked })
                .ok()
        } else if frame.topic.starts_with(topics::METRICS_PREFIX) {
            from_payload::<RobotMetrics>(&frame.payload)
                .map(|m| Outbound::Metrics { robot: m.robot, hz: m.hz, jitter_ms: m.jitter_ms, latency_ms: m.latency_ms })
                .ok()
        } else {
            None
        };
        if let Some(m) = message {
            last_sent.insert(frame.topic, now);
            shared.broadcast(&m);
        }
    }
}
