use std::collections::{HashMap, HashSet, VecDeque};
use std::io::{ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, OnceLock, Weak};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use beavr_core::wire::{encode_frame, TopicFrame};

use super::{decode_ack, Endpoint, HandshakeToken, NetError, QueuePolicy, ACK_LEN, CRITICAL_MARK};
use crate::clock::monotonic_ns;

const POLL: Duration = Duration::from_millis(2);
const WRITE_TIMEOUT: Duration = Duration::from_millis(200);
const RESEND_INTERVAL: Duration = Duration::from_millis(20);
const BIND_RETRY: Duration = Duration::from_millis(20);
const BIND_ATTEMPTS: usize = 50;

/// Result of one enqueue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnqueueStatus {
    /// Frames discarded by this call to stay within the high-water mark.
    pub dropped: usize,
    pub queued: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeliveryReport {
    pub acks: usize,
    pub elapsed: Duration,
}

struct Queue {
    frames: VecDeque<Vec<u8>>,
    dropped: u64,
    closed: bool,
}

struct Shared {
    endpoint: Endpoint,
    policy: QueuePolicy,
    queue: Mutex<Queue>,
    ready: Condvar,
    stalls: AtomicUsize,
    shutdown: AtomicBool,
    subscribers: AtomicUsize,
    acks: Mutex<HashMap<u64, HashSet<u64>>>,
    ack_ready: Condvar,
}

impl Shared {
    fn close(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
        self.queue.lock().unwrap().closed = true;
        self.ready.notify_all();
        self.ack_ready.notify_all();
    }
}

struct PubCore {
    shared: Arc<Shared>,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl PubCore {
    fn shutdown(&self) {
        self.shared.close();
        let threads: Vec<_> = self.threads.lock().unwrap().drain(..).collect();
        for t in threads {
            let _ = t.join();
        }
    }
}

impl Drop for PubCore {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Shareable handle to the single publisher bound to an endpoint.
#[derive(Clone)]
pub struct Publisher {
    core: Arc<PubCore>,
}

impl std::fmt::Debug for Publisher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Publisher").field("endpoint", &self.core.shared.endpoint).finish()
    }
}

fn registry() -> &'static Mutex<HashMap<Endpoint, Weak<PubCore>>> {
    static REGISTRY: OnceLock<Mutex<HashMap<Endpoint, Weak<PubCore>>>> = OnceLock::new();
    REGISTRY.get_or_init(Default::default)
}

fn binds() -> &'static Mutex<HashMap<Endpoint, usize>> {
    static BINDS: OnceLock<Mutex<HashMap<Endpoint, usize>>> = OnceLock::new();
    BINDS.get_or_init(Default::default)
}

/// Number of times a socket has been bound for `endpoint` in this process.
pub fn bind_count(endpoint: &Endpoint) -> usize {
    binds().lock().unwrap().get(endpoint).copied().unwrap_or(0)
}

/// Whether a live publisher for `endpoint` exists in this process.
pub fn is_registered(endpoint: &Endpoint) -> bool {
    registry().lock().unwrap().get(endpoint).is_some_and(|w| w.strong_count() > 0)
}

/// Returns the publisher for `endpoint`, binding it on first use. Later
/// calls share the same publisher and ignore `policy`.
pub fn register_publisher(endpoint: &Endpoint, policy: QueuePolicy) -> Result<Publisher, NetError> {
    let mut map = registry().lock().unwrap();
    if let Some(core) = map.get(endpoint).and_then(Weak::upgrade) {
        if !core.shared.shutdown.load(Ordering::SeqCst) {
            return Ok(Publisher { core });
        }
    }
    map.retain(|_, w| w.strong_count() > 0);
    let core = Arc::new(bind_core(endpoint, policy)?);
    map.insert(endpoint.clone(), Arc::downgrade(&core));
    Ok(Publisher { core })
}

fn bind_with_retry(endpoint: &Endpoint) -> Result<TcpListener, NetError> {
    let mut attempt = 0;
    loop {
        match TcpListener::bind(endpoint.addr()) {
            Ok(l) => return Ok(l),
            // a previous publisher on this port may still be tearing down
            Err(e) if e.kind() == ErrorKind::AddrInUse && attempt + 1 < BIND_ATTEMPTS => {
                attempt += 1;
                std::thread::sleep(BIND_RETRY);
            }
            Err(source) => return Err(NetError::Bind { endpoint: endpoint.clone(), source }),
        }
    }
}

fn bind_core(endpoint: &Endpoint, policy: QueuePolicy) -> Result<PubCore, NetError> {
    let ack_endpoint = endpoint.ack_endpoint()?;
    let listener = bind_with_retry(endpoint)?;
    let ack_listener = bind_with_retry(&ack_endpoint)?;
    listener.set_nonblocking(true)?;
    ack_listener.set_nonblocking(true)?;
    *binds().lock().unwrap().entry(endpoint.clone()).or_default() += 1;

    let shared = Arc::new(Shared {
        endpoint: endpoint.clone(),
        policy,
        queue: Mutex::new(Queue { frames: VecDeque::with_capacity(policy.high_water_mark + 1), dropped: 0, closed: false }),
        ready: Condvar::new(),
        stalls: AtomicUsize::new(0),
        shutdown: AtomicBool::new(false),
        subscribers: AtomicUsize::new(0),
        acks: Mutex::new(HashMap::new()),
        ack_ready: Condvar::new(),
    });
    let sender = {
        let shared = shared.clone();
        std::thread::Builder::new().name(format!("pub-{}", endpoint.port)).spawn(move || sender_loop(&shared, listener))?
    };
    let acker = {
        let shared = shared.clone();
        std::thread::Builder::new().name(format!("ack-{}", ack_endpoint.port)).spawn(move || ack_loop(&shared, ack_listener))?
    };
    Ok(PubCore { shared, threads: Mutex::new(vec![sender, acker]) })
}

fn sender_loop(shared: &Shared, listener: TcpListener) {
    let mut subs: Vec<TcpStream> = Vec::new();
    let mut batch: Vec<Vec<u8>> = Vec::new();
    while !shared.shutdown.load(Ordering::SeqCst) {
        while let Ok((stream, _)) = listener.accept() {
            if stream.set_nonblocking(false).is_ok() && stream.set_write_timeout(Some(WRITE_TIMEOUT)).is_ok() {
                let _ = stream.set_nodelay(true);
                subs.push(stream);
            }
        }
        {
            let mut q = shared.queue.lock().unwrap();
            if q.frames.is_empty() || shared.stalls.load(Ordering::SeqCst) > 0 {
                q = shared.ready.wait_timeout(q, POLL).unwrap().0;
            }
            if shared.stalls.load(Ordering::SeqCst) == 0 {
                batch.extend(q.frames.drain(..));
            }
        }
        if subs.is_empty() {
            batch.clear();
            continue;
        }
        for frame in batch.drain(..) {
            subs.retain_mut(|s| s.write_all(frame.as_slice()).is_ok());
        }
        shared.subscribers.store(subs.len(), Ordering::SeqCst);
    }
}

fn ack_loop(shared: &Shared, listener: TcpListener) {
    while !shared.shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => handle_ack(shared, stream),
            Err(_) => std::thread::sleep(POLL),
        }
    }
}

fn handle_ack(shared: &Shared, mut stream: TcpStream) {
    let mut buf = [0u8; ACK_LEN];
    let ok = stream.set_nonblocking(false).is_ok()
        && stream.set_read_timeout(Some(WRITE_TIMEOUT)).is_ok()
        && stream.read_exact(&mut buf).is_ok();
    if !ok {
        return;
    }
    let (message_id, subscriber_id) = decode_ack(&buf);
    {
        let mut acks = shared.acks.lock().unwrap();
        if let Some(set) = acks.get_mut(&message_id) {
            set.insert(subscriber_id);
        }
    }
    shared.ack_ready.notify_all();
    let _ = stream.write_all(&[1]);
}

/// While alive, the sender thread stops draining the queue, as if every
/// subscriber had stopped reading.
#[doc(hidden)]
pub struct StallGuard {
    core: Arc<PubCore>,
}

impl Drop for StallGuard {
    fn drop(&mut self) {
        self.core.shared.stalls.fetch_sub(1, Ordering::SeqCst);
        self.core.shared.ready.notify_all();
    }
}

impl Publisher {
    pub fn endpoint(&self) -> &Endpoint {
        &self.core.shared.endpoint
    }

    pub fn policy(&self) -> QueuePolicy {
        self.core.shared.policy
    }

    /// True when both handles drive the same bound socket.
    pub fn same_publisher(&self, other: &Publisher) -> bool {
        Arc::ptr_eq(&self.core, &other.core)
    }

    pub fn queued(&self) -> usize {
        self.core.shared.queue.lock().unwrap().frames.len()
    }

    pub fn dropped_total(&self) -> u64 {
        self.core.shared.queue.lock().unwrap().dropped
    }

    pub fn subscriber_count(&self) -> usize {
        self.core.shared.subscribers.load(Ordering::SeqCst)
    }

    pub fn is_closed(&self) -> bool {
        self.core.shared.shutdown.load(Ordering::SeqCst)
    }

    /// Stamps the frame with the current monotonic time and enqueues it.
    pub fn publish(&self, topic: &str, payload: &[u8]) -> Result<EnqueueStatus, NetError> {
        self.publish_stamped(topic, monotonic_ns(), payload)
    }

    /// Enqueues with an explicit capture timestamp.
    pub fn publish_stamped(&self, topic: &str, capture_ts: u64, payload: &[u8]) -> Result<EnqueueStatus, NetError> {
        if topic.starts_with(CRITICAL_MARK) {
            return Err(NetError::Invalid("topic uses the reserved critical prefix"));
        }
        let bytes = encode_frame(&TopicFrame::new(topic, capture_ts, payload.to_vec()))?;
        self.enqueue(bytes)
    }

    /// Forwards an already-built frame unchanged.
    pub fn publish_frame(&self, frame: &TopicFrame) -> Result<EnqueueStatus, NetError> {
        if frame.topic.starts_with(CRITICAL_MARK) {
            return Err(NetError::Invalid("topic uses the reserved critical prefix"));
        }
        self.enqueue(encode_frame(frame)?)
    }

    fn enqueue(&self, bytes: Vec<u8>) -> Result<EnqueueStatus, NetError> {
        let shared = &self.core.shared;
        let mut q = shared.queue.lock().unwrap();
        if q.closed {
            return Err(NetError::Closed(shared.endpoint.clone()));
        }
        q.frames.push_back(bytes);
        let mut dropped = 0;
        while q.frames.len() > shared.policy.high_water_mark {
            q.frames.pop_front();
            dropped += 1;
        }
        q.dropped += dropped as u64;
        let queued = q.frames.len();
        drop(q);
        shared.ready.notify_one();
        Ok(EnqueueStatus { dropped, queued })
    }

    /// Publishes and re-sends `payload` until `token.required_acks` distinct
    /// subscribers confirm it or the timeout elapses.
    pub fn publish_critical(&self, topic: &str, payload: &[u8], token: &HandshakeToken) -> Result<DeliveryReport, NetError> {
        let shared = &self.core.shared;
        if topic.is_empty() || topic.starts_with(CRITICAL_MARK) {
            return Err(NetError::Invalid("critical topic must be a non-empty user topic"));
        }
        let mut body = Vec::with_capacity(8 + payload.len());
        body.extend_from_slice(&token.message_id.to_le_bytes());
        body.extend_from_slice(payload);
        let bytes = encode_frame(&TopicFrame::new(format!("{CRITICAL_MARK}{topic}"), monotonic_ns(), body))?;

        let start = Instant::now();
        shared.acks.lock().unwrap().insert(token.message_id, HashSet::new());
        let result = loop {
            if let Err(e) = self.enqueue(bytes.clone()) {
                break Err(e);
            }
            let acks = shared.acks.lock().unwrap();
            let remaining = token.timeout.saturating_sub(start.elapsed());
            let (acks, _) = shared
                .ack_ready
                .wait_timeout_while(acks, remaining.min(RESEND_INTERVAL), |a| {
                    a.get(&token.message_id).map_or(0, HashSet::len) < token.required_acks
                        && !shared.shutdown.load(Ordering::SeqCst)
                })
                .unwrap();
            let count = acks.get(&token.message_id).map_or(0, HashSet::len);
            if count >= token.required_acks {
                break Ok(DeliveryReport { acks: count, elapsed: start.elapsed() });
            }
            if start.elapsed() >= token.timeout {
                break Err(NetError::HandshakeTimeout { acks: count, required: token.required_acks });
            }
            if shared.shutdown.load(Ordering::SeqCst) {
                break Err(NetError::Closed(shared.endpoint.clone()));
            }
        };
        shared.acks.lock().unwrap().remove(&token.message_id);
        result
    }

    /// Closes the publisher for every handle and releases its sockets.
    pub fn shutdown(&self) {
        self.core.shutdown();
        let mut map = registry().lock().unwrap();
        if map.get(&self.core.shared.endpoint).is_some_and(|w| w.as_ptr() == Arc::as_ptr(&self.core)) {
            map.remove(&self.core.shared.endpoint);
        }
    }

    #[doc(hidden)]
    pub fn stall(&self) -> StallGuard {
        self.core.shared.stalls.fetch_add(1, Ordering::SeqCst);
        StallGuard { core: self.core.clone() }
    }
}
