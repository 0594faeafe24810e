use std::collections::{HashSet, VecDeque};
use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use beavr_core::wire::{decode_prefix, TopicFrame, WireError};

use super::{encode_ack, Endpoint, NetError, BULK_HWM, CRITICAL_MARK};

const READ_TIMEOUT: Duration = Duration::from_millis(20);
const CONNECT_TIMEOUT: Duration = Duration::from_millis(200);
const ACK_TIMEOUT: Duration = Duration::from_millis(200);
const RECENT_CRITICAL: usize = 256;

/// Reconnect behaviour. `max_attempts = None` retries forever, which lets a
/// subscriber outlive restarts of its publisher.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub interval: Duration,
    pub max_attempts: Option<usize>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { interval: Duration::from_millis(20), max_attempts: None }
    }
}

struct Inbox {
    frames: VecDeque<TopicFrame>,
    dropped: u64,
    failed_after: Option<usize>,
}

struct Shared {
    endpoint: Endpoint,
    prefix: String,
    id: u64,
    capacity: usize,
    inbox: Mutex<Inbox>,
    ready: Condvar,
    stop: AtomicBool,
    connected: AtomicBool,
}

/// Frame stream for one endpoint, filtered by topic prefix, fed by a
/// dedicated receiver thread.
pub struct Subscriber {
    shared: Arc<Shared>,
    thread: Option<JoinHandle<()>>,
}

impl Subscriber {
    pub fn new(endpoint: &Endpoint, topic_prefix: &str) -> Self {
        Self::with_options(endpoint, topic_prefix, RetryPolicy::default(), BULK_HWM)
    }

    /// `capacity` bounds the local queue; the oldest frame is dropped on
    /// overflow.
    pub fn with_options(endpoint: &Endpoint, topic_prefix: &str, retry: RetryPolicy, capacity: usize) -> Self {
        let shared = Arc::new(Shared {
            endpoint: endpoint.clone(),
            prefix: topic_prefix.to_owned(),
            id: rand::random(),
            capacity: capacity.max(1),
            inbox: Mutex::new(Inbox { frames: VecDeque::new(), dropped: 0, failed_after: None }),
            ready: Condvar::new(),
            stop: AtomicBool::new(false),
            connected: AtomicBool::new(false),
        });
        let thread = {
            let shared = shared.clone();
            std::thread::Builder::new()
                .name(format!("sub-{}", endpoint.port))
                .spawn(move || receiver_loop(&shared, retry))
                .expect("spawn subscriber thread")
        };
        Self { shared, thread: Some(thread) }
    }

    pub fn id(&self) -> u64 {
        self.shared.id
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.shared.endpoint
    }

    pub fn is_connected(&self) -> bool {
        self.shared.connected.load(Ordering::SeqCst)
    }

    /// Blocks until connected or `timeout` elapses.
    pub fn wait_connected(&self, timeout: Duration) -> bool {
        let start = Instant::now();
        while !self.is_connected() {
            if start.elapsed() >= timeout {
                return false;
            }
            std::thread::sleep(Duration::from_millis(2));
        }
        true
    }

    /// Frames discarded because the local queue was full.
    pub fn dropped(&self) -> u64 {
        self.shared.inbox.lock().unwrap().dropped
    }

    fn failure(&self, inbox: &Inbox) -> Option<NetError> {
        inbox.failed_after.map(|attempts| NetError::Unreachable { endpoint: self.shared.endpoint.clone(), attempts })
    }

    pub fn try_recv(&self) -> Result<Option<TopicFrame>, NetError> {
        let mut inbox = self.shared.inbox.lock().unwrap();
        match inbox.frames.pop_front() {
            Some(f) => Ok(Some(f)),
            None => self.failure(&inbox).map_or(Ok(None), Err),
        }
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<TopicFrame>, NetError> {
        let inbox = self.shared.inbox.lock().unwrap();
        let (mut inbox, _) =
            self.shared.ready.wait_timeout_while(inbox, timeout, |i| i.frames.is_empty() && i.failed_after.is_none()).unwrap();
        match inbox.frames.pop_front() {
            Some(f) => Ok(Some(f)),
            None => self.failure(&inbox).map_or(Ok(None), Err),
        }
    }

    /// Everything queued so far, oldest first.
    pub fn drain(&self) -> Result<Vec<TopicFrame>, NetError> {
        let mut inbox = self.shared.inbox.lock().unwrap();
        if inbox.frames.is_empty() {
            if let Some(e) = self.failure(&inbox) {
                return Err(e);
            }
        }
        Ok(inbox.frames.drain(..).collect())
    }
}

impl Drop for Subscriber {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn resolve(endpoint: &Endpoint) -> Option<SocketAddr> {
    endpoint.addr().to_socket_addrs().ok()?.next()
}

fn receiver_loop(shared: &Shared, retry: RetryPolicy) {
    let mut attempts = 0;
    let mut recent: VecDeque<u64> = VecDeque::new();
    let mut recent_set: HashSet<u64> = HashSet::new();
    while !shared.stop.load(Ordering::SeqCst) {
        let stream = resolve(&shared.endpoint).and_then(|a| TcpStream::connect_timeout(&a, CONNECT_TIMEOUT).ok());
        let Some(stream) = stream else {
            attempts += 1;
            if retry.max_attempts.is_some_and(|max| attempts >= max) {
                shared.inbox.lock().unwrap().failed_after = Some(attempts);
                shared.ready.notify_all();
                return;
            }
            std::thread::sleep(retry.interval);
            continue;
        };
        attempts = 0;
        let _ = stream.set_nodelay(true);
        if stream.set_read_timeout(Some(READ_TIMEOUT)).is_err() {
            continue;
        }
        shared.connected.store(true, Ordering::SeqCst);
        read_stream(shared, stream, &mut recent, &mut recent_set);
        shared.connected.store(false, Ordering::SeqCst);
    }
}

fn read_stream(shared: &Shared, mut stream: TcpStream, recent: &mut VecDeque<u64>, recent_set: &mut HashSet<u64>) {
    let mut buf: Vec<u8> = Vec::with_capacity(64 * 1024);
    let mut chunk = vec![0u8; 64 * 1024];
    while !shared.stop.load(Ordering::SeqCst) {
        match stream.read(&mut chunk) {
            Ok(0) => return,
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => continue,
            Err(_) => return,
        }
        let mut consumed = 0;
        loop {
            match decode_prefix(&buf[consumed..]) {
                Ok((frame, used)) => {
                    consumed += used;
                    handle_frame(shared, frame, recent, recent_set);
                }
                Err(WireError::Truncated { .. }) => break,
                Err(e) => {
                    log::warn!("dropping connection to {}: {e}", shared.endpoint);
                    return;
                }
            }
        }
        buf.drain(..consumed);
    }
}

fn handle_frame(shared: &Shared, mut frame: TopicFrame, recent: &mut VecDeque<u64>, recent_set: &mut HashSet<u64>) {
    if let Some(topic) = frame.topic.strip_prefix(CRITICAL_MARK) {
        if !topic.starts_with(&shared.prefix) || frame.payload.len() < 8 {
            return;
        }
        let message_id = u64::from_le_bytes(frame.payload[..8].try_into().unwrap());
        send_ack(shared, message_id);
        if !recent_set.insert(message_id) {
            return;
        }
        recent.push_back(message_id);
        if recent.len() > RECENT_CRITICAL {
            if let Some(old) = recent.pop_front() {
                recent_set.remove(&old);
            }
        }
        frame.topic = topic.to_owned();
        frame.payload.drain(..8);
    } else if !frame.topic.starts_with(&shared.prefix) {
        return;
    }
    let mut inbox = shared.inbox.lock().unwrap();
    if inbox.frames.len() >= shared.capacity {
        inbox.frames.pop_front();
        inbox.dropped += 1;
    }
    inbox.frames.push_back(frame);
    drop(inbox);
    shared.ready.notify_all();
}

fn send_ack(shared: &Shared, message_id: u64) {
    let Some(addr) = shared.endpoint.ack_endpoint().ok().as_ref().and_then(resolve) else { return };
    let Ok(mut stream) = TcpStream::connect_timeout(&addr, ACK_TIMEOUT) else { return };
    let _ = stream.set_read_timeout(Some(ACK_TIMEOUT));
    let mut reply = [0u8; 1];
    // a lost ack is covered by the publisher re-sending
    let _ = stream.write_all(&encode_ack(message_id, shared.id)).and_then(|_| stream.read_exact(&mut reply));
}
