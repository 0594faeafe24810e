//! Asynchronous think–act loop.
//!
//! The act side applies one action per control tick on absolute deadlines
//! and never waits for inference. The think side computes the next action
//! chunk on its own thread whenever the queue runs low. The bounded queue is
//! the only state the two share.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use beavr_core::timing::{achieved_hz, jitter_ms, period_ns, DeadlineSchedule};
use crossbeam::channel::{bounded, RecvTimeoutError, TryRecvError};
use crossbeam::queue::ArrayQueue;
use thiserror::Error;

use crate::clock::{monotonic_ns, sleep_until, RealtimeGuard, CONTROL_PRIORITY};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("policy failed: {0}")]
pub struct PolicyError(pub String);

/// Maps an observation to a chunk of future actions.
pub trait Policy: Send {
    fn infer(&mut self, observation: &[f64]) -> Result<Vec<Vec<f64>>, PolicyError>;
}

/// Stand-in policy: after an artificial compute delay, returns a chunk that
/// steps each joint of the observation along a slow sinusoid.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    pub delay: Duration,
    pub chunk_size: usize,
    /// Fails every call from this one on (0-based), when set.
    pub fail_from: Option<usize>,
    calls: usize,
}

impl ScriptedPolicy {
    pub fn new(delay: Duration, chunk_size: usize) -> Self {
        Self { delay, chunk_size, fail_from: None, calls: 0 }
    }

    pub fn failing_from(mut self, call: usize) -> Self {
        self.fail_from = Some(call);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl Policy for ScriptedPolicy {
    fn infer(&mut self, observation: &[f64]) -> Result<Vec<Vec<f64>>, PolicyError> {
        let call = self.calls;
        self.calls += 1;
        std::thread::sleep(self.delay);
        if self.fail_from.is_some_and(|f| call >= f) {
            return Err(PolicyError(format!("scripted failure on call {call}")));
        }
        Ok((0..self.chunk_size)
            .map(|i| {
                let phase = (call * self.chunk_size + i) as f64 * 0.05;
                observation.iter().enumerate().map(|(j, q)| q + 0.01 * (phase + j as f64).sin()).collect()
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThinkActConfig {
    pub rate: f64,
    pub chunk_size: usize,
    /// Request the next chunk when fewer than this many actions are queued.
    pub threshold: usize,
    /// Control ticks to run; `None` runs until stopped.
    pub ticks: Option<u64>,
}

impl ThinkActConfig {
    pub fn new(rate: f64, chunk_size: usize) -> Self {
        Self { rate, chunk_size, threshold: chunk_size, ticks: None }
    }

    pub fn with_ticks(mut self, ticks: u64) -> Self {
        self.ticks = Some(ticks);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThinkActReport {
    pub ticks: u64,
    /// Ticks that found the queue empty and repeated the last action.
    pub underruns: u64,
    pub chunks: u64,
    /// Set once the policy fails; the loop then holds the last action.
    pub policy_failed: bool,
    pub send_ts: Vec<u64>,
}

impl ThinkActReport {
    pub fn achieved_hz(&self) -> Option<f64> {
        achieved_hz(&self.send_ts)
    }

    pub fn jitter_ms(&self) -> Option<f64> {
        jitter_ms(&self.send_ts)
    }
}

/// Runs the loop until `stop` is set or the configured tick count is reached.
/// `observe` reads the robot's current state for the policy; `apply` sends
/// one action to it. The act clock starts once the first chunk is ready.
pub fn think_act_loop<P: Policy + 'static>(
    policy: P,
    config: &ThinkActConfig,
    mut observe: impl FnMut() -> Vec<f64>,
    mut apply: impl FnMut(&[f64]),
    stop: &AtomicBool,
) -> ThinkActReport {
    assert!(config.chunk_size > 0 && config.rate > 0.0);
    let queue = Arc::new(ArrayQueue::<Vec<f64>>::new(2 * config.chunk_size.max(config.threshold)));
    let (request_tx, request_rx) = bounded::<Vec<f64>>(1);
    let (done_tx, done_rx) = bounded::<Result<usize, PolicyError>>(1);
    let think_queue = queue.clone();
    let thinker = std::thread::Builder::new()
        .name("think".into())
        .spawn(move || {
            let mut policy = policy;
            for observation in request_rx {
                let result = policy.infer(&observation).map(|chunk| {
                    let n = chunk.len();
                    for action in chunk {
                        think_queue.force_push(action);
                    }
                    n
                });
                if done_tx.send(result).is_err() {
                    break;
                }
            }
        })
        .expect("spawn think thread");

    let mut report = ThinkActReport { ticks: 0, underruns: 0, chunks: 0, policy_failed: false, send_ts: Vec::new() };
    let mut last: Option<Vec<f64>> = None;
    let mut in_flight = request_tx.send(observe()).is_ok();

    // wait for the first chunk without running the clock
    while in_flight && !stop.load(Ordering::SeqCst) {
        match done_rx.recv_timeout(Duration::from_millis(10)) {
            Ok(result) => {
                in_flight = false;
                match result {
                    Ok(_) => report.chunks += 1,
                    Err(e) => {
                        log::warn!("{e}");
                        report.policy_failed = true;
                    }
                }
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }

    let _realtime = RealtimeGuard::enter(CONTROL_PRIORITY);
    let period = period_ns(config.rate);
    let mut schedule = DeadlineSchedule::new(monotonic_ns(), period);
    while !stop.load(Ordering::SeqCst) && config.ticks.is_none_or(|n| report.ticks < n) {
        sleep_until(schedule.deadline());
        report.send_ts.push(monotonic_ns());
        match done_rx.try_recv() {
            Ok(Ok(_)) => {
                in_flight = false;
                report.chunks += 1;
            }
            Ok(Err(e)) => {
                in_flight = false;
                if !report.policy_failed {
                    log::warn!("{e}; holding the last action");
                }
                report.policy_failed = true;
            }
            Err(TryRecvError::Empty | TryRecvError::Disconnected) => {}
        }
        match queue.pop() {
            Some(action) => {
                apply(&action);
                last = Some(action);
            }
            None => {
                report.underruns += 1;
                if let Some(a) = &last {
                    apply(a);
                }
            }
        }
        if !in_flight && !report.policy_failed && queue.len() < config.threshold {
            in_flight = request_tx.try_send(observe()).is_ok();
        }
        report.ticks += 1;
        schedule.advance(monotonic_ns());
    }
    drop(request_tx);
    let _ = thinker.join();
    report
}
