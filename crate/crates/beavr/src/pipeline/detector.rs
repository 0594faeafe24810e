//! Keypoint sources and the detector component.

use std::f64::consts::TAU;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use beavr_core::geometry::{Quaternion, Vec3};
use beavr_core::keypoints::{pose_to_keypoints, Hand, HandPose, KeypointFrame};
use beavr_core::timing::{period_ns, DeadlineSchedule};
use beavr_core::wire::{decode_prefix, encode_frame, TopicFrame};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Ctx, PipelineError};
use crate::clock::{monotonic_ns, sleep_until};
use crate::messages::topics;
use crate::netcore::{register_publisher, Endpoint, HandshakeToken, Publisher, QueuePolicy, Subscriber};

const COMMAND_ACK_TIMEOUT: Duration = Duration::from_millis(500);

/// Deterministic synthetic hand motion: the wrist follows a Lissajous curve
/// with a gentle wobble in orientation while the fingers curl periodically.
/// Phases are drawn once from the seed, so a frame depends only on
/// `(seed, hand, time)`.
#[derive(Debug, Clone)]
pub struct ScriptedSource {
    hands: Vec<Hand>,
    phases: [f64; 6],
}

impl ScriptedSource {
    pub fn new(seed: u64, hands: &[Hand]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phases = std::array::from_fn(|_| rng.random_range(0.0..TAU));
        Self { hands: hands.to_vec(), phases }
    }

    pub fn hands(&self) -> &[Hand] {
        &self.hands
    }

    pub fn pose_at(&self, hand: Hand, t: f64) -> HandPose {
        let p = &self.phases;
        let side = if hand == Hand::Right { 0.2 } else { -0.2 };
        let wrist = Vec3::new(
            side + 0.06 * (TAU * 0.23 * t + p[0]).sin(),
            1.1 + 0.04 * (TAU * 0.31 * t + p[1]).sin(),
            -0.35 + 0.05 * (TAU * 0.17 * t + p[2]).sin(),
        );
        let yaw = Quaternion::from_axis_angle(&Vec3::y(), 0.25 * (TAU * 0.13 * t + p[3]).sin());
        let pitch = Quaternion::from_axis_angle(&Vec3::x(), 0.15 * (TAU * 0.19 * t + p[4]).sin());
        let curls = std::array::from_fn(|f| {
            let amplitude = if f == 0 { 0.2 } else { 0.35 };
            0.45 + amplitude * (TAU * 0.5 * t + p[5] + 0.4 * f as f64).sin()
        });
        HandPose { wrist, orientation: yaw * pitch, curls }
    }

    /// Frames for tick `k` of a schedule with the given period; the frame
    /// timestamp is the script time `k · period`.
    pub fn frames(&self, k: u64, period_ns: u64) -> Vec<KeypointFrame> {
        let ts = k * period_ns;
        let t = ts as f64 * 1e-9;
        self.hands.iter().map(|&h| pose_to_keypoints(&self.pose_at(h, t), h, ts)).collect()
    }
}

fn is_keypoint_topic(topic: &str) -> bool {
    Hand::parse(topic).is_some()
}

/// Reads a detector log: concatenated wire frames. Keypoint payloads must
/// decode; an empty or truncated log is an error.
pub fn read_log(path: &Path) -> Result<Vec<TopicFrame>, PipelineError> {
    let corrupt = |message: String| PipelineError::Replay { path: path.into(), message };
    let bytes = std::fs::read(path).map_err(|e| corrupt(e.to_string()))?;
    let mut frames = Vec::new();
    let mut at = 0;
    while at < bytes.len() {
        let (frame, used) = decode_prefix(&bytes[at..]).map_err(|e| corrupt(format!("frame {}: {e}", frames.len())))?;
        if is_keypoint_topic(&frame.topic) {
            KeypointFrame::decode(&frame.payload).map_err(|e| corrupt(format!("frame {}: {e}", frames.len())))?;
        }
        frames.push(frame);
        at += used;
    }
    if !frames.iter().any(|f| is_keypoint_topic(&f.topic)) {
        return Err(corrupt("no keypoint frames".into()));
    }
    Ok(frames)
}

/// Rate a log was captured at, from the median spacing of one hand's
/// capture stamps.
pub fn infer_rate(frames: &[TopicFrame]) -> Option<f64> {
    let topic = &frames.iter().find(|f| is_keypoint_topic(&f.topic))?.topic;
    let stamps: Vec<u64> = frames.iter().filter(|f| &f.topic == topic).map(|f| f.capture_ts).collect();
    let mut gaps: Vec<u64> = stamps.windows(2).filter(|w| w[1] > w[0]).map(|w| w[1] - w[0]).collect();
    if gaps.is_empty() {
        return None;
    }
    gaps.sort_unstable();
    Some(1e9 / gaps[gaps.len() / 2] as f64)
}

/// Splits a log into ticks: a tick ends right before a keypoint topic would
/// repeat. Commands ride along with the tick they appear in.
pub fn replay_ticks(frames: &[TopicFrame]) -> Vec<std::ops::Range<usize>> {
    let mut ticks = Vec::new();
    let mut start = 0;
    let mut seen: Vec<&str> = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        if is_keypoint_topic(&f.topic) {
            if seen.contains(&f.topic.as_str()) {
                ticks.push(start..i);
                start = i;
                seen.clear();
            }
            seen.push(&f.topic);
        }
    }
    if start < frames.len() {
        ticks.push(start..frames.len());
    }
    ticks
}

#[derive(Debug, Clone)]
pub enum Source {
    Scripted(ScriptedSource),
    Replay(Arc<Vec<TopicFrame>>),
    Gateway,
}

#[derive(Debug, Clone)]
pub struct DetectorPlan {
    pub source: Source,
    pub rate: f64,
    pub output: Endpoint,
    /// Bus the gateway publishes cockpit input on. Commands arriving here
    /// are always forwarded; keypoints only for the gateway source.
    pub gateway_bus: Option<Endpoint>,
    pub log_path: Option<PathBuf>,
    /// Number of operator stages a command must reach.
    pub command_acks: usize,
    /// Stop the whole session once a replay is exhausted.
    pub stop_at_end: bool,
}

/// Where a restarted detector picks up: the scripted tick or replay tick.
#[derive(Debug, Default)]
pub struct DetectorProgress {
    pub tick: AtomicU64,
    pub published: AtomicU64,
}

struct Log(Option<BufWriter<File>>);

impl Log {
    fn open(path: Option<&Path>) -> Result<Self, PipelineError> {
        let Some(path) = path else { return Ok(Self(None)) };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| PipelineError::Io { path: path.into(), source })?;
        Ok(Self(Some(BufWriter::new(file))))
    }

    fn write(&mut self, frame: &TopicFrame) {
        if let Some(w) = self.0.as_mut() {
            if let Ok(bytes) = encode_frame(frame) {
                if let Err(e) = w.write_all(&bytes) {
                    log::warn!("detector log write failed: {e}");
                    self.0 = None;
                }
            }
        }
    }

    fn flush(&mut self) {
        if let Some(w) = self.0.as_mut() {
            let _ = w.flush();
        }
    }
}

fn publish(out: &Publisher, log: &mut Log, topic: &str, capture_ts: u64, payload: Vec<u8>) -> Result<(), PipelineError> {
    let frame = TopicFrame::new(topic, capture_ts, payload);
    out.publish_frame(&frame)?;
    log.write(&frame);
    Ok(())
}

/// Runs until the context stops. Keypoints are stamped with the monotonic
/// publish instant, the origin of every latency sample downstream.
pub fn run(plan: &DetectorPlan, progress: &DetectorProgress, ctx: &Ctx) -> Result<(), PipelineError> {
    let out = register_publisher(&plan.output, QueuePolicy::bulk())?;
    let log = std::sync::Mutex::new(Log::open(plan.log_path.as_deref())?);
    std::thread::scope(|s| {
        let forwarder = plan.gateway_bus.as_ref().map(|bus| {
            let (out, log) = (&out, &log);
            s.spawn(move || forward_gateway(plan, bus, out, log, progress, ctx))
        });
        let result = match &plan.source {
            Source::Scripted(script) => run_scripted(plan, script, &out, &log, progress, ctx),
            Source::Replay(frames) => run_replay(plan, frames, &out, &log, progress, ctx),
            Source::Gateway => {
                while ctx.running() {
                    std::thread::sleep(Duration::from_millis(20));
                }
                Ok(())
            }
        };
        if result.is_err() {
            ctx.kill_local();
        }
        let forwarded = forwarder.map_or(Ok(()), |h| h.join().unwrap_or(Err(PipelineError::Killed)));
        log.lock().unwrap().flush();
        result.and(forwarded)
    })?;
    ctx.exit()
}

fn run_scripted(
    plan: &DetectorPlan,
    script: &ScriptedSource,
    out: &Publisher,
    log: &std::sync::Mutex<Log>,
    progress: &DetectorProgress,
    ctx: &Ctx,
) -> Result<(), PipelineError> {
    let period = period_ns(plan.rate);
    let mut schedule = DeadlineSchedule::new(monotonic_ns(), period);
    while ctx.running() {
        sleep_until(schedule.deadline());
        let k = progress.tick.fetch_add(1, Ordering::SeqCst);
        let now = monotonic_ns();
        let mut log = log.lock().unwrap();
        for frame in script.frames(k, period) {
            publish(out, &mut log, topics::keypoints(frame.hand), now, frame.encode())?;
            progress.published.fetch_add(1, Ordering::SeqCst);
        }
        drop(log);
        schedule.advance(monotonic_ns());
    }
    Ok(())
}

fn run_replay(
    plan: &DetectorPlan,
    frames: &[TopicFrame],
    out: &Publisher,
    log: &std::sync::Mutex<Log>,
    progress: &DetectorProgress,
    ctx: &Ctx,
) -> Result<(), PipelineError> {
    let ticks = replay_ticks(frames);
    let mut schedule = DeadlineSchedule::new(monotonic_ns(), period_ns(plan.rate));
    while ctx.running() {
        let k = progress.tick.load(Ordering::SeqCst) as usize;
        let Some(range) = ticks.get(k) else { break };
        sleep_until(schedule.deadline());
        let now = monotonic_ns();
        let mut log = log.lock().unwrap();
        for frame in &frames[range.clone()] {
            publish(out, &mut log, &frame.topic, now, frame.payload.clone())?;
            progress.published.fetch_add(1, Ordering::SeqCst);
        }
        drop(log);
        progress.tick.store(k as u64 + 1, Ordering::SeqCst);
        schedule.advance(monotonic_ns());
    }
    if ctx.running() && plan.stop_at_end {
        log::info!("replay finished after {} frames", progress.published.load(Ordering::SeqCst));
        // let the last commands drain through the pipeline
        crate::clock::sleep_while(Duration::from_millis(300), || !ctx.running());
        ctx.stop();
    }
    while ctx.running() {
        std::thread::sleep(Duration::from_millis(20));
    }
    Ok(())
}

fn forward_gateway(
    plan: &DetectorPlan,
    bus: &Endpoint,
    out: &Publisher,
    log: &std::sync::Mutex<Log>,
    progress: &DetectorProgress,
    ctx: &Ctx,
) -> Result<(), PipelineError> {
    let sub = Subscriber::new(bus, "");
    let forward_keypoints = matches!(plan.source, Source::Gateway);
    while ctx.running() {
        let Some(frame) = sub.recv_timeout(Duration::from_millis(20))? else { continue };
        if is_keypoint_topic(&frame.topic) {
            if forward_keypoints {
                publish(out, &mut log.lock().unwrap(), &frame.topic, frame.capture_ts, frame.payload)?;
                progress.published.fetch_add(1, Ordering::SeqCst);
            }
        } else if frame.topic == topics::PAUSE || frame.topic == topics::BUTTON {
            let token = HandshakeToken::new(plan.command_acks.max(1), COMMAND_ACK_TIMEOUT)?;
            if let Err(e) = out.publish_critical(&frame.topic, &frame.payload, &token) {
                log::warn!("command on `{}` not acknowledged: {e}", frame.topic);
            }
            log.lock().unwrap().write(&frame);
        }
    }
    Ok(())
}
