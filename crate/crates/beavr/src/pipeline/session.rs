//! Session supervisor: starts every component, restarts the ones that die,
//! and gathers per-tick timing until stopped.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use beavr_core::kinematics::JointState;
use beavr_core::timing::{period_ns, DeadlineSchedule, TimingSample};
use crossbeam::channel::{unbounded, Receiver};

use super::detector::{self, DetectorPlan, DetectorProgress, ScriptedSource, Source};
use super::interface::{self, InterfacePlan, InterfaceState, SimRobot, TickRecord};
use super::operator::{self, OperatorPlan, RetargetRobot, RetargetStage};
use super::{Ctx, PipelineError};
use crate::clock::{monotonic_ns, sleep_until, sleep_while};
use crate::config::{SessionConfig, SourceKind};
use crate::messages::{from_payload, topics, CommandKind, RobotState, SessionCommand};
use crate::netcore::{is_registered, register_publisher, Endpoint, NetError, Publisher, QueuePolicy, Subscriber};
use crate::recorder::{placeholder_image, DatasetSpec, DatasetWriter, EpisodeMeta, NewFrame, RobotLayout};

type Body = Arc<dyn Fn(&Ctx) -> Result<(), PipelineError> + Send + Sync>;

#[derive(Debug)]
struct Slot {
    name: String,
    kill: Arc<AtomicBool>,
    alive: AtomicBool,
    restarts: AtomicU32,
}

fn supervise(slot: Arc<Slot>, stop: Arc<AtomicBool>, delay: Duration, body: Body) -> std::io::Result<JoinHandle<()>> {
    std::thread::Builder::new().name(format!("supervise {}", slot.name)).spawn(move || loop {
        slot.kill.store(false, Ordering::SeqCst);
        slot.alive.store(true, Ordering::SeqCst);
        let ctx = Ctx::new(stop.clone(), slot.kill.clone());
        let run = body.clone();
        let outcome = std::thread::Builder::new()
            .name(slot.name.clone())
            .spawn(move || run(&ctx))
            .map_err(|e| log::error!("{}: cannot spawn: {e}", slot.name))
            .map(|h| h.join());
        slot.alive.store(false, Ordering::SeqCst);
        if stop.load(Ordering::SeqCst) {
            return;
        }
        match outcome {
            Ok(Ok(Ok(()))) => log::warn!("{} exited; restarting", slot.name),
            Ok(Ok(Err(e))) => log::warn!("{} failed: {e}; restarting", slot.name),
            Ok(Err(_)) => log::warn!("{} panicked; restarting", slot.name),
            Err(()) => {}
        }
        slot.restarts.fetch_add(1, Ordering::SeqCst);
        sleep_while(delay, || stop.load(Ordering::SeqCst));
        if stop.load(Ordering::SeqCst) {
            return;
        }
    })
}

/// Every control tick one robot ran over a session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RobotRun {
    pub name: String,
    pub ticks: Vec<TickRecord>,
}

impl RobotRun {
    pub fn samples(&self) -> Vec<TimingSample> {
        self.ticks.iter().map(|t| t.sample).collect()
    }

    pub fn send_ts(&self) -> Vec<u64> {
        self.ticks.iter().map(|t| t.sample.send_ts).collect()
    }

    /// Commands received but never applied: superseded, out of order or
    /// dropped at the inbox.
    pub fn stale(&self) -> u64 {
        self.ticks.iter().map(|t| t.stale).sum()
    }

    pub fn skipped_ticks(&self) -> u64 {
        self.ticks.iter().map(|t| t.skipped).sum()
    }

    pub fn blocked_ticks(&self) -> u64 {
        self.ticks.iter().filter(|t| t.blocked).count() as u64
    }

    /// Ticks sent within `[start_ns, end_ns]`.
    pub fn window(&self, start_ns: u64, end_ns: u64) -> RobotRun {
        RobotRun {
            name: self.name.clone(),
            ticks: self.ticks.iter().filter(|t| (start_ns..=end_ns).contains(&t.sample.send_ts)).copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub name: String,
    pub rate_hz: f64,
    pub started_ns: u64,
    pub stopped_ns: u64,
    pub robots: Vec<RobotRun>,
    pub restarts: BTreeMap<String, u32>,
    pub episode: Option<EpisodeMeta>,
}

impl SessionReport {
    pub fn duration_s(&self) -> f64 {
        (self.stopped_ns - self.started_ns) as f64 * 1e-9
    }
}

/// A running session. Dropping it stops everything.
pub struct Session {
    config: SessionConfig,
    stop: Arc<AtomicBool>,
    slots: Vec<Arc<Slot>>,
    supervisors: Vec<JoinHandle<()>>,
    helpers: Vec<JoinHandle<()>>,
    recorder: Option<JoinHandle<Result<Option<EpisodeMeta>, PipelineError>>>,
    runs: Arc<Mutex<Vec<RobotRun>>>,
    robots: Vec<Arc<Mutex<InterfaceState>>>,
    detector_progress: Arc<DetectorProgress>,
    publishers: Vec<Publisher>,
    started_ns: u64,
}

fn claim(endpoint: &Endpoint, policy: QueuePolicy) -> Result<Publisher, PipelineError> {
    if is_registered(endpoint) {
        let source = std::io::Error::new(std::io::ErrorKind::AddrInUse, "already bound by another session in this process");
        return Err(NetError::Bind { endpoint: endpoint.clone(), source }.into());
    }
    Ok(register_publisher(endpoint, policy)?)
}

impl Session {
    /// Validates the config, binds every endpoint and starts the components.
    /// A port that is taken fails here, naming the endpoint.
    pub fn start(config: SessionConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let chains = config.load_chains()?;
        let ports = &config.ports;
        let (detector_ep, transformed_ep, operator_ep, interface_ep) =
            (ports.detector()?, ports.transformed()?, ports.operator()?, ports.interface()?);
        let source = match config.detector.source {
            SourceKind::Scripted => Source::Scripted(ScriptedSource::new(config.detector.seed, &config.hands())),
            SourceKind::Replay => {
                let path = config.detector.replay_path.as_deref().expect("validated");
                Source::Replay(Arc::new(detector::read_log(path)?))
            }
            SourceKind::Gateway => Source::Gateway,
        };
        let publishers = vec![
            claim(&detector_ep, QueuePolicy::bulk())?,
            claim(&transformed_ep, QueuePolicy::bulk())?,
            claim(&operator_ep, QueuePolicy::bulk())?,
            claim(&interface_ep, QueuePolicy::bulk())?,
        ];

        let robots: Vec<Arc<Mutex<InterfaceState>>> = config
            .robots
            .iter()
            .zip(&chains)
            .map(|(r, chain)| {
                Ok(Arc::new(Mutex::new(InterfaceState::new(SimRobot::new(&r.name, chain.clone(), r.end_effector())?))))
            })
            .collect::<Result<_, PipelineError>>()?;

        let stop = Arc::new(AtomicBool::new(false));
        let delay = Duration::from_millis(config.supervisor.restart_delay_ms);
        let mut slots = Vec::new();
        let mut supervisors = Vec::new();
        let mut spawn = |name: String, body: Body| -> Result<(), PipelineError> {
            let slot = Arc::new(Slot { name, kill: Arc::default(), alive: AtomicBool::new(false), restarts: AtomicU32::new(0) });
            let handle = supervise(slot.clone(), stop.clone(), delay, body)
                .map_err(|source| PipelineError::Io { path: slot.name.clone().into(), source })?;
            slots.push(slot);
            supervisors.push(handle);
            Ok(())
        };

        let runs = Arc::new(Mutex::new(
            config.robots.iter().map(|r| RobotRun { name: r.name.clone(), ..RobotRun::default() }).collect::<Vec<_>>(),
        ));
        let (tick_tx, tick_rx) = unbounded::<TickRecord>();
        let mut helpers = vec![spawn_collector(tick_rx, runs.clone())];
        helpers.push(spawn_stop_watcher(operator_ep.clone(), stop.clone()));

        let recorder = match &config.record {
            Some(rec) => {
                let spec = DatasetSpec {
                    fps: config.rate,
                    robots: config
                        .robots
                        .iter()
                        .zip(&chains)
                        .map(|(r, c)| RobotLayout { name: r.name.clone(), dof: c.dof() })
                        .collect(),
                    format: rec.format,
                    images: rec.images,
                };
                let dataset = DatasetWriter::create(&rec.path, &spec)?;
                let names: Vec<String> = config.robots.iter().map(|r| r.name.clone()).collect();
                let (task, rate, images, stop) = (rec.task.clone(), config.rate, rec.images, stop.clone());
                let ep = interface_ep.clone();
                Some(
                    std::thread::Builder::new()
                        .name("recorder".into())
                        .spawn(move || record(&dataset, &task, &names, rate, images, &ep, &stop))
                        .map_err(|source| PipelineError::Io { path: "recorder".into(), source })?,
                )
            }
            None => None,
        };

        let detector_progress = Arc::new(DetectorProgress::default());
        let plan = DetectorPlan {
            source,
            rate: config.detector.rate,
            output: detector_ep.clone(),
            gateway_bus: Some(ports.gateway_bus()?),
            log_path: config.detector.log_path.clone(),
            command_acks: config.hands().len(),
            stop_at_end: true,
        };
        let progress = detector_progress.clone();
        spawn("detector".into(), Arc::new(move |ctx| detector::run(&plan, &progress, ctx)))?;

        for (i, hand) in config.hands().into_iter().enumerate() {
            let bound = config
                .robots
                .iter()
                .zip(&chains)
                .filter(|(r, _)| r.hand == hand)
                .map(|(r, c)| RetargetRobot::from_chain(&r.name, r.role, c, r.end_effector()))
                .collect::<Result<Vec<_>, _>>()?;
            let stage = Arc::new(Mutex::new(RetargetStage::new(
                hand,
                bound,
                config.filters.alpha,
                config.operator.translation_scale,
                config.operator.scale_profile,
            )));
            let plan = OperatorPlan {
                hand,
                window: config.filters.window,
                detector: detector_ep.clone(),
                transformed: transformed_ep.clone(),
                operator: operator_ep.clone(),
                forward_commands: i == 0,
            };
            spawn(format!("operator/{hand}"), Arc::new(move |ctx| operator::run(&plan, &stage, ctx)))?;
        }

        for (index, (r, state)) in config.robots.iter().zip(&robots).enumerate() {
            let plan = InterfacePlan {
                index,
                rate: config.rate,
                commands: operator_ep.clone(),
                states: interface_ep.clone(),
                ik: config.ik,
            };
            let (state, tx) = (state.clone(), tick_tx.clone());
            spawn(format!("interface/{}", r.name), Arc::new(move |ctx| interface::run(&plan, &state, Some(&tx), ctx)))?;
        }
        drop(tick_tx);

        Ok(Self {
            config,
            stop,
            slots,
            supervisors,
            helpers,
            recorder,
            runs,
            robots,
            detector_progress,
            publishers,
            started_ns: monotonic_ns(),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn components(&self) -> Vec<String> {
        self.slots.iter().map(|s| s.name.clone()).collect()
    }

    fn slot(&self, component: &str) -> Option<&Arc<Slot>> {
        self.slots.iter().find(|s| s.name == component)
    }

    /// Kills a component as a crash would; the supervisor restarts it after
    /// the configured delay. Returns false for an unknown name.
    pub fn kill(&self, component: &str) -> bool {
        self.slot(component).map(|s| s.kill.store(true, Ordering::SeqCst)).is_some()
    }

    pub fn is_alive(&self, component: &str) -> bool {
        self.slot(component).is_some_and(|s| s.alive.load(Ordering::SeqCst) && !s.kill.load(Ordering::SeqCst))
    }

    pub fn restarts(&self, component: &str) -> u32 {
        self.slot(component).map_or(0, |s| s.restarts.load(Ordering::SeqCst))
    }

    pub fn joint_state(&self, robot: &str) -> Option<JointState> {
        self.robots.iter().map(|r| r.lock().unwrap()).find(|r| r.robot.name() == robot).map(|r| r.robot.q().clone())
    }

    /// Keypoint frames the detector has published so far.
    pub fn frames_published(&self) -> u64 {
        self.detector_progress.published.load(Ordering::SeqCst)
    }

    /// Snapshot of the timing gathered so far.
    pub fn runs(&self) -> Vec<RobotRun> {
        self.runs.lock().unwrap().clone()
    }

    pub fn stop_requested(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    pub fn request_stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    /// Blocks until a stop command arrives, a replay ends or `interrupt`
    /// returns true, then shuts down.
    pub fn wait(self, interrupt: impl Fn() -> bool) -> Result<SessionReport, PipelineError> {
        while !self.stop_requested() && !interrupt() {
            std::thread::sleep(Duration::from_millis(20));
        }
        self.stop()
    }

    pub fn stop(mut self) -> Result<SessionReport, PipelineError> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Result<SessionReport, PipelineError> {
        self.stop.store(true, Ordering::SeqCst);
        let stopped_ns = monotonic_ns();
        for h in self.supervisors.drain(..) {
            let _ = h.join();
        }
        for h in self.helpers.drain(..) {
            let _ = h.join();
        }
        let episode = match self.recorder.take() {
            Some(h) => h.join().unwrap_or(Ok(None))?,
            None => None,
        };
        for p in self.publishers.drain(..) {
            p.shutdown();
        }
        Ok(SessionReport {
            name: self.config.name.clone(),
            rate_hz: self.config.rate,
            started_ns: self.started_ns,
            stopped_ns,
            robots: self.runs(),
            restarts: self.slots.iter().map(|s| (s.name.clone(), s.restarts.load(Ordering::SeqCst))).collect(),
            episode,
        })
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        if !self.supervisors.is_empty() || !self.publishers.is_empty() {
            let _ = self.shutdown();
        }
    }
}

fn spawn_collector(rx: Receiver<TickRecord>, runs: Arc<Mutex<Vec<RobotRun>>>) -> JoinHandle<()> {
    std::thread::spawn(move || {
        for t in rx {
            runs.lock().unwrap()[t.robot].ticks.push(t);
        }
    })
}

/// Stops the session when a stop command reaches the command endpoint.
fn spawn_stop_watcher(operator: Endpoint, stop: Arc<AtomicBool>) -> JoinHandle<()> {
    std::thread::spawn(move || {
        let sub = Subscriber::new(&operator, topics::PAUSE);
        while !stop.load(Ordering::SeqCst) {
            let Ok(Some(frame)) = sub.recv_timeout(Duration::from_millis(20)) else { continue };
            if frame.topic == topics::PAUSE
                && from_payload::<SessionCommand>(&frame.payload).is_ok_and(|c| c.kind == CommandKind::Stop)
            {
                log::info!("stop command received");
                stop.store(true, Ordering::SeqCst);
            }
        }
    })
}

/// Samples the latest state of every robot once per control period and
/// writes one episode: observation = joint state before the tick's command,
/// action = joint state it commanded.
fn record(
    dataset: &DatasetWriter,
    task: &str,
    robots: &[String],
    rate: f64,
    images: bool,
    states: &Endpoint,
    stop: &AtomicBool,
) -> Result<Option<EpisodeMeta>, PipelineError> {
    let sub = Subscriber::new(states, topics::ROBOT_STATE_PREFIX);
    let mut latest: Vec<Option<RobotState>> = vec![None; robots.len()];
    let mut episode = dataset.begin_episode(task);
    let period = period_ns(rate);
    let mut schedule = DeadlineSchedule::new(monotonic_ns() + period, period);
    let mut first_tick = None;
    while !stop.load(Ordering::SeqCst) {
        sleep_until(schedule.deadline());
        for frame in sub.drain()? {
            let Ok(state) = from_payload::<RobotState>(&frame.payload) else { continue };
            if let Some(i) = robots.iter().position(|r| *r == state.robot) {
                latest[i] = Some(state);
            }
        }
        if latest.iter().all(Option::is_some) {
            let k = schedule.tick() - *first_tick.get_or_insert(schedule.tick());
            let all = latest.iter().flatten();
            episode.append_frame(NewFrame {
                observation_state: all.clone().flat_map(|s| s.q_prev.iter().copied()).collect(),
                action: all.flat_map(|s| s.q.iter().copied()).collect(),
                timestamp: Some(k as f64 / rate),
                image: images.then(|| placeholder_image(k)),
            })?;
        }
        schedule.advance(monotonic_ns());
    }
    if episode.is_empty() {
        return Ok(None);
    }
    Ok(Some(episode.finalize()?))
}
