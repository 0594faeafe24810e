//! Interface: the fixed-rate control loop driving one simulated robot.

use std::collections::VecDeque;
use std::sync::Mutex;

use beavr_core::geometry::Transform;
use beavr_core::ik::{solve_dls, solve_pose_dls, IkError, IkSettings, PoseTarget};
use beavr_core::kinematics::{ChainError, JointState, KinematicChain};
use beavr_core::timing::{achieved_hz, jitter_ms, period_ns, DeadlineSchedule, TimingSample};
use crossbeam::channel::Sender;

use super::{Ctx, PipelineError};
use crate::clock::{monotonic_ns, sleep_until, RealtimeGuard, CONTROL_PRIORITY};
use crate::messages::{from_payload, to_payload, topics, CommandTarget, EndEffectorCommand, Pose, RobotMetrics, RobotState};
use crate::netcore::{register_publisher, Endpoint, QueuePolicy, RetryPolicy, Subscriber};

/// Commands kept per robot before the oldest is dropped.
const COMMAND_HWM: usize = 2;

/// World pose of a marker: its link pose translated by the marker offset.
pub fn marker_pose(chain: &KinematicChain, q: &JointState, marker: &str) -> Result<Transform, ChainError> {
    let m = chain.marker(marker)?;
    let link = match m.joint {
        Some(j) => chain.link_poses(&q.q)?[j],
        None => Transform::identity(),
    };
    Ok(link * Transform::from_translation(m.offset))
}

/// Outcome of applying one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub q_prev: Vec<f64>,
    pub blocked: bool,
    pub iterations: usize,
    pub residual: f64,
}

/// Kinematic robot: IK results are applied instantly, with no dynamics.
#[derive(Debug, Clone)]
pub struct SimRobot {
    name: String,
    chain: KinematicChain,
    marker: String,
    q: JointState,
}

impl SimRobot {
    pub fn new(name: impl Into<String>, chain: KinematicChain, marker: impl Into<String>) -> Result<Self, ChainError> {
        let marker = marker.into();
        chain.marker(&marker)?;
        let q = chain.home();
        Ok(Self { name: name.into(), chain, marker, q })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn chain(&self) -> &KinematicChain {
        &self.chain
    }

    pub fn q(&self) -> &JointState {
        &self.q
    }

    pub fn set_q(&mut self, q: JointState) -> Result<(), ChainError> {
        self.chain.check_dimension(&q.q)?;
        self.q = q;
        Ok(())
    }

    pub fn pose(&self) -> Transform {
        marker_pose(&self.chain, &self.q, &self.marker).expect("marker checked at construction")
    }

    /// Warm-started IK toward `target`. A collision-blocked solve leaves `q`
    /// untouched.
    pub fn apply(&mut self, target: &CommandTarget, settings: &IkSettings) -> Result<Applied, IkError> {
        let result = match target {
            CommandTarget::Arm { pose } => {
                let goal = PoseTarget::new(self.marker.clone(), pose.position(), pose.quaternion());
                solve_pose_dls(&self.chain, &self.q, &goal, settings)?
            }
            CommandTarget::Hand { targets } => solve_dls(&self.chain, &self.q, targets, settings)?,
        };
        let q_prev = self.q.q.clone();
        if !result.collision_blocked {
            self.q = result.q;
        }
        Ok(Applied { q_prev, blocked: result.collision_blocked, iterations: result.iterations, residual: result.residual })
    }

    pub fn state(&self, seq: u64, command_seq: Option<u64>, q_prev: Vec<f64>, apply_ts: u64, blocked: bool) -> RobotState {
        RobotState {
            robot: self.name.clone(),
            seq,
            command_seq,
            q: self.q.q.clone(),
            q_prev,
            pose: Pose::from_transform(&self.pose()),
            apply_ts,
            blocked,
        }
    }
}

/// One control tick, as reported to the session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TickRecord {
    pub robot: usize,
    pub sample: TimingSample,
    /// Commands received this tick that were never applied.
    pub stale: u64,
    /// Deadlines skipped after this tick overran.
    pub skipped: u64,
    pub blocked: bool,
}

#[derive(Debug, Clone)]
pub struct InterfacePlan {
    pub index: usize,
    pub rate: f64,
    pub commands: Endpoint,
    pub states: Endpoint,
    pub ik: IkSettings,
}

/// Robot state that survives interface restarts.
#[derive(Debug)]
pub struct InterfaceState {
    pub robot: SimRobot,
    pub last_seq: Option<u64>,
    pub tick: u64,
}

impl InterfaceState {
    pub fn new(robot: SimRobot) -> Self {
        Self { robot, last_seq: None, tick: 0 }
    }
}

/// Rolling one-second window for the live metrics topic.
struct LiveWindow {
    send: VecDeque<u64>,
    latency: VecDeque<f64>,
    cap: usize,
}

impl LiveWindow {
    fn push(&mut self, s: &TimingSample) {
        self.send.push_back(s.send_ts);
        if self.send.len() > self.cap {
            self.send.pop_front();
        }
        if let Some(l) = s.latency_ns() {
            self.latency.push_back(l as f64 / 1e6);
            if self.latency.len() > self.cap {
                self.latency.pop_front();
            }
        }
    }

    fn metrics(&mut self, robot: &str) -> RobotMetrics {
        let send: Vec<u64> = self.send.iter().copied().collect();
        let latency = if self.latency.is_empty() { 0.0 } else { self.latency.iter().sum::<f64>() / self.latency.len() as f64 };
        RobotMetrics {
            robot: robot.to_owned(),
            hz: achieved_hz(&send).unwrap_or(0.0),
            jitter_ms: jitter_ms(&send).unwrap_or(0.0),
            latency_ms: latency,
        }
    }
}

/// Ticks on absolute deadlines until the context stops. Each tick applies
/// the freshest unseen command, or re-publishes the held state when there is
/// none.
pub fn run(
    plan: &InterfacePlan,
    state: &Mutex<InterfaceState>,
    ticks: Option<&Sender<TickRecord>>,
    ctx: &Ctx,
) -> Result<(), PipelineError> {
    let name = state.lock().unwrap().robot.name().to_owned();
    let topic = topics::endeff(&name);
    let commands = Subscriber::with_options(&plan.commands, &topic, RetryPolicy::default(), COMMAND_HWM);
    let states = register_publisher(&plan.states, QueuePolicy::bulk())?;
    let state_topic = topics::robot_state(&name);
    let metrics_topic = topics::metrics(&name);
    let rate_ticks = plan.rate.ceil() as usize;
    let mut live = LiveWindow { send: VecDeque::new(), latency: VecDeque::new(), cap: rate_ticks.max(2) };
    let mut inbox_dropped = 0;

    let _realtime = RealtimeGuard::enter(CONTROL_PRIORITY);
    let period = period_ns(plan.rate);
    let mut schedule = DeadlineSchedule::new(monotonic_ns() + period, period);
    while ctx.running() {
        sleep_until(schedule.deadline());
        let send_ts = monotonic_ns();
        let mut st = state.lock().unwrap();

        let mut freshest: Option<EndEffectorCommand> = None;
        let mut received = 0u64;
        for frame in commands.drain()? {
            if frame.topic != topic {
                continue;
            }
            received += 1;
            match from_payload::<EndEffectorCommand>(&frame.payload) {
                Ok(c) if st.last_seq.is_none_or(|last| c.seq > last) && freshest.as_ref().is_none_or(|f| c.seq > f.seq) => {
                    freshest = Some(c)
                }
                Ok(_) => {}
                Err(e) => log::warn!("{name}: malformed command: {e}"),
            }
        }
        let dropped_now = commands.dropped();
        let mut stale = received - u64::from(freshest.is_some()) + (dropped_now - inbox_dropped);
        inbox_dropped = dropped_now;

        let (q_prev, blocked, capture_ts) = match &freshest {
            Some(cmd) => match st.robot.apply(&cmd.target, &plan.ik) {
                Ok(applied) => {
                    st.last_seq = Some(cmd.seq);
                    (applied.q_prev, applied.blocked, Some(cmd.capture_ts))
                }
                Err(e) => {
                    log::warn!("{name}: command {} rejected: {e}", cmd.seq);
                    stale += 1;
                    (st.robot.q().q.clone(), false, None)
                }
            },
            None => (st.robot.q().q.clone(), false, None),
        };
        let apply_ts = monotonic_ns();
        let tick = st.tick;
        st.tick += 1;
        let robot_state = st.robot.state(tick, st.last_seq, q_prev, apply_ts, blocked);
        drop(st);
        states.publish_stamped(&state_topic, apply_ts, &to_payload(&robot_state))?;

        let sample = TimingSample { send_ts, apply_ts, capture_ts };
        live.push(&sample);
        if tick % rate_ticks as u64 == rate_ticks as u64 - 1 {
            states.publish_stamped(&metrics_topic, apply_ts, &to_payload(&live.metrics(&name)))?;
        }
        let (_, skipped) = schedule.advance(monotonic_ns());
        if let Some(tx) = ticks {
            let _ = tx.send(TickRecord { robot: plan.index, sample, stale, skipped, blocked });
        }
    }
    ctx.exit()
}
