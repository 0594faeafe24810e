//! Operator: keypoints in, end-effector commands out.
//!
//! The transform stage smooths each frame, extracts the hand basis and
//! publishes the result on the internal `TRANSFORMED_<hand>` topic. The
//! retarget stage turns hand motion since calibration into arm pose targets
//! and fingertip IK targets for every robot bound to that hand.

use std::sync::Mutex;
use std::time::Duration;

use beavr_core::filters::{ComplementaryFilter, FilterError, MovingAverage};
use beavr_core::geometry::{
    compose_target, hand_basis, transform_to_pose, wrist_relative, GeometryError, ScaleProfile, Transform, Vec3,
};
use beavr_core::ik::fingertip_targets_from_hand;
use beavr_core::keypoints::{Hand, KeypointFrame, KEYPOINT_COUNT};
use beavr_core::kinematics::KinematicChain;
use nalgebra::Matrix3;

use super::{Ctx, PipelineError};
use crate::config::Role;
use crate::messages::{
    from_payload, to_payload, topics, CommandKind, CommandTarget, EndEffectorCommand, Pose, SessionCommand, Transformed,
    TransformedHand,
};
use crate::netcore::{register_publisher, Endpoint, HandshakeToken, QueuePolicy, Subscriber};

const COMMAND_ACK_TIMEOUT: Duration = Duration::from_millis(300);

/// Rotation taking robot-frame vectors to the Y-up VR frame: robot +X
/// (forward) is VR −Z, robot +Y (left) is VR −X, robot +Z (up) is VR +Y.
pub fn default_robot_to_vr() -> Transform {
    let vr_to_robot = Matrix3::new(0.0, 0.0, -1.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    Transform::new(vr_to_robot.transpose(), Vec3::zeros()).expect("fixed proper rotation")
}

#[derive(Debug, Clone)]
pub struct TransformStage {
    hand: Hand,
    smoother: MovingAverage,
}

impl TransformStage {
    pub fn new(hand: Hand, window: usize) -> Result<Self, FilterError> {
        Ok(Self { hand, smoother: MovingAverage::new(window)? })
    }

    pub fn hand(&self) -> Hand {
        self.hand
    }

    /// Moving average, then wrist-relative keypoints and the hand basis.
    pub fn step(&mut self, frame: &KeypointFrame, capture_ts: u64) -> Result<TransformedHand, GeometryError> {
        let smoothed = frame.with_flat(&self.smoother.step(&frame.to_flat()).expect("fixed frame size"));
        let basis = hand_basis(&smoothed)?;
        Ok(TransformedHand {
            hand: self.hand,
            capture_ts,
            basis: Pose::from_transform(&basis),
            keypoints: wrist_relative(&smoothed).to_flat(),
        })
    }
}

/// A robot driven by one operator hand.
#[derive(Debug, Clone)]
pub struct RetargetRobot {
    pub name: String,
    pub role: Role,
    /// End-effector pose at the robot's home configuration.
    pub home: Transform,
    next_seq: u64,
    anchor: Transform,
    filter: Option<ComplementaryFilter>,
}

impl RetargetRobot {
    pub fn new(name: impl Into<String>, role: Role, home: Transform) -> Self {
        Self { name: name.into(), role, home, next_seq: 0, anchor: home, filter: None }
    }

    /// Home end-effector pose of `chain` at its home configuration.
    pub fn from_chain(name: impl Into<String>, role: Role, chain: &KinematicChain, marker: &str) -> Result<Self, PipelineError> {
        let home = super::interface::marker_pose(chain, &chain.home(), marker)?;
        Ok(Self::new(name, role, home))
    }

    /// Last filtered arm target, or home before any command.
    pub fn commanded(&self) -> Transform {
        self.filter.as_ref().map_or(self.home, |f| {
            let (p, q) = f.state();
            Transform::from_pose(p, &q)
        })
    }
}

#[derive(Debug, Clone)]
pub struct RetargetStage {
    hand: Hand,
    robots: Vec<RetargetRobot>,
    alpha: f64,
    translation_scale: f64,
    profile: ScaleProfile,
    robot_to_vr: Transform,
    /// Hand basis latched at calibration.
    reference: Option<Transform>,
    paused: bool,
}

impl RetargetStage {
    pub fn new(hand: Hand, robots: Vec<RetargetRobot>, alpha: f64, translation_scale: f64, profile: ScaleProfile) -> Self {
        Self {
            hand,
            robots,
            alpha,
            translation_scale,
            profile,
            robot_to_vr: default_robot_to_vr(),
            reference: None,
            paused: false,
        }
    }

    pub fn with_robot_to_vr(mut self, h_r_v: Transform) -> Self {
        self.robot_to_vr = h_r_v;
        self
    }

    pub fn hand(&self) -> Hand {
        self.hand
    }

    pub fn robots(&self) -> &[RetargetRobot] {
        &self.robots
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    /// Forgets the hand reference so the next frame re-calibrates.
    pub fn recalibrate(&mut self) {
        self.reference = None;
    }

    pub fn on_command(&mut self, command: &SessionCommand) {
        match command.kind {
            CommandKind::Pause => self.paused = true,
            CommandKind::Resume => {
                self.paused = false;
                self.recalibrate();
            }
            CommandKind::Button | CommandKind::Stop => {}
        }
    }

    /// One command per bound robot; nothing while paused or when the frame
    /// cannot be used.
    pub fn on_hand(&mut self, t: &TransformedHand) -> Vec<EndEffectorCommand> {
        if self.paused || t.keypoints.len() != 3 * KEYPOINT_COUNT {
            return Vec::new();
        }
        let current = t.basis.to_transform();
        let reference = *self.reference.get_or_insert_with(|| {
            for r in &mut self.robots {
                r.anchor = r.commanded();
            }
            current
        });
        let relative_rotation = current.rotation() * reference.rotation().transpose();
        let displacement = (current.translation() - reference.translation()) * self.translation_scale;
        let Ok(h_ht_hi) = Transform::new(relative_rotation, displacement) else { return Vec::new() };

        let mut frame = KeypointFrame { timestamp_ns: t.capture_ts, hand: t.hand, points: [Vec3::zeros(); KEYPOINT_COUNT] };
        frame = frame.with_flat(&t.keypoints);

        let mut out = Vec::with_capacity(self.robots.len());
        for r in &mut self.robots {
            let target = match r.role {
                Role::Arm => {
                    let goal = compose_target(&r.anchor, &self.robot_to_vr, &h_ht_hi);
                    let (p, q) = transform_to_pose(&goal);
                    let alpha = self.alpha;
                    let filter = r.filter.get_or_insert_with(|| {
                        let (p0, q0) = transform_to_pose(&r.anchor);
                        ComplementaryFilter::new(alpha, p0, q0).expect("alpha validated by config")
                    });
                    let (fp, fq) = filter.step(&p, &q);
                    CommandTarget::Arm { pose: Pose::from_transform(&Transform::from_pose(fp, &fq)) }
                }
                Role::Hand => CommandTarget::Hand { targets: fingertip_targets_from_hand(&frame, &self.profile) },
            };
            out.push(EndEffectorCommand { robot: r.name.clone(), seq: r.next_seq, capture_ts: t.capture_ts, target });
            r.next_seq += 1;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct OperatorPlan {
    pub hand: Hand,
    pub window: usize,
    pub detector: Endpoint,
    pub transformed: Endpoint,
    pub operator: Endpoint,
    /// The one operator that copies pause/button frames onto the command
    /// endpoint unchanged.
    pub forward_commands: bool,
}

/// Runs both stages until the context stops. `stage` outlives restarts so
/// sequence numbers and the filtered target carry over; a restarted
/// operator re-calibrates on its first frame.
pub fn run(plan: &OperatorPlan, stage: &Mutex<RetargetStage>, ctx: &Ctx) -> Result<(), PipelineError> {
    stage.lock().unwrap().recalibrate();
    let result = std::thread::scope(|s| {
        let transform = s.spawn(|| {
            let r = run_transform(plan, ctx);
            if r.is_err() {
                ctx.kill_local();
            }
            r
        });
        let retarget = run_retarget(plan, stage, ctx);
        if retarget.is_err() {
            ctx.kill_local();
        }
        let transform = transform.join().unwrap_or(Err(PipelineError::Killed));
        retarget.and(transform)
    });
    result?;
    ctx.exit()
}

fn run_transform(plan: &OperatorPlan, ctx: &Ctx) -> Result<(), PipelineError> {
    let mut stage = TransformStage::new(plan.hand, plan.window)?;
    let input = Subscriber::new(&plan.detector, "");
    let output = register_publisher(&plan.transformed, QueuePolicy::bulk())?;
    let commands = register_publisher(&plan.operator, QueuePolicy::bulk())?;
    let topic = topics::transformed(plan.hand);
    while ctx.running() {
        let Some(frame) = input.recv_timeout(Duration::from_millis(20))? else { continue };
        if frame.topic == topics::keypoints(plan.hand) {
            let keypoints = match KeypointFrame::decode(&frame.payload) {
                Ok(k) => k,
                Err(e) => {
                    log::warn!("dropping malformed keypoint frame: {e}");
                    continue;
                }
            };
            match stage.step(&keypoints, frame.capture_ts) {
                Ok(t) => {
                    output.publish_stamped(&topic, frame.capture_ts, &to_payload(&Transformed::Hand(t)))?;
                }
                Err(e) => log::debug!("frame skipped: {e}"),
            }
        } else if frame.topic == topics::PAUSE || frame.topic == topics::BUTTON {
            if plan.forward_commands {
                commands.publish_stamped(&frame.topic, frame.capture_ts, &frame.payload)?;
            }
            let Ok(command) = from_payload::<SessionCommand>(&frame.payload) else {
                log::warn!("dropping malformed command on `{}`", frame.topic);
                continue;
            };
            let token = HandshakeToken::new(1, COMMAND_ACK_TIMEOUT)?;
            if let Err(e) = output.publish_critical(&topic, &to_payload(&Transformed::Command(command)), &token) {
                log::warn!("retarget stage missed a command: {e}");
            }
        }
    }
    Ok(())
}

fn run_retarget(plan: &OperatorPlan, stage: &Mutex<RetargetStage>, ctx: &Ctx) -> Result<(), PipelineError> {
    let input = Subscriber::new(&plan.transformed, &topics::transformed(plan.hand));
    let output = register_publisher(&plan.operator, QueuePolicy::bulk())?;
    while ctx.running() {
        let Some(frame) = input.recv_timeout(Duration::from_millis(20))? else { continue };
        let message = match from_payload::<Transformed>(&frame.payload) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("dropping malformed transformed frame: {e}");
                continue;
            }
        };
        let commands = {
            let mut stage = stage.lock().unwrap();
            match message {
                Transformed::Hand(t) => stage.on_hand(&t),
                Transformed::Command(c) => {
                    stage.on_command(&c);
                    Vec::new()
                }
            }
        };
        for c in commands {
            output.publish_stamped(&topics::endeff(&c.robot), c.capture_ts, &to_payload(&c))?;
        }
    }
    Ok(())
}
