//! Detector → operator → interface components, the session supervisor, the
//! think–act loop and the WebSocket gateway.
//!
//! Components are threads that share nothing but netcore endpoints. Each runs
//! under a supervisor that restarts it after a crash or a kill, so a failing
//! stage never takes its peers down.

pub mod detector;
pub mod gateway;
pub mod interface;
pub mod operator;
pub mod session;
pub mod think_act;

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use beavr_core::filters::FilterError;
use beavr_core::ik::IkError;
use beavr_core::kinematics::ChainError;
use thiserror::Error;

use crate::config::ConfigError;
use crate::netcore::NetError;
use crate::recorder::RecorderError;

pub use detector::{read_log, ScriptedSource};
pub use interface::SimRobot;
pub use operator::{RetargetStage, TransformStage};
pub use session::{RobotRun, Session, SessionReport};
pub use think_act::{think_act_loop, Policy, ScriptedPolicy, ThinkActConfig, ThinkActReport};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ik(#[from] IkError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Recorder(#[from] RecorderError),
    #[error("replay log {path}: {message}")]
    Replay { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("component killed")]
    Killed,
    #[error("gateway: {0}")]
    Gateway(String),
}

/// Run flags handed to a component body: the session-wide stop flag and the
/// component's own kill switch.
#[derive(Debug, Clone, Default)]
pub struct Ctx {
    stop: Arc<AtomicBool>,
    kill: Arc<AtomicBool>,
}

impl Ctx {
    pub fn new(stop: Arc<AtomicBool>, kill: Arc<AtomicBool>) -> Self {
        Self { stop, kill }
    }

    /// Context for running a component body directly, outside a session.
    pub fn standalone() -> Self {
        Self::default()
    }

    pub fn running(&self) -> bool {
        !self.stop.load(Ordering::SeqCst) && !self.kill.load(Ordering::SeqCst)
    }

    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    /// Ends this component's run; the supervisor restarts it.
    pub fn kill_local(&self) {
        self.kill.store(true, Ordering::SeqCst);
    }

    pub fn killed(&self) -> bool {
        self.kill.load(Ordering::SeqCst)
    }

    /// `Err(Killed)` if the kill switch ended the run, `Ok` on a clean stop.
    pub(crate) fn exit(&self) -> Result<(), PipelineError> {
        if self.killed() {
            Err(PipelineError::Killed)
        } else {
            Ok(())
        }
    }
}
