//! Session configuration file (TOML).

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use beavr_core::geometry::ScaleProfile;
use beavr_core::ik::IkSettings;
use beavr_core::keypoints::Hand;
use beavr_core::kinematics::KinematicChain;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{resolve_model, ModelError};
use crate::netcore::{Endpoint, NetError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("robot `{robot}`: {source}")]
    Model { robot: String, source: ModelError },
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Arm,
    Hand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    pub name: String,
    /// Bundled model name or path to a chain description.
    pub model: String,
    pub role: Role,
    #[serde(default = "default_hand")]
    pub hand: Hand,
    /// Marker whose pose is reported as the end effector; defaults to
    /// `tool` for arms and `middle_tip` for hands.
    #[serde(default)]
    pub end_effector: Option<String>,
}

fn default_hand() -> Hand {
    Hand::Right
}

impl RobotConfig {
    pub fn end_effector(&self) -> &str {
        match (&self.end_effector, self.role) {
            (Some(m), _) => m,
            (None, Role::Arm) => "tool",
            (None, Role::Hand) => "middle_tip",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Scripted,
    Replay,
    Gateway,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub source: SourceKind,
    pub seed: u64,
    /// Keypoint publishing rate, Hz.
    pub rate: f64,
    pub replay_path: Option<PathBuf>,
    /// Appends every published frame to this log when set.
    pub log_path: Option<PathBuf>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { source: SourceKind::Scripted, seed: 7, rate: 90.0, replay_path: None, log_path: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortConfig {
    pub host: String,
    pub detector: u16,
    pub transformed: u16,
    pub operator: u16,
    pub interface: u16,
    pub gateway_bus: u16,
}

impl Default for PortConfig {
    fn default() -> Self {
        Self { host: "127.0.0.1".into(), detector: 9000, transformed: 9002, operator: 10008, interface: 10010, gateway_bus: 9100 }
    }
}

impl PortConfig {
    pub fn detector(&self) -> Result<Endpoint, NetError> {
        Endpoint::new(self.host.clone(), self.detector)
    }
    pub fn transformed(&self) -> Result<Endpoint, NetError> {
        Endpoint::new(self.host.clone(), self.transformed)
    }
    pub fn operator(&self) -> Result<Endpoint, NetError> {
        Endpoint::new(self.host.clone(), self.operator)
    }
    pub fn interface(&self) -> Result<Endpoint, NetError> {
        Endpoint::new(self.host.clone(), self.interface)
    }
    pub fn gateway_bus(&self) -> Result<Endpoint, NetError> {
        Endpoint::new(self.host.clone(), self.gateway_bus)
    }

    /// Every bound port including the ack ports.
    fn all(&self) -> [u16; 5] {
        [self.detector, self.transformed, self.operator, self.interface, self.gateway_bus]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub window: usize,
    pub alpha: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { window: 5, alpha: 0.35 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorConfig {
    /// Embodiment scalar applied to wrist translation.
    pub translation_scale: f64,
    pub scale_profile: ScaleProfile,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self { translation_scale: 1.0, scale_profile: ScaleProfile::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    #[default]
    Parquet,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub format: DataFormat,
    #[serde(default = "default_task")]
    pub task: String,
    /// Adds the synthetic placeholder image column.
    #[serde(default)]
    pub images: bool,
}

fn default_task() -> String {
    "teleoperation".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisorConfig {
    pub restart_delay_ms: u64,
}

impl Default for SupervisorConfig {
    fn default() -> Self {
        Self { restart_delay_ms: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Interface control rate, Hz.
    pub rate: f64,
    pub robots: Vec<RobotConfig>,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub ports: PortConfig,
    #[serde(default)]
    pub filters: FilterConfig,
    #[serde(default)]
    pub ik: IkSettings,
    #[serde(default)]
    pub operator: OperatorConfig,
    #[serde(default)]
    pub record: Option<RecordConfig>,
    #[serde(default)]
    pub supervisor: SupervisorConfig,
}

fn default_name() -> String {
    "session".into()
}

impl SessionConfig {
    /// Config with every optional section at its default.
    pub fn new(name: impl Into<String>, rate: f64, robots: Vec<RobotConfig>) -> Self {
        Self {
            name: name.into(),
            rate,
            robots,
            detector: DetectorConfig::default(),
            ports: PortConfig::default(),
            filters: FilterConfig::default(),
            ik: IkSettings::default(),
            operator: OperatorConfig::default(),
            record: None,
            supervisor: SupervisorConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let de =
            toml::Deserializer::parse(text).map_err(|e| ConfigError::Parse { path: String::new(), message: e.to_string() })?;
        let config: SessionConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| ConfigError::Parse { path: e.path().to_string(), message: e.inner().message().to_string() })?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; relative model, replay, log and dataset paths are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut config = Self::from_toml_str(&text)?;
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        Ok(config)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        for robot in &mut self.robots {
            if crate::models::bundled(&robot.model).is_none() && Path::new(&robot.model).is_relative() {
                robot.model = dir.join(&robot.model).to_string_lossy().into_owned();
            }
        }
        if let Some(p) = self.detector.replay_path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.detector.log_path.as_mut() {
            fix(p);
        }
        if let Some(r) = self.record.as_mut() {
            fix(&mut r.path);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if !(1.0..=500.0).contains(&self.rate) {
            return invalid(format!("rate {} outside [1, 500] Hz", self.rate));
        }
        if !(self.detector.rate > 0.0 && self.detector.rate <= 1000.0) {
            return invalid(format!("detector.rate {} outside (0, 1000] Hz", self.detector.rate));
        }
        if self.robots.is_empty() {
            return invalid("at least one robot is required".into());
        }
        let mut names = HashSet::new();
        for r in &self.robots {
            if r.name.is_empty() || !names.insert(r.name.as_str()) {
                return invalid(format!("robot name `{}` is empty or repeated", r.name));
            }
        }
        if self.detector.source == SourceKind::Replay && self.detector.replay_path.is_none() {
            return invalid("detector.source = \"replay\" needs detector.replay_path".into());
        }
        if self.filters.window == 0 {
            return invalid("filters.window must be at least 1".into());
        }
        if !(self.filters.alpha > 0.0 && self.filters.alpha <= 1.0) {
            return invalid(format!("filters.alpha {} outside (0, 1]", self.filters.alpha));
        }
        if !(self.operator.translation_scale > 0.0 && self.operator.translation_scale.is_finite()) {
            return invalid("operator.translation_scale must be positive".into());
        }
        self.operator.scale_profile.validate().map_err(|e| ConfigError::Invalid(format!("operator.scale_profile: {e}")))?;
        self.ik.validate().map_err(|e| ConfigError::Invalid(format!("ik: {e}")))?;
        let mut ports = HashSet::new();
        for p in self.ports.all() {
            // each publisher also binds p + 1 for acks
            if p < 1024 || p == u16::MAX || !ports.insert(p) || !ports.insert(p + 1) {
                return invalid(format!("port {p} is reserved, repeated or overlaps an ack port"));
            }
        }
        Ok(())
    }

    pub fn hands(&self) -> Vec<Hand> {
        let mut hands: Vec<Hand> = self.robots.iter().map(|r| r.hand).collect();
        hands.sort();
        hands.dedup();
        hands
    }

    pub fn load_chains(&self) -> Result<Vec<KinematicChain>, ConfigError> {
        self.robots
            .iter()
            .map(|r| {
                let chain =
                    resolve_model(&r.model, None).map_err(|source| ConfigError::Model { robot: r.name.clone(), source })?;
                chain.marker(r.end_effector()).map_err(|e| ConfigError::Model { robot: r.name.clone(), source: e.into() })?;
                Ok(chain)
            })
            .collect()
    }
}
