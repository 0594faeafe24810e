//! Chain description documents and the bundled simulation models.

use std::path::{Path, PathBuf};

use beavr_core::kinematics::{ChainDescription, ChainError, KinematicChain};
use thiserror::Error;

pub const SIM_XARM7: &str = include_str!("../models/sim-xarm7.toml");
pub const SIM_HAND16: &str = include_str!("../models/sim-hand16.toml");

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Parses and validates a chain description document (TOML).
pub fn load_chain(document: &str) -> Result<KinematicChain, ModelError> {
    let de =
        toml::Deserializer::parse(document).map_err(|e| ModelError::Parse { path: String::new(), message: e.to_string() })?;
    let desc: ChainDescription = serde_path_to_error::deserialize(de)
        .map_err(|e| ModelError::Parse { path: e.path().to_string(), message: e.inner().message().to_string() })?;
    Ok(KinematicChain::from_description(&desc)?)
}

pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "sim-xarm7" => Some(SIM_XARM7),
        "sim-hand16" => Some(SIM_HAND16),
        _ => None,
    }
}

/// Loads a bundled model by name, or a description file relative to
/// `base_dir`.
pub fn resolve_model(spec: &str, base_dir: Option<&Path>) -> Result<KinematicChain, ModelError> {
    if let Some(doc) = bundled(spec) {
        return load_chain(doc);
    }
    let path = match base_dir {
        Some(dir) if Path::new(spec).is_relative() => dir.join(spec),
        _ => PathBuf::from(spec),
    };
    let doc = std::fs::read_to_string(&path).map_err(|source| ModelError::Io { path: path.clone(), source })?;
    load_chain(&doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_models_load() {
        assert_eq!(load_chain(SIM_XARM7).unwrap().dof(), 7);
        let hand = load_chain(SIM_HAND16).unwrap();
        assert_eq!(hand.dof(), 16);
        assert_eq!(hand.markers().len(), 8);
    }

    #[test]
    fn errors_carry_field_paths() {
        let doc = SIM_XARM7.replacen("axis = [0.0, 0.0, 1.0]", "axis = [0.0, 0.0, 2.0]", 1);
        let err = load_chain(&doc).unwrap_err().to_string();
        assert!(err.contains("joints[0].axis") && err.contains("not unit-norm"), "{err}");

        let doc = SIM_XARM7.replacen("limits = [-6.283, 6.283]", "limits = \"wide\"", 1);
        let err = load_chain(&doc).unwrap_err().to_string();
        assert!(err.starts_with("joints[0].limits"), "{err}");

        let doc = format!("{SIM_XARM7}\ncolour = \"red\"\n");
        assert!(load_chain(&doc).is_err());
    }
}
