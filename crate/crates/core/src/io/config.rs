use std::path::Path;

use super::{read_text, write_atomic, IoError};
use crate::supervisor::SupervisorConfig;

/// Parse a TOML supervisor config. Unknown keys are rejected by name.
pub fn config_from_str(text: &str) -> Result<SupervisorConfig, IoError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let config: SupervisorConfig =
        toml::from_str(text).map_err(|e| IoError::Config(e.to_string().trim_end().to_string()))?;
    config
        .validate()
        .map_err(|e| IoError::Config(e.to_string()))?;
    Ok(config)
}

pub fn config_to_string(config: &SupervisorConfig) -> Result<String, IoError> {
    toml::to_string(config).map_err(|e| IoError::Config(e.to_string()))
}

pub fn read_config(path: &Path) -> Result<SupervisorConfig, IoError> {
    config_from_str(&read_text(path)?)
}

pub fn write_config(config: &SupervisorConfig, path: &Path) -> Result<(), IoError> {
    write_atomic(path, config_to_string(config)?.as_bytes())
}
