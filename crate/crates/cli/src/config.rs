//! JSON run configuration layered under command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

/// Overlays the flags that were given on top of the config file, then
/// deserializes the result. Unknown keys in the file are rejected by the
/// target type.
pub fn resolve<T: Serialize + DeserializeOwned>(
    flags: &T,
    config: Option<&Path>,
) -> Result<T, CliError> {
    let mut merged = match config {
        Some(path) => {
            let bytes =
                fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            match serde_json::from_slice::<Value>(&bytes) {
                Ok(Value::Object(m)) => m,
                Ok(_) => {
                    return Err(CliError::Input(format!(
                        "{}: config must be a JSON object",
                        path.display()
                    )))
                }
                Err(e) => return Err(CliError::Input(format!("{}: {e}", path.display()))),
            }
        }
        None => Map::new(),
    };
    if let Value::Object(given) = serde_json::to_value(flags).expect("flags serialize") {
        for (k, v) in given {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| CliError::Input(format!("config: {e}")))
}

pub fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T, CliError> {
    v.clone()
        .ok_or_else(|| CliError::Input(format!("missing required option --{flag}")))
}

/// `<artifact>.config.json` next to a non-JSON artifact.
pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

pub fn write_sidecar<T: Serialize>(artifact: &Path, effective: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(effective).expect("config serializes");
    bytes.push(b'\n');
    crate::write_file(&sidecar_path(artifact), &bytes)
}
