//! JSON configuration files with `--set key=value` overrides.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// A usage or configuration problem; the process exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// Reads a JSON file, failing with a configuration error that names it.
pub fn read_json_value(path: &Path) -> anyhow::Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("{} is not valid JSON: {e}", path.display())))
}

/// Copies the fields of `overlay` into `base`, recursing into objects.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies one `key=value` assignment. Dotted keys reach into nested objects
/// and arrays (`cancers.0.cases=50`); values parse as JSON, else as strings.
pub fn apply_set(target: &mut Value, assignment: &str) -> anyhow::Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_error(format!("--set expects key=value, got `{assignment}`")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = target;
    for part in key.split('.') {
        slot = match slot {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| config_error(format!("unknown configuration key `{key}`")))?;
    }
    *slot = value;
    Ok(())
}

/// Defaults, overlaid by the optional file, then by each assignment.
pub fn load<T: Default + Serialize + DeserializeOwned>(file: Option<&Path>, sets: &[String]) -> anyhow::Result<T> {
    let mut value = serde_json::to_value(T::default())?;
    if let Some(path) = file {
        merge(&mut value, read_json_value(path)?);
    }
    for s in sets {
        apply_set(&mut value, s)?;
    }
    serde_json::from_value(value).map_err(|e| config_error(format!("invalid configuration: {e}")))
}
