//! Flag > config file > default resolution.
//!
//! Flags are serialized to JSON, unset ones (null or `false`) are dropped,
//! and the rest are laid over the config file's object. Dotted keys such as
//! `paths.train` address nested objects.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

fn insert_dotted(target: &mut Map<String, Value>, key: &str, value: Value) {
    match key.split_once('.') {
        None => {
            target.insert(key.to_string(), value);
        }
        Some((head, rest)) => {
            let child = target
                .entry(head.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            if !child.is_object() {
                *child = Value::Object(Map::new());
            }
            insert_dotted(child.as_object_mut().unwrap(), rest, value);
        }
    }
}

pub fn read_config(path: Option<&Path>) -> Result<Map<String, Value>, CliError> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(CliError::Usage(format!("{}: config must be a JSON object", path.display()))),
        Err(e) => Err(CliError::Usage(format!("{}: {e}", path.display()))),
    }
}

/// Merges `flags` over the config file and deserializes the result.
pub fn resolve<T: DeserializeOwned>(flags: &impl Serialize, config: Option<&Path>) -> Result<T, CliError> {
    let mut merged = read_config(config)?;
    // the config key itself is not a setting
    merged.remove("config");
    let flags = serde_json::to_value(flags).map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Value::Object(flags) = flags {
        for (k, v) in flags {
            if k == "config" || v.is_null() || v == Value::Bool(false) {
                continue;
            }
            insert_dotted(&mut merged, &k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("invalid settings: {e}")))
}
