//! Layered configuration: built-in defaults, then a `--config` file, then
//! explicit flags.

use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::UsageError;

/// Recursively overwrites `base` with the keys present in `overlay`.
pub fn merge(base: &mut Value, overlay: Value) {
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

/// Reads a JSON or TOML (by extension) configuration file as a JSON value.
pub fn read_config_file(path: &Path) -> anyhow::Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    let value = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str::<Value>(&text).map_err(|e| UsageError(format!("invalid TOML in {}: {e}", path.display())))?,
        _ => serde_json::from_str(&text).map_err(|e| UsageError(format!("invalid JSON in {}: {e}", path.display())))?,
    };
    Ok(value)
}

/// `defaults`, overlaid by the file at `path` (if any), overlaid by `flags`.
pub fn layered<T: Serialize + DeserializeOwned>(defaults: &T, path: Option<&Path>, flags: Value) -> anyhow::Result<T> {
    let mut value = serde_json::to_value(defaults).context("serialising defaults")?;
    if let Some(path) = path {
        merge(&mut value, read_config_file(path)?);
    }
    merge(&mut value, flags);
    serde_json::from_value(value).map_err(|e| UsageError(format!("invalid configuration: {e}")).into())
}

/// Object holding only the flags the user actually passed.
pub fn flag_object(pairs: &[(&str, Option<Value>)]) -> Value {
    let mut map = serde_json::Map::new();
    for (k, v) in pairs {
        if let Some(v) = v {
            let mut slot = &mut map;
            let parts: Vec<&str> = k.split('.').collect();
            for p in &parts[..parts.len() - 1] {
                slot = slot
                    .entry(p.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
                    .as_object_mut()
                    .expect("nested flag path");
            }
            slot.insert(parts[parts.len() - 1].to_string(), v.clone());
        }
    }
    Value::Object(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use radreg_core::train::{Method, TrainConfig};
    use serde_json::json;

    #[test]
    fn flags_beat_file_which_beats_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "epochs = 7\nlearning_rate = 0.01\n[model]\nbase_width = 8\n").unwrap();
        let flags = flag_object(&[("epochs", Some(json!(3))), ("seed", None), ("ssl.tau_base", Some(json!(0.9)))]);
        let c = layered(&TrainConfig::pretrain(Method::Simclr), Some(&path), flags).unwrap();
        assert_eq!((c.epochs, c.learning_rate, c.model.base_width, c.model.input_size), (3, 0.01, 8, 224));
        assert_eq!(c.ssl.tau_base, 0.9);
        assert_eq!(c.seed, 0);
    }

    #[test]
    fn bad_files_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, "{\"epochs\": \"many\"}").unwrap();
        let err = layered(&TrainConfig::linear_eval(), Some(&path), json!({})).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }
}
