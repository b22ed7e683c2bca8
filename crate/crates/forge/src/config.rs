//! Seeds, config layering and hashing.

use std::path::Path;

use cadence_core::train::ExperimentConfig;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::formats::read_file;

pub const SEED_ENV: &str = "CADENCE_FORGE_SEED";
pub const DEFAULT_SEED: u64 = 42;

/// `--seed`, else `CADENCE_FORGE_SEED`, else 42.
pub fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => match v.trim().parse() {
            Ok(s) => Ok(s),
            Err(_) => invalid!("{SEED_ENV}={v:?} is not an unsigned integer"),
        },
        Err(_) => Ok(DEFAULT_SEED),
    }
}

/// Hex SHA-256 of the value's JSON encoding.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
pub enum Preset {
    /// 32×32 inputs, 20 epochs.
    Desk,
    /// Full-size inputs and the 70-epoch schedule.
    FullScale,
}

pub fn preset(p: Preset, num_classes: usize) -> ExperimentConfig {
    match p {
        Preset::Desk => ExperimentConfig::desk(num_classes),
        Preset::FullScale => {
            let mut e = ExperimentConfig::default();
            e.model.num_classes = num_classes;
            e
        }
    }
}

/// Recursively overlays `patch` on `base`, rejecting keys `base` lacks.
pub fn merge(base: &mut Value, patch: Value, path: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            // externally tagged enum switching variant: replace wholesale
            if b.len() == 1 && p.len() == 1 && !p.keys().all(|k| b.contains_key(k)) {
                *b = p;
                return Ok(());
            }
            for (k, v) in p {
                let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &here)?,
                    None => invalid!("unknown config key '{here}'"),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// Defaults, then the JSON file (if any), parsed into a config.
pub fn layered(base: ExperimentConfig, file: Option<&Path>) -> Result<ExperimentConfig> {
    let Some(path) = file else { return Ok(base) };
    let patch: Value = serde_json::from_slice(&read_file(path)?)?;
    let mut v = serde_json::to_value(&base)?;
    merge(&mut v, patch, "")?;
    Ok(serde_json::from_value(v)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_overrides_nested_values_only() {
        let mut base = json!({"a": {"x": 1, "y": 2}, "b": [1, 2], "e": {"Fixed": 128}});
        merge(&mut base, json!({"a": {"y": 5}, "b": [9]}), "").unwrap();
        assert_eq!(base, json!({"a": {"x": 1, "y": 5}, "b": [9], "e": {"Fixed": 128}}));
        merge(&mut base, json!({"e": "Frames"}), "").unwrap();
        assert_eq!(base["e"], json!("Frames"));
        let err = merge(&mut base, json!({"a": {"z": 1}}), "").unwrap_err();
        assert!(err.to_string().contains("a.z"));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::desk(8);
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
        b.train.lr *= 2.0;
        assert_ne!(config_hash(&a), config_hash(&b));
    }

    #[test]
    fn layered_file_sits_between_defaults_and_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"train": {"epochs": 3, "lr": 0.01}, "model": {"widths": [4, 8]}}"#).unwrap();
        let e = layered(ExperimentConfig::desk(8), Some(&p)).unwrap();
        assert_eq!((e.train.epochs, e.train.lr, e.model.widths.clone()), (3, 0.01, vec![4, 8]));
        assert_eq!(e.train.weight_decay, 0.05);
        std::fs::write(&p, r#"{"train": {"epochz": 3}}"#).unwrap();
        assert!(layered(ExperimentConfig::desk(8), Some(&p)).is_err());
    }
}
