//! Per-command run configurations: versioned JSON documents with strict
//! field checking, plus `--set path.to.field=value` overrides applied before
//! deserialization so unknown keys are still rejected.

use crate::CliError;
use piecer::kge::KgeConfig;
use piecer::mrc::{MrcConfig, TrainConfig};
use piecer::synth::SynthSpec;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainKgeConfig {
    pub version: u32,
    /// Tab-separated triple file.
    pub triples: PathBuf,
    pub output_table: PathBuf,
    pub report: PathBuf,
    #[serde(default)]
    pub kge: KgeConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildGraphConfig {
    pub version: u32,
    pub triples: PathBuf,
    pub query: String,
    pub passage: String,
    pub output: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub version: u32,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub synth: SynthSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub version: u32,
    pub train_data: PathBuf,
    pub dev_data: PathBuf,
    pub triples: PathBuf,
    #[serde(default)]
    pub embedding_table: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub model_seed: u64,
    #[serde(default)]
    pub model: MrcConfig,
    #[serde(default)]
    pub training: TrainConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCmdConfig {
    pub version: u32,
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub triples: PathBuf,
    #[serde(default)]
    pub embedding_table: Option<PathBuf>,
    pub report: PathBuf,
}

/// Loads a config file, applies `--set` overrides, and deserializes with
/// field-path diagnostics. Returns the typed config and the effective JSON
/// value (echoed into artifact headers).
pub fn load_config<T: DeserializeOwned>(
    path: &std::path::Path,
    sets: &[String],
) -> Result<(T, serde_json::Value), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for set in sets {
        apply_set(&mut value, set)?;
    }
    let deserializer = value.clone();
    let cfg: T = serde_path_to_error::deserialize(deserializer).map_err(|e| {
        CliError::Config(format!("{}: at {}: {}", path.display(), e.path(), e.inner()))
    })?;
    check_version(&value)?;
    Ok((cfg, value))
}

fn check_version(value: &serde_json::Value) -> Result<(), CliError> {
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == CONFIG_VERSION as u64 => Ok(()),
        Some(v) => Err(CliError::Config(format!(
            "unsupported config version {v}, expected {CONFIG_VERSION}"
        ))),
        None => Err(CliError::Config("config is missing a version field".into())),
    }
}

/// Applies one `path.to.field=value` override. The value parses as JSON when
/// possible and falls back to a plain string.
fn apply_set(root: &mut serde_json::Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set {spec:?} is not KEY=VALUE")))?;
    let new_value: serde_json::Value =
        serde_json::from_str(raw).unwrap_or(serde_json::Value::String(raw.to_string()));
    let mut cursor = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        let map = cursor
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("--set {path}: {segment} is not an object")))?;
        if i + 1 == segments.len() {
            map.insert(segment.to_string(), new_value);
            return Ok(());
        }
        cursor = map
            .entry(segment.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("path has at least one segment")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_take_precedence_and_unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{"version": 1, "output_dir": "out", "synth": {"seed": 3}}"#,
        )
        .unwrap();
        let (cfg, effective) = load_config::<GenDataConfig>(
            &path,
            &["synth.seed=9".to_string(), "synth.mode=\"pattern\"".to_string()],
        )
        .unwrap();
        assert_eq!(cfg.synth.seed, 9);
        assert_eq!(effective["synth"]["seed"], 9);

        let err = load_config::<GenDataConfig>(&path, &["bogus_key=1".to_string()]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus_key"), "{msg}");
    }

    #[test]
    fn version_is_required_and_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"version": 2, "output_dir": "out"}"#).unwrap();
        assert!(load_config::<GenDataConfig>(&path, &[]).is_err());
    }
}
