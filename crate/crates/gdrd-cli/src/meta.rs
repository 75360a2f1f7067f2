//! The reproducibility record every command drops next to its outputs:
//! the full configuration, content hashes of every input, and the produced
//! file names. Two runs with equal flags and inputs write identical records
//! byte for byte — no timestamps, no absolute paths, no environment state.

use std::collections::BTreeMap;
use std::path::Path;

use gdrd_core::config::{hex_sha256, RunConfig};
use gdrd_core::data::Manifest;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{io_usage, CliError};

pub const META_FILE: &str = "run_meta.json";

#[derive(Serialize)]
pub struct RunMeta {
    pub command: String,
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_config_hash: Option<String>,
    pub config: BTreeMap<String, String>,
    /// Logical input name -> SHA-256 of its content.
    pub inputs: BTreeMap<String, String>,
    /// File names created in the output directory.
    pub outputs: Vec<String>,
}

impl RunMeta {
    /// For commands driven by a full run configuration.
    pub fn for_run(command: &str, cfg: &RunConfig) -> Self {
        RunMeta {
            command: command.to_string(),
            config_hash: cfg.config_hash(),
            model_config_hash: Some(cfg.model_config_hash()),
            config: kv_map(&cfg.to_kv_string()),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    /// For commands with their own small parameter set (e.g. synth).
    pub fn for_params(command: &str, params: BTreeMap<String, String>) -> Self {
        let mut rendered = String::new();
        for (k, v) in &params {
            rendered.push_str(k);
            rendered.push_str(" = ");
            rendered.push_str(v);
            rendered.push('\n');
        }
        RunMeta {
            command: command.to_string(),
            config_hash: hex_sha256(rendered.as_bytes()),
            model_config_hash: None,
            config: params,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input_file(&mut self, name: &str, path: &Path) -> Result<(), CliError> {
        self.inputs.insert(name.to_string(), file_hash(path)?);
        Ok(())
    }

    /// Hash of a whole image dataset: the manifest bytes followed by every
    /// image's bytes in manifest order.
    pub fn input_dataset(
        &mut self,
        name: &str,
        manifest_path: &Path,
        manifest: &Manifest,
    ) -> Result<(), CliError> {
        self.inputs
            .insert(name.to_string(), dataset_hash(manifest_path, manifest)?);
        Ok(())
    }

    pub fn input_hash(&mut self, name: &str, hash: String) {
        self.inputs.insert(name.to_string(), hash);
    }

    pub fn output(&mut self, file_name: impl Into<String>) {
        self.outputs.push(file_name.into());
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        let path = out_dir.join(META_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("metadata is serializable");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| io_usage(&path, e))
    }
}

pub fn file_hash(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| io_usage(path, e))?;
    Ok(hex_sha256(&bytes))
}

pub fn dataset_hash(manifest_path: &Path, manifest: &Manifest) -> Result<String, CliError> {
    let mut hasher = Sha256::new();
    let manifest_bytes = std::fs::read(manifest_path).map_err(|e| io_usage(manifest_path, e))?;
    hasher.update(&manifest_bytes);
    for record in manifest.records() {
        let image_path = manifest.image_path(record);
        let bytes = std::fs::read(&image_path).map_err(|e| io_usage(&image_path, e))?;
        hasher.update(&bytes);
    }
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn kv_map(kv_text: &str) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    for line in kv_text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    map
}
