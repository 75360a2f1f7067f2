//! Flag plumbing shared by the subcommands: config resolution and the
//! small helpers for required-path errors and file naming.

use std::path::{Path, PathBuf};

use clap::Args;
use gdrd_core::config::{LossSwitches, RunConfig};

use crate::error::{usage, CliError};

/// The config file / override pair accepted by every command that runs a
/// full configuration. Overrides apply on top of the file (or the defaults
/// when no file is given), and dedicated flags apply after both.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Configuration file in `key = value` form.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_kv_file(path)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?,
            None => RunConfig::default(),
        };
        for item in &self.set {
            let Some((key, value)) = item.split_once('=') else {
                return Err(usage(format!("--set expects KEY=VALUE, got {item:?}")));
            };
            cfg.set(key.trim(), value)?;
        }
        Ok(cfg)
    }
}

/// Resolves a config path entry that the command cannot run without.
pub fn required(value: &Option<String>, key: &str, flag: &str) -> Result<PathBuf, CliError> {
    value.as_deref().map(PathBuf::from).ok_or_else(|| {
        usage(format!(
            "missing {key}: pass {flag} or set `{key}` in the config"
        ))
    })
}

pub fn path_string(path: &Path) -> String {
    path.display().to_string()
}

pub fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn create_out_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| crate::error::io_usage(path, e))
}

/// Renders the active loss components as they are written on the command
/// line (`cls,kd,rcd`).
pub fn fmt_losses(switches: &LossSwitches) -> String {
    let mut parts = Vec::new();
    if switches.cls {
        parts.push("cls");
    }
    if switches.kd {
        parts.push("kd");
    }
    if switches.rcd {
        parts.push("rcd");
    }
    parts.join(",")
}
