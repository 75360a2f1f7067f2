//! Run configuration: model dimensions, optimizer settings, loss switches and
//! protocol parameters, with a flat `key = value` file format.
//!
//! The serialized form is canonical (keys emitted in one fixed order), so the
//! bytes written into run metadata — and the hashes derived from them — are a
//! pure function of the configuration values.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("unknown config key {key:?}")]
    UnknownKey { key: String },
    #[error("config key {key:?}: cannot parse {value:?} as {expected}")]
    InvalidValue {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("invalid config: {0}")]
    Validation(String),
}

/// How the relational contrastive loss is reduced over the pair batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RcdNormalization {
    /// Plain sum over pairs, as the loss is written.
    Sum,
    /// Sum divided by the pair count; useful when the pair budget varies.
    Mean,
}

impl FromStr for RcdNormalization {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "sum" => Ok(RcdNormalization::Sum),
            "mean" => Ok(RcdNormalization::Mean),
            _ => Err(()),
        }
    }
}

impl std::fmt::Display for RcdNormalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RcdNormalization::Sum => write!(f, "sum"),
            RcdNormalization::Mean => write!(f, "mean"),
        }
    }
}

/// Architecture of the student and its auxiliary modules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Side length of the low-resolution input in pixels.
    pub input_side: usize,
    /// Input image channels (grayscale = 1).
    pub input_channels: usize,
    /// Output channels of each stride-2 conv block.
    pub conv_channels: Vec<usize>,
    /// Backbone output width, matched against the generative teacher.
    pub feature_dim: usize,
    /// Head embedding width used by every evaluation protocol.
    pub embed_dim: usize,
    /// Hidden width of the relation modules.
    pub relation_hidden: usize,
    /// Output width of the relation modules.
    pub relation_dim: usize,
    /// Output width of the projection heads.
    pub proj_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_side: 16,
            input_channels: 1,
            conv_channels: vec![128, 256, 512],
            feature_dim: 512,
            embed_dim: 512,
            relation_hidden: 256,
            relation_dim: 128,
            proj_dim: 128,
        }
    }
}

/// Optimizer and schedule settings shared by both training stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr0: f64,
    /// Multiplier applied to the learning rate at each milestone.
    pub anneal: f64,
    /// Milestones as fractions of the stage's epoch budget.
    pub milestones: Vec<f64>,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr0: 0.05,
            anneal: 0.1,
            milestones: vec![0.5, 0.75],
            momentum: 0.9,
            batch_size: 96,
            epochs_stage1: 30,
            epochs_stage2: 30,
            seed: 7,
        }
    }
}

/// Which components of the composite head loss are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossSwitches {
    pub cls: bool,
    pub kd: bool,
    pub rcd: bool,
}

impl Default for LossSwitches {
    fn default() -> Self {
        LossSwitches {
            cls: true,
            kd: true,
            rcd: true,
        }
    }
}

/// The complete configuration of one run: architecture, optimizer, loss
/// settings, protocol parameters and input/output paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optim: OptimConfig,
    /// Temperature of the relational contrastive critic.
    pub tau: f64,
    /// Softening temperature of the logit-distillation loss.
    pub kd_temperature: f64,
    pub weight_kd: f64,
    pub weight_rcd: f64,
    /// Positive (and, equally, negative) pairs drawn per batch.
    pub pairs_per_batch: usize,
    pub rcd_normalization: RcdNormalization,
    pub losses: LossSwitches,
    pub verify_pos_pairs: usize,
    pub verify_neg_pairs: usize,
    pub retrieve_ranks: Vec<usize>,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    pub manifest: Option<String>,
    pub manifest_test: Option<String>,
    pub gen_store: Option<String>,
    pub disc_store: Option<String>,
    pub checkpoint: Option<String>,
    pub stage1_checkpoint: Option<String>,
    pub out_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            tau: 0.4,
            kd_temperature: 4.0,
            weight_kd: 0.25,
            weight_rcd: 4.0,
            pairs_per_batch: 48,
            rcd_normalization: RcdNormalization::Sum,
            losses: LossSwitches::default(),
            verify_pos_pairs: 3000,
            verify_neg_pairs: 3000,
            retrieve_ranks: vec![1, 5, 10],
            finetune_epochs: 50,
            finetune_lr: 0.1,
            manifest: None,
            manifest_test: None,
            gen_store: None,
            disc_store: None,
            checkpoint: None,
            stage1_checkpoint: None,
            out_dir: None,
        }
    }
}

/// Every legal key, in the order keys are serialized.
const KEYS: &[&str] = &[
    "input_side",
    "input_channels",
    "conv_channels",
    "feature_dim",
    "embed_dim",
    "relation_hidden",
    "relation_dim",
    "proj_dim",
    "lr0",
    "anneal",
    "milestones",
    "momentum",
    "batch_size",
    "epochs_stage1",
    "epochs_stage2",
    "seed",
    "tau",
    "kd_temperature",
    "weight_kd",
    "weight_rcd",
    "pairs_per_batch",
    "rcd_normalization",
    "loss_cls",
    "loss_kd",
    "loss_rcd",
    "verify_pos_pairs",
    "verify_neg_pairs",
    "retrieve_ranks",
    "finetune_epochs",
    "finetune_lr",
    "manifest",
    "manifest_test",
    "gen_store",
    "disc_store",
    "checkpoint",
    "stage1_checkpoint",
    "out_dir",
];

/// Keys that determine checkpoint compatibility: two runs may exchange
/// checkpoints exactly when they agree on these.
const MODEL_KEYS: &[&str] = &[
    "input_side",
    "input_channels",
    "conv_channels",
    "feature_dim",
    "embed_dim",
    "relation_hidden",
    "relation_dim",
    "proj_dim",
];

fn parse_scalar<T: FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        expected,
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str, expected: &'static str) -> Result<Vec<T>, ConfigError> {
    let trimmed = value.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    trimmed
        .split(',')
        .map(|item| parse_scalar(key, item, expected))
        .collect()
}

fn fmt_list<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn opt_string(value: &str) -> Option<String> {
    let trimmed = value.trim();
    if trimmed.is_empty() {
        None
    } else {
        Some(trimmed.to_string())
    }
}

impl RunConfig {
    /// Applies one `key = value` assignment. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "input_side" => self.model.input_side = parse_scalar(key, value, "positive integer")?,
            "input_channels" => self.model.input_channels = parse_scalar(key, value, "positive integer")?,
            "conv_channels" => self.model.conv_channels = parse_list(key, value, "comma-separated integers")?,
            "feature_dim" => self.model.feature_dim = parse_scalar(key, value, "positive integer")?,
            "embed_dim" => self.model.embed_dim = parse_scalar(key, value, "positive integer")?,
            "relation_hidden" => self.model.relation_hidden = parse_scalar(key, value, "positive integer")?,
            "relation_dim" => self.model.relation_dim = parse_scalar(key, value, "positive integer")?,
            "proj_dim" => self.model.proj_dim = parse_scalar(key, value, "positive integer")?,
            "lr0" => self.optim.lr0 = parse_scalar(key, value, "number")?,
            "anneal" => self.optim.anneal = parse_scalar(key, value, "number")?,
            "milestones" => self.optim.milestones = parse_list(key, value, "comma-separated fractions")?,
            "momentum" => self.optim.momentum = parse_scalar(key, value, "number")?,
            "batch_size" => self.optim.batch_size = parse_scalar(key, value, "positive integer")?,
            "epochs_stage1" => self.optim.epochs_stage1 = parse_scalar(key, value, "integer")?,
            "epochs_stage2" => self.optim.epochs_stage2 = parse_scalar(key, value, "integer")?,
            "seed" => self.optim.seed = parse_scalar(key, value, "unsigned integer")?,
            "tau" => self.tau = parse_scalar(key, value, "number")?,
            "kd_temperature" => self.kd_temperature = parse_scalar(key, value, "number")?,
            "weight_kd" => self.weight_kd = parse_scalar(key, value, "number")?,
            "weight_rcd" => self.weight_rcd = parse_scalar(key, value, "number")?,
            "pairs_per_batch" => self.pairs_per_batch = parse_scalar(key, value, "positive integer")?,
            "rcd_normalization" => {
                self.rcd_normalization = value.trim().parse().map_err(|_| ConfigError::InvalidValue {
                    key: key.to_string(),
                    value: value.to_string(),
                    expected: "`sum` or `mean`",
                })?
            }
            "loss_cls" => self.losses.cls = parse_scalar(key, value, "boolean")?,
            "loss_kd" => self.losses.kd = parse_scalar(key, value, "boolean")?,
            "loss_rcd" => self.losses.rcd = parse_scalar(key, value, "boolean")?,
            "verify_pos_pairs" => self.verify_pos_pairs = parse_scalar(key, value, "positive integer")?,
            "verify_neg_pairs" => self.verify_neg_pairs = parse_scalar(key, value, "positive integer")?,
            "retrieve_ranks" => self.retrieve_ranks = parse_list(key, value, "comma-separated integers")?,
            "finetune_epochs" => self.finetune_epochs = parse_scalar(key, value, "integer")?,
            "finetune_lr" => self.finetune_lr = parse_scalar(key, value, "number")?,
            "manifest" => self.manifest = opt_string(value),
            "manifest_test" => self.manifest_test = opt_string(value),
            "gen_store" => self.gen_store = opt_string(value),
            "disc_store" => self.disc_store = opt_string(value),
            "checkpoint" => self.checkpoint = opt_string(value),
            "stage1_checkpoint" => self.stage1_checkpoint = opt_string(value),
            "out_dir" => self.out_dir = opt_string(value),
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        match key {
            "input_side" => self.model.input_side.to_string(),
            "input_channels" => self.model.input_channels.to_string(),
            "conv_channels" => fmt_list(&self.model.conv_channels),
            "feature_dim" => self.model.feature_dim.to_string(),
            "embed_dim" => self.model.embed_dim.to_string(),
            "relation_hidden" => self.model.relation_hidden.to_string(),
            "relation_dim" => self.model.relation_dim.to_string(),
            "proj_dim" => self.model.proj_dim.to_string(),
            "lr0" => self.optim.lr0.to_string(),
            "anneal" => self.optim.anneal.to_string(),
            "milestones" => fmt_list(&self.optim.milestones),
            "momentum" => self.optim.momentum.to_string(),
            "batch_size" => self.optim.batch_size.to_string(),
            "epochs_stage1" => self.optim.epochs_stage1.to_string(),
            "epochs_stage2" => self.optim.epochs_stage2.to_string(),
            "seed" => self.optim.seed.to_string(),
            "tau" => self.tau.to_string(),
            "kd_temperature" => self.kd_temperature.to_string(),
            "weight_kd" => self.weight_kd.to_string(),
            "weight_rcd" => self.weight_rcd.to_string(),
            "pairs_per_batch" => self.pairs_per_batch.to_string(),
            "rcd_normalization" => self.rcd_normalization.to_string(),
            "loss_cls" => self.losses.cls.to_string(),
            "loss_kd" => self.losses.kd.to_string(),
            "loss_rcd" => self.losses.rcd.to_string(),
            "verify_pos_pairs" => self.verify_pos_pairs.to_string(),
            "verify_neg_pairs" => self.verify_neg_pairs.to_string(),
            "retrieve_ranks" => fmt_list(&self.retrieve_ranks),
            "finetune_epochs" => self.finetune_epochs.to_string(),
            "finetune_lr" => self.finetune_lr.to_string(),
            "manifest" => self.manifest.clone().unwrap_or_default(),
            "manifest_test" => self.manifest_test.clone().unwrap_or_default(),
            "gen_store" => self.gen_store.clone().unwrap_or_default(),
            "disc_store" => self.disc_store.clone().unwrap_or_default(),
            "checkpoint" => self.checkpoint.clone().unwrap_or_default(),
            "stage1_checkpoint" => self.stage1_checkpoint.clone().unwrap_or_default(),
            "out_dir" => self.out_dir.clone().unwrap_or_default(),
            _ => unreachable!("get called with a key missing from KEYS"),
        }
    }

    /// Canonical `key = value` serialization: every key, fixed order.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key));
        }
        out
    }

    /// Parses a `key = value` file. Lines starting with `#` and blank lines
    /// are ignored; every key must be known.
    pub fn from_kv_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        cfg.merge_kv_str(text)?;
        Ok(cfg)
    }

    /// Applies assignments from a `key = value` document on top of `self`.
    pub fn merge_kv_str(&mut self, text: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line: idx + 1,
                    text: raw.to_string(),
                });
            };
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_kv_file(path: &Path) -> Result<Self, ConfigError> {
        Self::from_kv_str(&std::fs::read_to_string(path)?)
    }

    /// Checks every invariant the rest of the crate assumes.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        if m.input_side < 8 {
            return Err(ConfigError::Validation("input_side must be at least 8".into()));
        }
        if m.input_channels == 0 {
            return Err(ConfigError::Validation("input_channels must be positive".into()));
        }
        if m.conv_channels.is_empty() {
            return Err(ConfigError::Validation("conv_channels must be non-empty".into()));
        }
        if m.conv_channels.iter().any(|c| *c == 0) {
            return Err(ConfigError::Validation("conv_channels entries must be positive".into()));
        }
        // Each block halves the spatial side; it must stay at least 1.
        if m.input_side >> m.conv_channels.len() == 0 {
            return Err(ConfigError::Validation(format!(
                "input_side {} is too small for {} stride-2 conv blocks",
                m.input_side,
                m.conv_channels.len()
            )));
        }
        for (key, dim) in [
            ("feature_dim", m.feature_dim),
            ("embed_dim", m.embed_dim),
            ("relation_hidden", m.relation_hidden),
            ("relation_dim", m.relation_dim),
            ("proj_dim", m.proj_dim),
        ] {
            if dim == 0 {
                return Err(ConfigError::Validation(format!("{key} must be positive")));
            }
        }
        let o = &self.optim;
        if !(o.lr0 > 0.0) {
            return Err(ConfigError::Validation("lr0 must be positive".into()));
        }
        if !(o.anneal > 0.0 && o.anneal <= 1.0) {
            return Err(ConfigError::Validation("anneal must be in (0, 1]".into()));
        }
        if o.milestones.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(ConfigError::Validation("milestones must be fractions in (0, 1]".into()));
        }
        if !(o.momentum >= 0.0 && o.momentum < 1.0) {
            return Err(ConfigError::Validation("momentum must be in [0, 1)".into()));
        }
        if o.batch_size < 2 {
            return Err(ConfigError::Validation("batch_size must be at least 2".into()));
        }
        if !(self.tau > 0.0) {
            return Err(ConfigError::Validation("tau must be positive".into()));
        }
        if !(self.kd_temperature > 0.0) {
            return Err(ConfigError::Validation("kd_temperature must be positive".into()));
        }
        if self.pairs_per_batch == 0 {
            return Err(ConfigError::Validation("pairs_per_batch must be positive".into()));
        }
        if self.retrieve_ranks.is_empty() || self.retrieve_ranks.iter().any(|r| *r == 0) {
            return Err(ConfigError::Validation("retrieve_ranks must be positive".into()));
        }
        if !(self.finetune_lr > 0.0) {
            return Err(ConfigError::Validation("finetune_lr must be positive".into()));
        }
        Ok(())
    }

    /// Hash of the full canonical serialization.
    pub fn config_hash(&self) -> String {
        hex_sha256(self.to_kv_string().as_bytes())
    }

    /// Hash over the architecture keys only; checkpoints written under one
    /// hash load only into runs with the same hash, while optimizer and
    /// protocol settings may differ freely between stages.
    pub fn model_config_hash(&self) -> String {
        let mut text = String::new();
        for key in MODEL_KEYS {
            let _ = writeln!(text, "{key} = {}", self.get(key));
        }
        hex_sha256(text.as_bytes())
    }
}

/// Lowercase hex SHA-256, the content-hash convention used everywhere a run
/// records its inputs.
pub fn hex_sha256(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}
