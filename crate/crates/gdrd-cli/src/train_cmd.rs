//! `train-backbone` and `train-head`: the two training stages.
//!
//! Stage 1 regresses the backbone onto the generative teacher's features.
//! Stage 2 loads that backbone frozen (or starts from seed initialization
//! with `--from-seed`) and trains the head under the selected loss
//! components.

use std::path::PathBuf;

use clap::Args;
use gdrd_core::config::LossSwitches;
use gdrd_core::data::{load_checkpoint, load_manifest, load_store};
use gdrd_core::train::{train_stage1, train_stage2, Dataset, StageResult};

use crate::error::{usage, CliError};
use crate::meta::RunMeta;
use crate::opts::{create_out_dir, file_name, fmt_losses, path_string, required, ConfigArgs};

#[derive(Debug, Args)]
pub struct TrainBackboneArgs {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Training split manifest (overrides the config's `manifest`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,

    /// Generative teacher store (overrides `gen_store`).
    #[arg(long)]
    pub gen_store: Option<PathBuf>,

    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Run seed (overrides `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainHeadArgs {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Training split manifest (overrides the config's `manifest`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,

    /// Discriminative teacher store (overrides `disc_store`).
    #[arg(long)]
    pub disc_store: Option<PathBuf>,

    /// Stage-1 checkpoint whose backbone is loaded and frozen.
    #[arg(long, conflicts_with = "from_seed")]
    pub stage1: Option<PathBuf>,

    /// Freeze a seed-initialized backbone instead of a stage-1 checkpoint.
    #[arg(long)]
    pub from_seed: bool,

    /// Active loss components, comma separated (subset of `cls,kd,rcd`).
    #[arg(long)]
    pub loss: Option<String>,

    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Run seed (overrides `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_losses(spec: &str) -> Result<LossSwitches, CliError> {
    let mut switches = LossSwitches {
        cls: false,
        kd: false,
        rcd: false,
    };
    for part in spec.split(',') {
        match part.trim() {
            "cls" => switches.cls = true,
            "kd" => switches.kd = true,
            "rcd" => switches.rcd = true,
            other => {
                return Err(usage(format!(
                    "unknown loss component {other:?}; expected a comma-separated subset of cls, kd, rcd"
                )))
            }
        }
    }
    Ok(switches)
}

fn print_stage_summary(command: &str, stage: u32, losses: &str, result: &StageResult<f32>) {
    println!(
        "{}",
        serde_json::json!({
            "command": command,
            "stage": stage,
            "losses": losses,
            "first_epoch_loss": result.first_epoch_loss,
            "last_epoch_loss": result.last_epoch_loss,
            "checkpoint": file_name(&result.checkpoint_path),
            "log": file_name(&result.log_path),
        })
    );
}

pub fn run_backbone(args: &TrainBackboneArgs) -> Result<(), CliError> {
    let mut cfg = args.config.resolve()?;
    if let Some(p) = &args.manifest {
        cfg.manifest = Some(path_string(p));
    }
    if let Some(p) = &args.gen_store {
        cfg.gen_store = Some(path_string(p));
    }
    if let Some(p) = &args.out {
        cfg.out_dir = Some(path_string(p));
    }
    if let Some(seed) = args.seed {
        cfg.optim.seed = seed;
    }
    cfg.validate()?;

    let manifest_path = required(&cfg.manifest, "manifest", "--manifest")?;
    let gen_path = required(&cfg.gen_store, "gen_store", "--gen-store")?;
    let out_dir = required(&cfg.out_dir, "out_dir", "--out")?;

    let manifest = load_manifest(&manifest_path)?;
    let dataset = Dataset::<f32>::load(&manifest, cfg.model.input_side)?;
    let gen_store = load_store(&gen_path)?;

    create_out_dir(&out_dir)?;
    let result = train_stage1(&cfg, &dataset, &gen_store, &out_dir)?;

    let mut meta = RunMeta::for_run("train-backbone", &cfg);
    meta.input_dataset("dataset", &manifest_path, &manifest)?;
    meta.input_file("gen_store", &gen_path)?;
    meta.output(file_name(&result.checkpoint_path));
    meta.output(file_name(&result.log_path));
    meta.write(&out_dir)?;

    print_stage_summary("train-backbone", 1, "gen", &result);
    Ok(())
}

pub fn run_head(args: &TrainHeadArgs) -> Result<(), CliError> {
    let mut cfg = args.config.resolve()?;
    if let Some(p) = &args.manifest {
        cfg.manifest = Some(path_string(p));
    }
    if let Some(p) = &args.disc_store {
        cfg.disc_store = Some(path_string(p));
    }
    if let Some(p) = &args.stage1 {
        cfg.stage1_checkpoint = Some(path_string(p));
    }
    if let Some(p) = &args.out {
        cfg.out_dir = Some(path_string(p));
    }
    if let Some(seed) = args.seed {
        cfg.optim.seed = seed;
    }
    if let Some(spec) = &args.loss {
        cfg.losses = parse_losses(spec)?;
    }
    cfg.validate()?;
    if !(cfg.losses.cls || cfg.losses.kd || cfg.losses.rcd) {
        return Err(usage("at least one loss component must be active"));
    }

    let manifest_path = required(&cfg.manifest, "manifest", "--manifest")?;
    let disc_path = required(&cfg.disc_store, "disc_store", "--disc-store")?;
    let out_dir = required(&cfg.out_dir, "out_dir", "--out")?;

    // An explicit --from-seed wins over a checkpoint path left in the config.
    let stage1_path = if args.from_seed {
        None
    } else {
        match &cfg.stage1_checkpoint {
            Some(p) => Some(PathBuf::from(p)),
            None => {
                return Err(usage(
                    "train-head needs a stage-1 checkpoint: pass --stage1 (or set \
                     `stage1_checkpoint`), or pass --from-seed to start from seed \
                     initialization",
                ))
            }
        }
    };
    let stage1 = stage1_path
        .as_deref()
        .map(load_checkpoint)
        .transpose()?;

    let manifest = load_manifest(&manifest_path)?;
    let dataset = Dataset::<f32>::load(&manifest, cfg.model.input_side)?;
    let disc_store = load_store(&disc_path)?;

    create_out_dir(&out_dir)?;
    let result = train_stage2(&cfg, &dataset, &disc_store, stage1.as_ref(), &out_dir)?;

    let mut meta = RunMeta::for_run("train-head", &cfg);
    meta.input_dataset("dataset", &manifest_path, &manifest)?;
    meta.input_file("disc_store", &disc_path)?;
    if let Some(p) = &stage1_path {
        meta.input_file("stage1_checkpoint", p)?;
    }
    meta.output(file_name(&result.checkpoint_path));
    meta.output(file_name(&result.log_path));
    meta.write(&out_dir)?;

    print_stage_summary("train-head", 2, &fmt_losses(&cfg.losses), &result);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_specs_parse_to_switches() {
        let all = parse_losses("cls,kd,rcd").unwrap();
        assert!(all.cls && all.kd && all.rcd);
        let cls = parse_losses("cls").unwrap();
        assert!(cls.cls && !cls.kd && !cls.rcd);
        let spaced = parse_losses("kd, rcd").unwrap();
        assert!(!spaced.cls && spaced.kd && spaced.rcd);
    }

    #[test]
    fn unknown_loss_component_is_a_usage_error() {
        let err = parse_losses("cls,huber").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("huber"));
    }
}
