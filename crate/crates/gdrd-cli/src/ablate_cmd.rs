//! `ablate`: trains the four distillation arms over a set of seeds and
//! writes a comparison table of their verification accuracies.
//!
//! The arms differ only in where the frozen backbone comes from and which
//! head-loss components are active:
//!
//! | arm                 | backbone            | head losses   |
//! |---------------------|---------------------|---------------|
//! | `no_distill`        | seed initialization | cls           |
//! | `backbone_distill`  | stage-1 checkpoint  | cls           |
//! | `head_distill`      | seed initialization | cls, kd, rcd  |
//! | `full_distill`      | stage-1 checkpoint  | cls, kd, rcd  |
//!
//! Per seed, stage 1 is trained once and shared by the two arms that load
//! it, and one verification pair protocol is sampled once and reused by
//! every arm; the table records content hashes of the shared data and
//! protocol so the comparison is verifiably controlled.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use gdrd_core::config::LossSwitches;
use gdrd_core::data::load_manifest;
use gdrd_core::data::load_store;
use gdrd_core::eval::{build_pairs, embed_all, verify};
use gdrd_core::rng::{stream_rng, STREAM_EVAL_PAIRS};
use gdrd_core::train::{train_stage1, train_stage2, Dataset};
use serde::Serialize;

use crate::error::{usage, CliError};
use crate::meta::{dataset_hash, file_hash, RunMeta};
use crate::opts::{create_out_dir, fmt_losses, path_string, ConfigArgs};

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Dataset directory as produced by `synth`.
    #[arg(long)]
    pub data: PathBuf,

    /// Output directory for per-arm runs and the comparison table.
    #[arg(long)]
    pub out: PathBuf,

    /// Seeds every arm is repeated over, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![7u64, 8, 9])]
    pub seeds: Vec<u64>,
}

struct Arm {
    name: &'static str,
    use_stage1: bool,
    losses: LossSwitches,
}

const CLS_ONLY: LossSwitches = LossSwitches {
    cls: true,
    kd: false,
    rcd: false,
};
const ALL_LOSSES: LossSwitches = LossSwitches {
    cls: true,
    kd: true,
    rcd: true,
};

const ARMS: [Arm; 4] = [
    Arm {
        name: "no_distill",
        use_stage1: false,
        losses: CLS_ONLY,
    },
    Arm {
        name: "backbone_distill",
        use_stage1: true,
        losses: CLS_ONLY,
    },
    Arm {
        name: "head_distill",
        use_stage1: false,
        losses: ALL_LOSSES,
    },
    Arm {
        name: "full_distill",
        use_stage1: true,
        losses: ALL_LOSSES,
    },
];

#[derive(Serialize)]
struct SeedAccuracy {
    seed: u64,
    accuracy: f64,
}

#[derive(Serialize)]
struct ArmSummary {
    name: String,
    backbone_distilled: bool,
    losses: String,
    per_seed: Vec<SeedAccuracy>,
    mean_accuracy: f64,
}

#[derive(Serialize)]
struct AblationTable {
    seeds: Vec<u64>,
    arms: Vec<ArmSummary>,
    /// Content hashes of the data every arm consumed.
    inputs: BTreeMap<String, String>,
    /// Hash of the sampled pair protocol, per seed; all arms of one seed
    /// are evaluated against exactly these pairs.
    pair_hash: BTreeMap<String, String>,
    config_hash: String,
}

pub fn run(args: &AblateArgs) -> Result<(), CliError> {
    if args.seeds.is_empty() {
        return Err(usage("at least one seed is required"));
    }
    let mut base = args.config.resolve()?;
    let manifest_train_path = args.data.join("manifest_train.json");
    let manifest_test_path = args.data.join("manifest_test.json");
    let gen_path = args.data.join("teacher_gen.gten");
    let disc_path = args.data.join("teacher_disc.gten");
    base.manifest = Some(path_string(&manifest_train_path));
    base.manifest_test = Some(path_string(&manifest_test_path));
    base.gen_store = Some(path_string(&gen_path));
    base.disc_store = Some(path_string(&disc_path));
    base.out_dir = Some(path_string(&args.out));
    base.validate()?;

    let manifest_train = load_manifest(&manifest_train_path)?;
    let manifest_test = load_manifest(&manifest_test_path)?;
    let train = Dataset::<f32>::load(&manifest_train, base.model.input_side)?;
    let test = Dataset::<f32>::load(&manifest_test, base.model.input_side)?;
    let gen_store = load_store(&gen_path)?;
    let disc_store = load_store(&disc_path)?;

    let mut inputs = BTreeMap::new();
    inputs.insert(
        "dataset_train".to_string(),
        dataset_hash(&manifest_train_path, &manifest_train)?,
    );
    inputs.insert(
        "dataset_test".to_string(),
        dataset_hash(&manifest_test_path, &manifest_test)?,
    );
    inputs.insert("gen_store".to_string(), file_hash(&gen_path)?);
    inputs.insert("disc_store".to_string(), file_hash(&disc_path)?);

    create_out_dir(&args.out)?;
    let mut per_arm: Vec<Vec<SeedAccuracy>> = ARMS.iter().map(|_| Vec::new()).collect();
    let mut pair_hash = BTreeMap::new();

    for &seed in &args.seeds {
        let mut cfg = base.clone();
        cfg.optim.seed = seed;
        let seed_dir = args.out.join(format!("seed{seed}"));
        create_out_dir(&seed_dir)?;

        // One pair protocol per seed, written out and reused verbatim by
        // every arm of that seed.
        let set = build_pairs(
            &test.ids,
            &test.labels,
            cfg.verify_pos_pairs,
            cfg.verify_neg_pairs,
            &mut stream_rng(seed, STREAM_EVAL_PAIRS),
        )?;
        let pairs_path = seed_dir.join("pairs.json");
        set.save(&pairs_path)?;
        pair_hash.insert(seed.to_string(), file_hash(&pairs_path)?);

        // Stage 1 is shared by `backbone_distill` and `full_distill`.
        let stage1 = train_stage1(&cfg, &train, &gen_store, &seed_dir.join("stage1"))
            .map_err(|e| CliError::from(e).context(&format!("stage 1 (seed {seed})")))?;

        for (slot, arm) in ARMS.iter().enumerate() {
            let ctx = format!("arm {} (seed {seed})", arm.name);
            let mut arm_cfg = cfg.clone();
            arm_cfg.losses = arm.losses;
            let arm_dir = seed_dir.join(arm.name);
            let stage1_ckpt = arm.use_stage1.then_some(&stage1.checkpoint);
            let result = train_stage2(&arm_cfg, &train, &disc_store, stage1_ckpt, &arm_dir)
                .map_err(|e| CliError::from(e).context(&ctx))?;
            let embeddings = embed_all(&result.model, &test, arm_cfg.optim.batch_size)
                .map_err(|e| CliError::from(e).context(&ctx))?;
            let mut report =
                verify(&embeddings, &set).map_err(|e| CliError::from(e).context(&ctx))?;
            report
                .metadata
                .insert("pairs".into(), pair_hash[&seed.to_string()].clone());
            report.metadata.insert("arm".into(), arm.name.to_string());
            report.metadata.insert("seed".into(), seed.to_string());
            report
                .save(&arm_dir.join("verify.json"))
                .map_err(|e| CliError::from(e).context(&ctx))?;
            per_arm[slot].push(SeedAccuracy {
                seed,
                accuracy: report.accuracy,
            });
        }
    }

    let arms: Vec<ArmSummary> = ARMS
        .iter()
        .zip(per_arm)
        .map(|(arm, per_seed)| {
            let mean =
                per_seed.iter().map(|s| s.accuracy).sum::<f64>() / per_seed.len() as f64;
            ArmSummary {
                name: arm.name.to_string(),
                backbone_distilled: arm.use_stage1,
                losses: fmt_losses(&arm.losses),
                per_seed,
                mean_accuracy: mean,
            }
        })
        .collect();

    let table = AblationTable {
        seeds: args.seeds.clone(),
        arms,
        inputs: inputs.clone(),
        pair_hash,
        config_hash: base.config_hash(),
    };
    let table_path = args.out.join("ablation.json");
    let mut text = serde_json::to_string_pretty(&table).expect("table is serializable");
    text.push('\n');
    std::fs::write(&table_path, text).map_err(|e| crate::error::io_usage(&table_path, e))?;

    let mut meta = RunMeta::for_run("ablate", &base);
    meta.config.insert(
        "seeds".to_string(),
        args.seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    for (name, hash) in &inputs {
        meta.input_hash(name, hash.clone());
    }
    meta.output("ablation.json");
    meta.write(&args.out)?;

    let summary: BTreeMap<&str, f64> = table
        .arms
        .iter()
        .map(|a| (a.name.as_str(), a.mean_accuracy))
        .collect();
    println!(
        "{}",
        serde_json::json!({
            "command": "ablate",
            "seeds": table.seeds,
            "mean_accuracy": summary,
            "table": path_string(&table_path),
        })
    );
    Ok(())
}
