//! `eval-verify`, `eval-retrieve`, `eval-identify`: the three protocols,
//! each writing a metrics JSON whose metadata carries content hashes of
//! everything the number depends on (checkpoint, data, pair protocol,
//! seeds) — never paths, so identical runs produce identical report bytes
//! wherever they are executed.

use std::path::{Path, PathBuf};

use clap::Args;
use gdrd_core::config::RunConfig;
use gdrd_core::data::{load_checkpoint, load_manifest, Checkpoint, Manifest};
use gdrd_core::eval::{
    build_pairs, embed_all, identify_finetune, retrieve, verify, MetricsReport, VerificationSet,
};
use gdrd_core::model::StudentModel;
use gdrd_core::rng::{stream_rng, STREAM_EVAL_PAIRS};
use gdrd_core::train::Dataset;

use crate::error::CliError;
use crate::meta::{dataset_hash, file_hash, RunMeta};
use crate::opts::{create_out_dir, path_string, required, ConfigArgs};

#[derive(Debug, Args)]
pub struct EvalVerifyArgs {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Trained checkpoint to evaluate (overrides `checkpoint`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,

    /// Evaluation split manifest (overrides `manifest_test`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,

    /// Reuse a saved pair protocol instead of sampling one.
    #[arg(long)]
    pub pairs: Option<PathBuf>,

    /// Seed for pair sampling (defaults to the config seed).
    #[arg(long)]
    pub pair_seed: Option<u64>,

    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalRetrieveArgs {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Trained checkpoint to evaluate (overrides `checkpoint`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,

    /// Gallery manifest (overrides `manifest`).
    #[arg(long)]
    pub gallery: Option<PathBuf>,

    /// Probe manifest (overrides `manifest_test`).
    #[arg(long)]
    pub probes: Option<PathBuf>,

    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalIdentifyArgs {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Trained checkpoint to evaluate (overrides `checkpoint`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,

    /// Manifest of the split the classifier is fitted on (overrides `manifest`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,

    /// Manifest of the held-out split (overrides `manifest_test`).
    #[arg(long)]
    pub manifest_test: Option<PathBuf>,

    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Rebuilds the model a checkpoint was saved from: the architecture hash
/// must match the active config, and the class count is read off the
/// classifier bias.
fn load_model(cfg: &RunConfig, path: &Path) -> Result<(StudentModel<f32>, Checkpoint), CliError> {
    let ckpt = load_checkpoint(path)?;
    ckpt.expect_model_hash(&cfg.model_config_hash())?;
    let classes = ckpt.tensor("head.logits.bias")?.dims[0];
    let mut model = StudentModel::<f32>::new(&cfg.model, classes, ckpt.meta.seed)?;
    ckpt.apply_to_model(&mut model)?;
    Ok((model, ckpt))
}

fn load_split(
    cfg: &RunConfig,
    manifest_path: &Path,
) -> Result<(Manifest, Dataset<f32>), CliError> {
    let manifest = load_manifest(manifest_path)?;
    let dataset = Dataset::<f32>::load(&manifest, cfg.model.input_side)?;
    Ok((manifest, dataset))
}

fn print_report_summary(command: &str, report: &MetricsReport, out_dir: &Path, file: &str) {
    let mut line = serde_json::json!({
        "command": command,
        "protocol": report.protocol,
        "accuracy": report.accuracy,
        "report": path_string(&out_dir.join(file)),
    });
    if let Some(t) = report.threshold {
        line["threshold"] = serde_json::json!(t);
    }
    println!("{line}");
}

pub fn run_verify(args: &EvalVerifyArgs) -> Result<(), CliError> {
    let mut cfg = args.config.resolve()?;
    if let Some(p) = &args.checkpoint {
        cfg.checkpoint = Some(path_string(p));
    }
    if let Some(p) = &args.manifest {
        cfg.manifest_test = Some(path_string(p));
    }
    if let Some(p) = &args.out {
        cfg.out_dir = Some(path_string(p));
    }
    cfg.validate()?;

    let ckpt_path = required(&cfg.checkpoint, "checkpoint", "--checkpoint")?;
    let manifest_path = required(&cfg.manifest_test, "manifest_test", "--manifest")?;
    let out_dir = required(&cfg.out_dir, "out_dir", "--out")?;

    let (manifest, dataset) = load_split(&cfg, &manifest_path)?;
    let (model, _) = load_model(&cfg, &ckpt_path)?;
    let embeddings = embed_all(&model, &dataset, cfg.optim.batch_size)?;

    let pair_seed = args.pair_seed.unwrap_or(cfg.optim.seed);
    let set = match &args.pairs {
        Some(path) => VerificationSet::load(path)?,
        None => build_pairs(
            &dataset.ids,
            &dataset.labels,
            cfg.verify_pos_pairs,
            cfg.verify_neg_pairs,
            &mut stream_rng(pair_seed, STREAM_EVAL_PAIRS),
        )?,
    };
    let mut report = verify(&embeddings, &set)?;

    create_out_dir(&out_dir)?;
    let pairs_path = out_dir.join("verify_pairs.json");
    set.save(&pairs_path)?;

    let ckpt_hash = file_hash(&ckpt_path)?;
    let data_hash = dataset_hash(&manifest_path, &manifest)?;
    let pairs_hash = file_hash(&pairs_path)?;
    report.metadata.insert("checkpoint".into(), ckpt_hash.clone());
    report.metadata.insert("dataset".into(), data_hash.clone());
    report.metadata.insert("pairs".into(), pairs_hash.clone());
    if args.pairs.is_none() {
        report
            .metadata
            .insert("pair_seed".into(), pair_seed.to_string());
    }
    report.save(&out_dir.join("verify.json"))?;

    let mut meta = RunMeta::for_run("eval-verify", &cfg);
    meta.input_hash("checkpoint", ckpt_hash);
    meta.input_hash("dataset", data_hash);
    meta.input_hash("pairs", pairs_hash);
    meta.output("verify.json");
    meta.output("verify_pairs.json");
    meta.write(&out_dir)?;

    print_report_summary("eval-verify", &report, &out_dir, "verify.json");
    Ok(())
}

pub fn run_retrieve(args: &EvalRetrieveArgs) -> Result<(), CliError> {
    let mut cfg = args.config.resolve()?;
    if let Some(p) = &args.checkpoint {
        cfg.checkpoint = Some(path_string(p));
    }
    if let Some(p) = &args.gallery {
        cfg.manifest = Some(path_string(p));
    }
    if let Some(p) = &args.probes {
        cfg.manifest_test = Some(path_string(p));
    }
    if let Some(p) = &args.out {
        cfg.out_dir = Some(path_string(p));
    }
    cfg.validate()?;

    let ckpt_path = required(&cfg.checkpoint, "checkpoint", "--checkpoint")?;
    let gallery_path = required(&cfg.manifest, "manifest", "--gallery")?;
    let probes_path = required(&cfg.manifest_test, "manifest_test", "--probes")?;
    let out_dir = required(&cfg.out_dir, "out_dir", "--out")?;

    let (gallery_manifest, gallery_ds) = load_split(&cfg, &gallery_path)?;
    let (probe_manifest, probe_ds) = load_split(&cfg, &probes_path)?;
    let (model, _) = load_model(&cfg, &ckpt_path)?;
    let gallery_emb = embed_all(&model, &gallery_ds, cfg.optim.batch_size)?;
    let probe_emb = embed_all(&model, &probe_ds, cfg.optim.batch_size)?;

    let mut report = retrieve(&gallery_emb, &probe_emb, &cfg.retrieve_ranks)?;

    create_out_dir(&out_dir)?;
    let ckpt_hash = file_hash(&ckpt_path)?;
    let gallery_hash = dataset_hash(&gallery_path, &gallery_manifest)?;
    let probe_hash = dataset_hash(&probes_path, &probe_manifest)?;
    report.metadata.insert("checkpoint".into(), ckpt_hash.clone());
    report
        .metadata
        .insert("dataset_gallery".into(), gallery_hash.clone());
    report
        .metadata
        .insert("dataset_probes".into(), probe_hash.clone());
    report.save(&out_dir.join("retrieve.json"))?;

    let mut meta = RunMeta::for_run("eval-retrieve", &cfg);
    meta.input_hash("checkpoint", ckpt_hash);
    meta.input_hash("dataset_gallery", gallery_hash);
    meta.input_hash("dataset_probes", probe_hash);
    meta.output("retrieve.json");
    meta.write(&out_dir)?;

    print_report_summary("eval-retrieve", &report, &out_dir, "retrieve.json");
    Ok(())
}

pub fn run_identify(args: &EvalIdentifyArgs) -> Result<(), CliError> {
    let mut cfg = args.config.resolve()?;
    if let Some(p) = &args.checkpoint {
        cfg.checkpoint = Some(path_string(p));
    }
    if let Some(p) = &args.manifest {
        cfg.manifest = Some(path_string(p));
    }
    if let Some(p) = &args.manifest_test {
        cfg.manifest_test = Some(path_string(p));
    }
    if let Some(p) = &args.out {
        cfg.out_dir = Some(path_string(p));
    }
    cfg.validate()?;

    let ckpt_path = required(&cfg.checkpoint, "checkpoint", "--checkpoint")?;
    let train_path = required(&cfg.manifest, "manifest", "--manifest")?;
    let test_path = required(&cfg.manifest_test, "manifest_test", "--manifest-test")?;
    let out_dir = required(&cfg.out_dir, "out_dir", "--out")?;

    let (train_manifest, train_ds) = load_split(&cfg, &train_path)?;
    let (test_manifest, test_ds) = load_split(&cfg, &test_path)?;
    let (model, _) = load_model(&cfg, &ckpt_path)?;

    let mut report = identify_finetune(&model, &train_ds, &test_ds, &cfg)?;

    create_out_dir(&out_dir)?;
    let ckpt_hash = file_hash(&ckpt_path)?;
    let train_hash = dataset_hash(&train_path, &train_manifest)?;
    let test_hash = dataset_hash(&test_path, &test_manifest)?;
    report.metadata.insert("checkpoint".into(), ckpt_hash.clone());
    report
        .metadata
        .insert("dataset_train".into(), train_hash.clone());
    report
        .metadata
        .insert("dataset_test".into(), test_hash.clone());
    report
        .metadata
        .insert("seed".into(), cfg.optim.seed.to_string());
    report.save(&out_dir.join("identify.json"))?;

    let mut meta = RunMeta::for_run("eval-identify", &cfg);
    meta.input_hash("checkpoint", ckpt_hash);
    meta.input_hash("dataset_train", train_hash);
    meta.input_hash("dataset_test", test_hash);
    meta.output("identify.json");
    meta.write(&out_dir)?;

    print_report_summary("eval-identify", &report, &out_dir, "identify.json");
    Ok(())
}
