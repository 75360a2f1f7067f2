//! `synth`: renders the synthetic face dataset and its two teacher stores.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use gdrd_core::data::{generate_synth, SynthConfig};

use crate::error::CliError;
use crate::meta::RunMeta;
use crate::opts::{create_out_dir, file_name, path_string};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory the dataset is written into (created if missing).
    #[arg(long)]
    pub out: PathBuf,

    /// Number of identity classes.
    #[arg(long, default_value_t = 20)]
    pub classes: usize,

    /// Total images per class, including the test split.
    #[arg(long, default_value_t = 60)]
    pub per_class: usize,

    /// Trailing images per class reserved for the test manifest.
    #[arg(long, default_value_t = 10)]
    pub test_per_class: usize,

    #[arg(long, default_value_t = 7)]
    pub seed: u64,

    /// Side length of the rendered high-resolution images.
    #[arg(long, default_value_t = 112)]
    pub hr_side: usize,

    /// Feature width of the generative teacher store.
    #[arg(long, default_value_t = 512)]
    pub gen_dim: usize,

    /// Feature width of the discriminative teacher store.
    #[arg(long, default_value_t = 512)]
    pub disc_dim: usize,
}

pub fn run(args: &SynthArgs) -> Result<(), CliError> {
    let cfg = SynthConfig {
        classes: args.classes,
        per_class: args.per_class,
        test_per_class: args.test_per_class,
        seed: args.seed,
        hr_side: args.hr_side,
        gen_dim: args.gen_dim,
        disc_dim: args.disc_dim,
    };
    create_out_dir(&args.out)?;
    let output = generate_synth(&cfg, &args.out)?;

    let mut params = BTreeMap::new();
    params.insert("classes".to_string(), cfg.classes.to_string());
    params.insert("per_class".to_string(), cfg.per_class.to_string());
    params.insert("test_per_class".to_string(), cfg.test_per_class.to_string());
    params.insert("seed".to_string(), cfg.seed.to_string());
    params.insert("hr_side".to_string(), cfg.hr_side.to_string());
    params.insert("gen_dim".to_string(), cfg.gen_dim.to_string());
    params.insert("disc_dim".to_string(), cfg.disc_dim.to_string());

    let mut meta = RunMeta::for_params("synth", params);
    for path in [
        &output.manifest,
        &output.manifest_train,
        &output.manifest_test,
        &output.gen_store,
        &output.disc_store,
    ] {
        meta.output(file_name(path));
    }
    meta.write(&args.out)?;

    println!(
        "{}",
        serde_json::json!({
            "command": "synth",
            "classes": cfg.classes,
            "images": output.image_count,
            "out": path_string(&args.out),
        })
    );
    Ok(())
}
