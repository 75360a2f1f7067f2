//! Synthetic dataset generator: blob-textured class templates rendered as
//! high-resolution PGM images, plus matching teacher stores.
//!
//! Classes share a common blob layout and differ by small per-class
//! perturbations plus a few class-specific blobs. That keeps classes
//! confusable for an untrained feature extractor while leaving enough signal
//! for a trained one, which is what the training ablations need to show a
//! spread.
//!
//! Randomness is split across three fixed stream ids so that regenerating
//! with the same seed is byte-identical:
//!
//! - templates ([`STREAM_SYNTH_TEMPLATES`]): shared blob layout, then
//!   per-class perturbations and extra blobs, class-major;
//! - samples ([`STREAM_SYNTH_SAMPLES`]): per sample (class-major,
//!   sample-minor) a pixel translation in `[-3, 3]^2` followed by per-pixel
//!   Gaussian noise;
//! - teachers ([`STREAM_SYNTH_TEACHERS`]): per-class prototypes (one per
//!   teacher), then per-sample feature noise and logit noise. Generative
//!   features live at norm `sqrt(gen_dim)`, discriminative ones at norm 1;
//!   see [`draw_teachers`].

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::manifest::{save_manifest, ManifestRecord};
use super::pgm::write_pgm;
use super::store::{save_store, TeacherRecord, TeacherStore};
use super::{io_err, DataError};
use crate::rng::{
    stream_rng, STREAM_SYNTH_SAMPLES, STREAM_SYNTH_TEACHERS, STREAM_SYNTH_TEMPLATES,
};

const BASE_BLOBS: usize = 6;
const CLASS_BLOBS: usize = 3;
const BASE_CENTER_RANGE: (f64, f64) = (0.20, 0.80); // fraction of side
const BASE_RADIUS_RANGE: (f64, f64) = (0.15, 0.30);
const BASE_WEIGHT_RANGE: (f64, f64) = (0.5, 1.0);
const CLASS_CENTER_OFFSET: f64 = 0.04;
const CLASS_RADIUS_JITTER: f64 = 0.02;
const CLASS_WEIGHT_JITTER: f64 = 0.15;
const CLASS_BLOB_CENTER_RANGE: (f64, f64) = (0.15, 0.85);
const CLASS_BLOB_RADIUS_RANGE: (f64, f64) = (0.05, 0.12);
const CLASS_BLOB_WEIGHT: f64 = 0.35; // drawn from +-this range
const JITTER_PX: i64 = 3;
const PIXEL_NOISE_SIGMA: f64 = 0.02;
const GEN_NOISE_SIGMA: f64 = 0.05;
const DISC_NOISE_SIGMA: f64 = 0.02;
const LOGIT_SCALE: f64 = 10.0;
const LOGIT_NOISE_SIGMA: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub classes: usize,
    /// Total samples per class; the last `test_per_class` form the test split.
    pub per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
    /// Side length of the rendered high-resolution images.
    pub hr_side: usize,
    /// Dimension of the generative teacher's feature vectors.
    pub gen_dim: usize,
    /// Dimension of the discriminative teacher's feature vectors.
    pub disc_dim: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 20,
            per_class: 60,
            test_per_class: 10,
            seed: 7,
            hr_side: 112,
            gen_dim: 512,
            disc_dim: 512,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest: PathBuf,
    pub manifest_train: PathBuf,
    pub manifest_test: PathBuf,
    pub gen_store: PathBuf,
    pub disc_store: PathBuf,
    pub image_count: usize,
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    cx: f64,
    cy: f64,
    radius: f64,
    weight: f64,
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    rng.gen_range(range.0..range.1)
}

/// Draws the shared layout once, then one perturbed copy per class.
fn draw_templates(rng: &mut ChaCha8Rng, classes: usize, side: usize) -> Vec<Vec<f64>> {
    let s = side as f64;
    let base: Vec<Blob> = (0..BASE_BLOBS)
        .map(|_| Blob {
            cx: uniform(rng, BASE_CENTER_RANGE) * s,
            cy: uniform(rng, BASE_CENTER_RANGE) * s,
            radius: uniform(rng, BASE_RADIUS_RANGE) * s,
            weight: uniform(rng, BASE_WEIGHT_RANGE),
        })
        .collect();

    (0..classes)
        .map(|_| {
            let mut blobs: Vec<Blob> = base
                .iter()
                .map(|b| Blob {
                    cx: b.cx + uniform(rng, (-CLASS_CENTER_OFFSET, CLASS_CENTER_OFFSET)) * s,
                    cy: b.cy + uniform(rng, (-CLASS_CENTER_OFFSET, CLASS_CENTER_OFFSET)) * s,
                    radius: b.radius
                        + uniform(rng, (-CLASS_RADIUS_JITTER, CLASS_RADIUS_JITTER)) * s,
                    weight: b.weight
                        + uniform(rng, (-CLASS_WEIGHT_JITTER, CLASS_WEIGHT_JITTER)),
                })
                .collect();
            for _ in 0..CLASS_BLOBS {
                blobs.push(Blob {
                    cx: uniform(rng, CLASS_BLOB_CENTER_RANGE) * s,
                    cy: uniform(rng, CLASS_BLOB_CENTER_RANGE) * s,
                    radius: uniform(rng, CLASS_BLOB_RADIUS_RANGE) * s,
                    weight: uniform(rng, (-CLASS_BLOB_WEIGHT, CLASS_BLOB_WEIGHT)),
                });
            }
            render(&blobs, side)
        })
        .collect()
}

/// Sums polynomial bumps `w * (1 - d^2/r^2)^2` and min-max normalizes the
/// result to `[0, 1]`.
fn render(blobs: &[Blob], side: usize) -> Vec<f64> {
    let mut img = vec![0.0; side * side];
    for b in blobs {
        let r2 = b.radius * b.radius;
        for y in 0..side {
            let dy = y as f64 - b.cy;
            for x in 0..side {
                let dx = x as f64 - b.cx;
                let d2 = dx * dx + dy * dy;
                if d2 < r2 {
                    let u = 1.0 - d2 / r2;
                    img[y * side + x] += b.weight * u * u;
                }
            }
        }
    }
    let lo = img.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    for v in &mut img {
        *v = (*v - lo) / span;
    }
    img
}

/// Translates by whole pixels, filling vacated pixels with zero.
fn shift(img: &[f64], side: usize, dx: i64, dy: i64) -> Vec<f64> {
    let mut out = vec![0.0; side * side];
    for y in 0..side as i64 {
        let sy = y - dy;
        if sy < 0 || sy >= side as i64 {
            continue;
        }
        for x in 0..side as i64 {
            let sx = x - dx;
            if sx < 0 || sx >= side as i64 {
                continue;
            }
            out[(y * side as i64 + x) as usize] = img[(sy * side as i64 + sx) as usize];
        }
    }
    out
}

fn unit_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for x in v {
        *x /= norm;
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, normal: &Normal<f64>, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal.sample(rng)).collect()
}

pub(crate) struct TeacherDraws {
    // The prototypes are drawn before any per-sample noise, which pins the
    // RNG stream layout; tests read them to verify class separability.
    #[allow(dead_code)]
    pub gen_protos: Vec<Vec<f64>>,
    #[allow(dead_code)]
    pub disc_protos: Vec<Vec<f64>>,
    /// Indexed `[class][sample]`.
    pub gen_feats: Vec<Vec<Vec<f64>>>,
    pub disc_feats: Vec<Vec<Vec<f64>>>,
    pub logits: Vec<Vec<Vec<f64>>>,
}

/// Draw order: per class a generative then a discriminative unit prototype;
/// then per sample (class-major) generative noise, discriminative noise,
/// logit noise.
///
/// Generative features (and their prototypes) are scaled to norm
/// `sqrt(gen_dim)`: a fan-in-initialized backbone produces features with
/// per-dimension variance near 1, so regression targets at that same scale
/// keep the summed stage-1 loss well-conditioned from the first step
/// instead of opening with a violent norm collapse. The discriminative
/// teacher stays unit-norm; its consumers normalize their projections.
pub(crate) fn draw_teachers(
    rng: &mut ChaCha8Rng,
    classes: usize,
    per_class: usize,
    gen_dim: usize,
    disc_dim: usize,
) -> TeacherDraws {
    let std_normal = Normal::new(0.0, 1.0).expect("valid sigma");
    let gen_noise = Normal::new(0.0, GEN_NOISE_SIGMA).expect("valid sigma");
    let disc_noise = Normal::new(0.0, DISC_NOISE_SIGMA).expect("valid sigma");
    let logit_noise = Normal::new(0.0, LOGIT_NOISE_SIGMA).expect("valid sigma");
    let gen_scale = (gen_dim as f64).sqrt();

    let mut gen_protos = Vec::with_capacity(classes);
    let mut disc_protos = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut g = normal_vec(rng, &std_normal, gen_dim);
        unit_normalize(&mut g);
        for x in &mut g {
            *x *= gen_scale;
        }
        gen_protos.push(g);
        let mut d = normal_vec(rng, &std_normal, disc_dim);
        unit_normalize(&mut d);
        disc_protos.push(d);
    }

    let mut gen_feats = Vec::with_capacity(classes);
    let mut disc_feats = Vec::with_capacity(classes);
    let mut logits = Vec::with_capacity(classes);
    for c in 0..classes {
        let mut class_gen = Vec::with_capacity(per_class);
        let mut class_disc = Vec::with_capacity(per_class);
        let mut class_logits = Vec::with_capacity(per_class);
        for _ in 0..per_class {
            let mut g = normal_vec(rng, &gen_noise, gen_dim);
            for (x, p) in g.iter_mut().zip(&gen_protos[c]) {
                *x += *p / gen_scale;
            }
            unit_normalize(&mut g);
            for x in &mut g {
                *x *= gen_scale;
            }
            class_gen.push(g);

            let mut d = normal_vec(rng, &disc_noise, disc_dim);
            for (x, p) in d.iter_mut().zip(&disc_protos[c]) {
                *x += p;
            }
            unit_normalize(&mut d);
            class_disc.push(d);

            let mut z = normal_vec(rng, &logit_noise, classes);
            z[c] += LOGIT_SCALE;
            class_logits.push(z);
        }
        gen_feats.push(class_gen);
        disc_feats.push(class_disc);
        logits.push(class_logits);
    }

    TeacherDraws {
        gen_protos,
        disc_protos,
        gen_feats,
        disc_feats,
        logits,
    }
}

fn sample_id(class: usize, sample: usize) -> String {
    format!("c{class:03}_s{sample:03}")
}

/// Renders the dataset into `out_dir`: `images/*.pgm`, three manifests
/// (all / train / test), and the two teacher stores.
pub fn generate_synth(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthOutput, DataError> {
    if cfg.classes < 2 {
        return Err(DataError::InvalidArgument(format!(
            "need at least 2 classes, got {}",
            cfg.classes
        )));
    }
    if cfg.per_class < 2 {
        return Err(DataError::InvalidArgument(format!(
            "need at least 2 samples per class, got {}",
            cfg.per_class
        )));
    }
    if cfg.test_per_class >= cfg.per_class {
        return Err(DataError::InvalidArgument(format!(
            "test split ({}) must leave at least one training sample per class ({})",
            cfg.test_per_class, cfg.per_class
        )));
    }
    if cfg.hr_side == 0 || cfg.gen_dim == 0 || cfg.disc_dim == 0 {
        return Err(DataError::InvalidArgument(
            "image side and teacher dimensions must be positive".to_string(),
        ));
    }

    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| io_err(&images_dir, e))?;

    let mut rng_templates = stream_rng(cfg.seed, STREAM_SYNTH_TEMPLATES);
    let templates = draw_templates(&mut rng_templates, cfg.classes, cfg.hr_side);

    let mut rng_teachers = stream_rng(cfg.seed, STREAM_SYNTH_TEACHERS);
    let teachers = draw_teachers(
        &mut rng_teachers,
        cfg.classes,
        cfg.per_class,
        cfg.gen_dim,
        cfg.disc_dim,
    );

    let mut rng_samples = stream_rng(cfg.seed, STREAM_SYNTH_SAMPLES);
    let pixel_noise = Normal::new(0.0, PIXEL_NOISE_SIGMA).expect("valid sigma");

    let mut all = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut gen_store = TeacherStore::new(cfg.gen_dim, None);
    let mut disc_store = TeacherStore::new(cfg.disc_dim, Some(cfg.classes));

    for class in 0..cfg.classes {
        for sample in 0..cfg.per_class {
            let dx = rng_samples.gen_range(-JITTER_PX..=JITTER_PX);
            let dy = rng_samples.gen_range(-JITTER_PX..=JITTER_PX);
            let mut img = shift(&templates[class], cfg.hr_side, dx, dy);
            for v in &mut img {
                *v = (*v + pixel_noise.sample(&mut rng_samples)).clamp(0.0, 1.0);
            }
            let pixels: Vec<u8> = img.iter().map(|&v| (v * 255.0).round() as u8).collect();

            let id = sample_id(class, sample);
            let file = format!("images/{id}.pgm");
            write_pgm(&images_dir.join(format!("{id}.pgm")), cfg.hr_side, cfg.hr_side, &pixels)?;

            let record = ManifestRecord {
                id: id.clone(),
                path: file,
                label: class,
            };
            all.push(record.clone());
            if sample < cfg.per_class - cfg.test_per_class {
                train.push(record);
            } else {
                test.push(record);
            }

            gen_store.push(TeacherRecord {
                id: id.clone(),
                features: teachers.gen_feats[class][sample]
                    .iter()
                    .map(|&v| v as f32)
                    .collect(),
                logits: None,
            })?;
            disc_store.push(TeacherRecord {
                id,
                features: teachers.disc_feats[class][sample]
                    .iter()
                    .map(|&v| v as f32)
                    .collect(),
                logits: Some(
                    teachers.logits[class][sample]
                        .iter()
                        .map(|&v| v as f32)
                        .collect(),
                ),
            })?;
        }
    }

    let out = SynthOutput {
        manifest: out_dir.join("manifest.json"),
        manifest_train: out_dir.join("manifest_train.json"),
        manifest_test: out_dir.join("manifest_test.json"),
        gen_store: out_dir.join("teacher_gen.gten"),
        disc_store: out_dir.join("teacher_disc.gten"),
        image_count: all.len(),
    };
    save_manifest(&all, &out.manifest)?;
    save_manifest(&train, &out.manifest_train)?;
    if cfg.test_per_class > 0 {
        save_manifest(&test, &out.manifest_test)?;
    }
    save_store(&gen_store, &out.gen_store)?;
    save_store(&disc_store, &out.disc_store)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_manifest, load_store};

    fn tiny_cfg() -> SynthConfig {
        SynthConfig {
            classes: 3,
            per_class: 4,
            test_per_class: 1,
            seed: 7,
            hr_side: 14,
            gen_dim: 8,
            disc_dim: 8,
        }
    }

    #[test]
    fn writes_counted_images_manifests_and_stores() {
        let dir = tempfile::tempdir().unwrap();
        let out = generate_synth(&tiny_cfg(), dir.path()).unwrap();
        assert_eq!(out.image_count, 12);

        let all = load_manifest(&out.manifest).unwrap();
        let train = load_manifest(&out.manifest_train).unwrap();
        let test = load_manifest(&out.manifest_test).unwrap();
        assert_eq!(all.len(), 12);
        assert_eq!(train.len(), 9);
        assert_eq!(test.len(), 3);
        assert_eq!(all.num_classes(), 3);
        assert_eq!(test.num_classes(), 3);

        let gen = load_store(&out.gen_store).unwrap();
        let disc = load_store(&out.disc_store).unwrap();
        assert_eq!(gen.len(), 12);
        assert_eq!(disc.len(), 12);
        assert_eq!(gen.logit_dim(), None);
        assert_eq!(disc.logit_dim(), Some(3));
        for record in all.records() {
            assert!(gen.lookup(&record.id).is_ok());
            assert!(disc.lookup(&record.id).is_ok());
        }
    }

    #[test]
    fn same_seed_reproduces_identical_bytes() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let out_a = generate_synth(&tiny_cfg(), dir_a.path()).unwrap();
        let out_b = generate_synth(&tiny_cfg(), dir_b.path()).unwrap();

        for (a, b) in [
            (&out_a.gen_store, &out_b.gen_store),
            (&out_a.disc_store, &out_b.disc_store),
        ] {
            assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        }
        let img = "images/c002_s003.pgm";
        assert_eq!(
            std::fs::read(dir_a.path().join(img)).unwrap(),
            std::fs::read(dir_b.path().join(img)).unwrap()
        );

        let mut other = tiny_cfg();
        other.seed = 8;
        let dir_c = tempfile::tempdir().unwrap();
        generate_synth(&other, dir_c.path()).unwrap();
        assert_ne!(
            std::fs::read(dir_a.path().join(img)).unwrap(),
            std::fs::read(dir_c.path().join(img)).unwrap()
        );
    }

    #[test]
    fn disc_features_classify_perfectly_against_prototypes() {
        let mut rng = stream_rng(7, crate::rng::STREAM_SYNTH_TEACHERS);
        let draws = draw_teachers(&mut rng, 5, 20, 16, 32);
        for (class, feats) in draws.disc_feats.iter().enumerate() {
            for feat in feats {
                let best = draws
                    .disc_protos
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let dot: f64 = p.iter().zip(feat).map(|(a, b)| a * b).sum();
                        (i, dot)
                    })
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .unwrap()
                    .0;
                assert_eq!(best, class);
            }
        }
        for (class, logits) in draws.logits.iter().enumerate() {
            for z in logits {
                let best = z
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0;
                assert_eq!(best, class);
            }
        }
        for (class, feats) in draws.gen_feats.iter().enumerate() {
            for feat in feats {
                let dot: f64 = draws.gen_protos[class]
                    .iter()
                    .zip(feat)
                    .map(|(a, b)| a * b)
                    .sum();
                let np: f64 = draws.gen_protos[class].iter().map(|x| x * x).sum::<f64>().sqrt();
                let nf: f64 = feat.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!(dot / (np * nf) > 0.9, "gen feature drifted from its prototype");
            }
        }
    }

    #[test]
    fn teacher_features_have_their_documented_scales() {
        let mut rng = stream_rng(3, crate::rng::STREAM_SYNTH_TEACHERS);
        let draws = draw_teachers(&mut rng, 3, 5, 16, 16);
        let gen_scale = 16f64.sqrt();
        for feats in &draws.gen_feats {
            for f in feats {
                let norm: f64 = f.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((norm - gen_scale).abs() < 1e-9);
            }
        }
        for feats in &draws.disc_feats {
            for f in feats {
                let norm: f64 = f.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn degenerate_configurations_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg();
        cfg.classes = 1;
        assert!(matches!(
            generate_synth(&cfg, dir.path()),
            Err(DataError::InvalidArgument(_))
        ));

        let mut cfg = tiny_cfg();
        cfg.test_per_class = cfg.per_class;
        assert!(matches!(
            generate_synth(&cfg, dir.path()),
            Err(DataError::InvalidArgument(_))
        ));
    }

    #[test]
    fn translation_shifts_pixels_with_zero_fill() {
        let img = vec![1.0, 2.0, 3.0, 4.0];
        let shifted = shift(&img, 2, 1, 0);
        assert_eq!(shifted, vec![0.0, 1.0, 0.0, 3.0]);
        let shifted = shift(&img, 2, 0, -1);
        assert_eq!(shifted, vec![3.0, 4.0, 0.0, 0.0]);
    }
}
