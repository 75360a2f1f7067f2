//! Known-answer regression pins: a fixed seed and a fixed input must keep
//! producing exactly these numbers. If one of these tests breaks, parameter
//! initialisation order, the conv/linear arithmetic, or the RNG stream layout
//! changed — all of which silently invalidate existing checkpoints.

use gdrd_core::config::ModelConfig;
use gdrd_core::model::StudentModel;
use gdrd_core::tensor::Tensor;

fn fixture_config() -> ModelConfig {
    ModelConfig {
        input_side: 8,
        input_channels: 1,
        conv_channels: vec![2, 3],
        feature_dim: 4,
        embed_dim: 5,
        relation_hidden: 4,
        relation_dim: 3,
        proj_dim: 2,
    }
}

/// Two images whose pixel k is ((k*7 + i*13) mod 256)/255.
fn fixture_batch_f64() -> Tensor<f64> {
    let mut data = Vec::with_capacity(128);
    for i in 0..2usize {
        for k in 0..64usize {
            data.push(((k * 7 + i * 13) % 256) as f64 / 255.0);
        }
    }
    Tensor::from_vec(&[2, 1, 8, 8], data).unwrap()
}

const GOLDEN_FEATURES: [f64; 8] = [
    -0.021886416216288562,
    0.06665702998535535,
    -0.07165482601149739,
    -0.19483455000926422,
    -0.022339040737277244,
    0.07365345876060453,
    -0.07804917794941746,
    -0.2127347140517323,
];

const GOLDEN_EMBEDDING: [f64; 10] = [
    0.16109157457694848,
    -0.05069262741481501,
    0.10792716279521856,
    0.09904559569106984,
    -0.08000478235444128,
    0.1765771528300852,
    -0.05690103694312077,
    0.11732262969712658,
    0.10889934344800026,
    -0.08788451447698112,
];

const GOLDEN_LOGITS: [f64; 6] = [
    -0.09339274002913947,
    -0.04933965178689965,
    0.03238507536180139,
    -0.10310194868205459,
    -0.055214895212831266,
    0.035609049105270865,
];

fn assert_close(actual: &[f64], golden: &[f64], tol: f64, what: &str) {
    assert_eq!(actual.len(), golden.len(), "{what}: length changed");
    for (i, (a, g)) in actual.iter().zip(golden).enumerate() {
        let scale = g.abs().max(1e-12);
        assert!(
            ((a - g) / scale).abs() <= tol,
            "{what}[{i}]: got {a:e}, pinned {g:e}"
        );
    }
}

#[test]
fn seed7_forward_pass_is_pinned() {
    let model = StudentModel::<f64>::new(&fixture_config(), 3, 7).unwrap();
    let x = fixture_batch_f64();
    let features = model.backbone.forward(&x).unwrap();
    let out = model.head.forward(&features).unwrap();
    assert_close(features.data(), &GOLDEN_FEATURES, 1e-12, "features");
    assert_close(out.embedding.data(), &GOLDEN_EMBEDDING, 1e-12, "embedding");
    assert_close(out.logits.data(), &GOLDEN_LOGITS, 1e-12, "logits");
}

#[test]
fn f32_model_tracks_the_f64_reference() {
    let model = StudentModel::<f32>::new(&fixture_config(), 3, 7).unwrap();
    let x64 = fixture_batch_f64();
    let x = Tensor::from_vec(&[2, 1, 8, 8], x64.data().iter().map(|&v| v as f32).collect())
        .unwrap();
    let out = model.head.forward(&model.backbone.forward(&x).unwrap()).unwrap();
    let embedding: Vec<f64> = out.embedding.data().iter().map(|&v| v as f64).collect();
    // Single-precision arithmetic: agreement to a few ulps of f32.
    assert_close(&embedding, &GOLDEN_EMBEDDING, 2e-6, "f32 embedding");
}

#[test]
fn same_seed_builds_identical_parameters() {
    let a = StudentModel::<f64>::new(&fixture_config(), 3, 7).unwrap();
    let b = StudentModel::<f64>::new(&fixture_config(), 3, 7).unwrap();
    let pa = a.named_params();
    let pb = b.named_params();
    assert_eq!(pa.len(), pb.len());
    for ((na, ta), (nb, tb)) in pa.iter().zip(&pb) {
        assert_eq!(na, nb);
        let bits_a: Vec<u64> = ta.data().iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = tb.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b, "parameter {na} differs between builds");
    }

    let c = StudentModel::<f64>::new(&fixture_config(), 3, 8).unwrap();
    let first = &a.named_params()[0];
    let other = &c.named_params()[0];
    assert_ne!(
        first.1.data(),
        other.1.data(),
        "different seeds must draw different parameters"
    );
}
