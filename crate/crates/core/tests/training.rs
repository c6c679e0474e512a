use memscreen_core::health::{self, Example};
use memscreen_core::models::{
    self, build_mod1d, build_mod2d_scaled, train, HealthBatches, ImageBatches, TrainConfig,
};
use memscreen_core::synth;
use memscreen_nn::{Activation, LayerSpec, ModelGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn shifted_classes(n: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let shift = if label == 1 { 1.5 } else { -1.5 };
            Example {
                features: (0..6).map(|_| shift + rng.gen_range(-1.0..1.0)).collect(),
                label,
            }
        })
        .collect()
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let data = shifted_classes(40, 1);
    let mut m = build_mod1d(5);
    let before = m.parameters().to_vec();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        epochs: 3,
        ..TrainConfig::mod1d(5)
    };
    let src = HealthBatches {
        set: &data,
        batch_size: 32,
        shuffle_seed: Some(1),
    };
    train(&mut m, &src, None, &cfg, &mut |_| {}).unwrap();
    assert_eq!(m.parameters(), before.as_slice());
}

#[test]
fn training_is_deterministic() {
    let data = shifted_classes(64, 2);
    let run = || {
        let mut m = build_mod1d(9);
        let src = HealthBatches {
            set: &data,
            batch_size: 32,
            shuffle_seed: Some(3),
        };
        let cfg = TrainConfig {
            epochs: 4,
            ..TrainConfig::mod1d(9)
        };
        let log = train(&mut m, &src, Some(&src), &cfg, &mut |_| {}).unwrap();
        (log, m.parameters().to_vec())
    };
    assert_eq!(run(), run());
}

#[test]
fn separable_health_data_is_learned() {
    let data = shifted_classes(400, 4);
    let mut m = build_mod1d(11);
    let src = HealthBatches {
        set: &data,
        batch_size: 32,
        shuffle_seed: Some(4),
    };
    let cfg = TrainConfig {
        epochs: 30,
        ..TrainConfig::mod1d(11)
    };
    let log = train(&mut m, &src, None, &cfg, &mut |_| {}).unwrap();
    assert_eq!(log.len(), 30);
    let (_, acc) = models::evaluate_loss(&m, &src).unwrap();
    assert!(acc >= 0.95, "train accuracy {acc}");
}

#[test]
fn epoch_log_csv_has_one_row_per_epoch() {
    let data = shifted_classes(40, 5);
    let mut m = build_mod1d(1);
    let src = HealthBatches {
        set: &data,
        batch_size: 32,
        shuffle_seed: None,
    };
    let cfg = TrainConfig {
        epochs: 5,
        ..TrainConfig::mod1d(1)
    };
    let mut seen = 0;
    let log = train(&mut m, &src, Some(&src), &cfg, &mut |_| seen += 1).unwrap();
    assert_eq!(seen, 5);
    let mut buf = Vec::new();
    models::write_epoch_log(&mut buf, &log).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next(), Some("epoch,train_loss,train_acc,val_loss,val_acc"));
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn non_finite_loss_aborts_with_context() {
    let data = shifted_classes(8, 6);
    let mut m = build_mod1d(1);
    m.parameters_mut()[0].data_mut()[0] = f32::NAN;
    let src = HealthBatches {
        set: &data,
        batch_size: 4,
        shuffle_seed: None,
    };
    let err = train(&mut m, &src, None, &TrainConfig::mod1d(1), &mut |_| {}).unwrap_err();
    assert!(
        matches!(err, models::ModelError::NonFiniteLoss { epoch: 1, batch: 0 }),
        "{err}"
    );
}

#[test]
fn full_health_pipeline_on_synthetic_corpus() {
    let records = synth::health_records(1000, 7);
    let prepared = health::prepare(&records, 7).unwrap();
    let mut m = build_mod1d(7);
    let cfg = TrainConfig {
        epochs: 40,
        ..TrainConfig::mod1d(7)
    };
    let src = HealthBatches {
        set: &prepared.train,
        batch_size: cfg.batch_size,
        shuffle_seed: Some(cfg.seed),
    };
    train(&mut m, &src, None, &cfg, &mut |_| {}).unwrap();
    let test = HealthBatches {
        set: &prepared.test,
        batch_size: 32,
        shuffle_seed: None,
    };
    let (_, acc) = models::evaluate_loss(&m, &test).unwrap();
    assert!(acc >= 0.9, "test accuracy {acc}");
}

#[test]
fn small_image_model_overfits_textures() {
    // A miniature of the 2D stack; the full-size gates live in the
    // acceptance suite.
    let conv = |filters| LayerSpec::Conv2D {
        kernel: (3, 3),
        filters,
        activation: Activation::Relu,
    };
    let layers = vec![
        conv(8),
        LayerSpec::MaxPool2D,
        conv(8),
        LayerSpec::MaxPool2D,
        LayerSpec::Flatten,
        LayerSpec::Dense {
            units: 16,
            activation: Activation::Relu,
        },
        LayerSpec::Dense {
            units: 1,
            activation: Activation::Sigmoid,
        },
    ];
    let mut m = ModelGraph::<f32>::new(vec![24, 24, 3], layers, 3).unwrap();
    let samples = synth::texture_samples(8, 24, 3);
    let src = ImageBatches {
        samples: &samples,
        batch_size: 32,
        shuffle_seed: Some(3),
        augment: None,
    };
    let cfg = TrainConfig {
        learning_rate: 0.003,
        epochs: 60,
        ..TrainConfig::mod2d(3)
    };
    train(&mut m, &src, None, &cfg, &mut |_| {}).unwrap();
    let (_, acc) = models::evaluate_loss(&m, &src).unwrap();
    assert_eq!(acc, 1.0);
}

#[test]
fn scaled_image_model_builds_for_smoke_side() {
    let m = build_mod2d_scaled(64, 0).unwrap();
    assert_eq!(m.output_shape(), &[1]);
}
