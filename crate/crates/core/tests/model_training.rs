//! End-to-end training on small synthetic feature sets.

use asc_core::features::FeatureTensor;
use asc_core::models::{
    train, ArchitectureConfig, Family, FeatureAugment, Model, TrainingOutcome,
};
use asc_core::nn::TrainConfig;
use asc_core::rng::DetRng;
use ndarray::Array3;

const TIME: usize = 16;
const MELS: usize = 16;

/// Class `k` carries energy in its own mel band; everything else is a low
/// noise floor. Channels 1/2 mimic the small delta channels.
fn clip_of_class(k: usize, rng: &mut DetRng) -> FeatureTensor {
    let band = k * 5..k * 5 + 5;
    let values = Array3::from_shape_fn((TIME, MELS, 3), |(_, m, c)| {
        let noise = rng.range(-0.05, 0.05);
        if c == 0 {
            if band.contains(&m) {
                0.8 + noise
            } else {
                0.2 + noise
            }
        } else {
            0.1 * noise
        }
    });
    FeatureTensor { values }
}

fn toy_dataset(per_class: usize, seed: u64) -> Vec<(FeatureTensor, usize)> {
    let mut rng = DetRng::new(seed);
    let mut data = Vec::new();
    for k in 0..3 {
        for _ in 0..per_class {
            data.push((clip_of_class(k, &mut rng), k));
        }
    }
    data
}

fn accuracy(model: &Model, data: &[(FeatureTensor, usize)]) -> f64 {
    let correct = data
        .iter()
        .filter(|(features, label)| {
            let probs = model.predict(features).unwrap();
            let argmax = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            argmax == *label
        })
        .count();
    correct as f64 / data.len() as f64
}

fn toy_train_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        lr_max: 0.05,
        batch_size: 10,
        epochs,
        seed,
        ..TrainConfig::default()
    }
}

fn train_toy_fcnn(seed: u64) -> (Model, TrainingOutcome, Vec<(FeatureTensor, usize)>) {
    let mut cfg = ArchitectureConfig::for_family(Family::Fcnn, 3);
    cfg.base_channels = 4;
    cfg.dropout_rate = 0.1;
    let mut model = Model::build(&cfg, seed).unwrap();
    let data = toy_dataset(10, 900 + seed);
    let outcome = train(
        &mut model,
        &data,
        &toy_train_config(30, seed),
        &FeatureAugment::none(),
    )
    .unwrap();
    (model, outcome, data)
}

#[test]
fn separable_three_class_set_is_learned() {
    let (model, outcome, train_data) = train_toy_fcnn(0);
    assert_eq!(outcome.loss_curve.len(), 30);
    assert!(
        outcome.final_loss < outcome.loss_curve[0],
        "loss did not descend: {:?}",
        outcome.loss_curve
    );

    let train_acc = accuracy(&model, &train_data);
    assert!(train_acc >= 0.95, "train accuracy {train_acc}");

    // Held-out clips from the same generator, different draws.
    let held_out = toy_dataset(5, 7777);
    let test_acc = accuracy(&model, &held_out);
    assert!(test_acc >= 0.90, "held-out accuracy {test_acc}");
}

#[test]
fn training_is_deterministic_per_seed() {
    let (m1, o1, _) = train_toy_fcnn(3);
    let (m2, o2, _) = train_toy_fcnn(3);
    assert_eq!(o1.final_loss, o2.final_loss);
    assert_eq!(o1.loss_curve, o2.loss_curve);
    let state = |m: &Model| {
        let mut v = Vec::new();
        m.graph.visit_layers(&mut |l| {
            for s in l.state() {
                v.extend_from_slice(s);
            }
        });
        v
    };
    assert_eq!(state(&m1), state(&m2));
}

#[test]
fn resnet_trains_with_feature_augmentation() {
    let mut cfg = ArchitectureConfig::for_family(Family::Resnet, 3);
    cfg.base_channels = 4;
    cfg.depth = 1;
    let mut model = Model::build(&cfg, 1).unwrap();
    let data = toy_dataset(8, 55);
    let aug = FeatureAugment {
        crop_frames: Some(12),
        mixup_alpha: Some(0.4),
        specaug_fraction: Some(0.10),
    };
    let outcome = train(&mut model, &data, &toy_train_config(12, 1), &aug).unwrap();
    assert!(
        outcome.final_loss < outcome.loss_curve[0],
        "loss did not descend under augmentation: {:?}",
        outcome.loss_curve
    );
    let acc = accuracy(&model, &data);
    assert!(acc >= 0.8, "train accuracy {acc}");
}
