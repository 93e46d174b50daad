use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tkg_decay_core::attention::{sample_corruptions, AttentionConfig, FactBatch};
use tkg_decay_core::dataset::Dataset;
use tkg_decay_core::encoder::{
    bce_loss, derive_labels, ActivityClass, EncoderConfig, FactsToNodesGraph, LabelPolicy,
};
use tkg_decay_core::model::{known_facts, Model, ModelConfig, StepTargets};
use tkg_decay_core::nd::Graph;
use tkg_decay_core::synth::toy_dataset;
use tkg_decay_core::training::{
    pipeline_run, quad_classes, train, LabelSource, PipelineConfig, TrainConfig,
};

fn small_model() -> ModelConfig {
    let mut attention = AttentionConfig::with_dims(8, 8);
    attention.time_dims = 4;
    attention.fact_dim = 8;
    ModelConfig {
        attention,
        encoder: EncoderConfig {
            d3: 8,
            hidden: vec![8],
            ..EncoderConfig::default()
        },
    }
}

fn toy_labels(ds: &Dataset) -> Vec<ActivityClass> {
    let classes = derive_labels(&ds.timelines, LabelPolicy::MedianSplit).unwrap();
    quad_classes(ds, &classes).unwrap()
}

struct Fixture {
    ds: Dataset,
    model: Model,
    positives: Vec<usize>,
    corruptions: Vec<tkg_decay_core::dataset::Quadruple>,
    labelled: Vec<usize>,
    labels: Vec<f64>,
}

fn fixture(seed: u64) -> Fixture {
    let ds = toy_dataset(seed);
    let model = Model::init(small_model(), 20, 3, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = sample_corruptions(&ds.quadruples, &known_facts(&ds.quadruples), 20, 1, &mut rng);
    let labels = toy_labels(&ds).iter().map(|c| c.label() as f64).collect();
    Fixture {
        positives: pairs.iter().map(|p| p.0).collect(),
        corruptions: pairs.iter().map(|p| p.1).collect(),
        labelled: (0..ds.len()).collect(),
        labels,
        model,
        ds,
    }
}

/// Returns (L_gat, L_bec, L, gradients of L per parameter).
fn evaluate(fx: &Fixture, alpha: f64) -> (f64, f64, f64, BTreeMap<String, Vec<f64>>) {
    let batch = FactBatch::new(&fx.ds.quadruples, fx.ds.t_current).unwrap();
    let f2n = FactsToNodesGraph::new(&fx.ds.quadruples, fx.model.config.encoder.grouping);
    let mut g = Graph::new();
    let fwd = fx.model.forward(&mut g, &batch, &f2n).unwrap();
    let targets = StepTargets {
        positives: &fx.positives,
        corruptions: &fx.corruptions,
        labelled: &fx.labelled,
        labels: &fx.labels,
    };
    let parts = fx
        .model
        .losses(&mut g, &fwd, &fx.ds.quadruples, fx.ds.t_current, &targets, alpha)
        .unwrap();
    let grads = g.backward(parts.total).unwrap();
    let mut store = fx.model.store.clone();
    store.zero_grad();
    g.accumulate(&grads, &mut store);
    let by_name = store
        .iter()
        .map(|(_, name, t)| (name.to_string(), t.grad().unwrap().to_vec()))
        .collect();
    (
        g.value(parts.gat).item(),
        g.value(parts.bec).item(),
        g.value(parts.total).item(),
        by_name,
    )
}

#[test]
fn alpha_one_is_margin_loss_only() {
    let fx = fixture(0);
    let (gat, _, total, _) = evaluate(&fx, 1.0);
    assert_eq!(total, gat);
}

#[test]
fn alpha_zero_gradients_are_classifier_gradients() {
    let fx = fixture(1);
    let (_, bec, total, grads) = evaluate(&fx, 0.0);
    assert_eq!(total, bec);
    // gradient of the classifier loss alone, built without the margin term
    let batch = FactBatch::new(&fx.ds.quadruples, fx.ds.t_current).unwrap();
    let f2n = FactsToNodesGraph::new(&fx.ds.quadruples, fx.model.config.encoder.grouping);
    let mut g = Graph::new();
    let fwd = fx.model.forward(&mut g, &batch, &f2n).unwrap();
    let l = tkg_decay_core::encoder::bce_loss_graph(&mut g, fwd.encoder.probs, &fx.labels).unwrap();
    let gr = g.backward(l).unwrap();
    let mut store = fx.model.store.clone();
    store.zero_grad();
    g.accumulate(&gr, &mut store);
    for (_, name, t) in store.iter() {
        let want = t.grad().unwrap();
        let got = &grads[name];
        assert!(got.iter().zip(want).all(|(a, b)| (a - b).abs() <= 1e-12), "{name}");
    }
    assert!((g.value(l).item() - bce_loss(g.value(fwd.encoder.probs).data(), &fx.labels).unwrap()).abs() < 1e-12);
}

#[test]
fn joint_loss_is_linear_in_alpha() {
    let fx = fixture(2);
    let (gat, bec, _, _) = evaluate(&fx, 0.5);
    for alpha in [0.0, 0.1, 0.35, 0.8, 1.0] {
        let (_, _, total, _) = evaluate(&fx, alpha);
        assert!((total - (alpha * gat + (1.0 - alpha) * bec)).abs() < 1e-9);
    }
}

#[test]
fn training_is_deterministic_and_touches_every_parameter() {
    let ds = toy_dataset(3);
    let y = toy_labels(&ds);
    let cfg = TrainConfig {
        epochs: 15,
        patience: 0,
        ..TrainConfig::default()
    };
    let a = train(&ds, &y, &small_model(), &cfg, &mut |_| {}).unwrap();
    let b = train(&ds, &y, &small_model(), &cfg, &mut |_| {}).unwrap();
    assert_eq!(a.log, b.log);
    for ((_, _, x), (_, _, y)) in a.model.store.iter().zip(b.model.store.iter()) {
        assert_eq!(x.data(), y.data());
    }
    assert!(a.dead_params.is_empty(), "{:?}", a.dead_params);
    let c = train(&ds, &y, &small_model(), &TrainConfig { seed: 9, ..cfg }, &mut |_| {}).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn toy_loss_decreases_over_fifty_epochs() {
    let ds = toy_dataset(0);
    let y = toy_labels(&ds);
    let cfg = TrainConfig {
        epochs: 50,
        patience: 0,
        ..TrainConfig::default()
    };
    let mut seen = Vec::new();
    let out = train(&ds, &y, &small_model(), &cfg, &mut |s| seen.push(s.total)).unwrap();
    assert_eq!(seen.len(), 50);
    let head: f64 = seen[..5].iter().sum::<f64>() / 5.0;
    let tail: f64 = seen[45..].iter().sum::<f64>() / 5.0;
    assert!(tail < head, "{head} -> {tail}");
    assert!(out.log.iter().all(|s| s.total.is_finite()));
}

#[test]
fn minibatches_and_sgd_run() {
    let ds = toy_dataset(4);
    let y = toy_labels(&ds);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 64,
        optimizer: tkg_decay_core::training::OptimizerKind::Sgd,
        ..TrainConfig::default()
    };
    let out = train(&ds, &y, &small_model(), &cfg, &mut |_| {}).unwrap();
    assert_eq!(out.log.len(), 3);
}

#[test]
fn invalid_training_config_is_rejected() {
    let ds = toy_dataset(0);
    let y = toy_labels(&ds);
    for cfg in [
        TrainConfig { alpha: 1.5, ..TrainConfig::default() },
        TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
        TrainConfig { val_fraction: 1.0, ..TrainConfig::default() },
    ] {
        assert!(train(&ds, &y, &small_model(), &cfg, &mut |_| {}).is_err());
    }
    assert!(train(&ds, &y[..10], &small_model(), &TrainConfig::default(), &mut |_| {}).is_err());
}

#[test]
fn pipeline_theta_zero_keeps_everything() {
    let ds = toy_dataset(5);
    let cfg = PipelineConfig {
        theta: 0.0,
        label_source: LabelSource::Derived,
        ..PipelineConfig::default()
    };
    let out = pipeline_run(&ds, &cfg, None, &mut |_| {}).unwrap();
    assert!(out.keep.iter().all(|k| *k));
    assert_eq!(out.report.kept, ds.len());
    assert_eq!(out.report.outdated, 0);
    let bad = PipelineConfig { theta: 1.5, ..cfg };
    assert!(pipeline_run(&ds, &bad, None, &mut |_| {}).is_err());
}

#[test]
fn pipeline_with_predicted_labels_reports_accuracy() {
    let ds = toy_dataset(6);
    let cfg = PipelineConfig {
        model: small_model(),
        train: TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        },
        ..PipelineConfig::default()
    };
    let mut epochs = 0;
    let out = pipeline_run(&ds, &cfg, None, &mut |_| epochs += 1).unwrap();
    assert!(epochs > 0);
    assert!(out.report.classifier_accuracy.is_some());
    assert!(out.training.is_some());
    let counts = out.report.active.quadruples + out.report.inactive.quadruples;
    assert_eq!(counts, ds.len());
    // reuse of a trained model skips training and reproduces the classes
    let again = pipeline_run(&ds, &cfg, Some(&out.training.as_ref().unwrap().model), &mut |_| {
        panic!("no training expected")
    })
    .unwrap();
    assert_eq!(again.key_classes, out.key_classes);
    assert_eq!(again.keep, out.keep);
}
