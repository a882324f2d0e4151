mod common;

use synthgen_core::gateway::{MockProfile, PlantedOptions};
use synthgen_core::trainer::{evaluate, predict, train, LinearModel, TrainConfig, TrainError};
use synthgen_core::{Dataset, TaskSpec};

fn data(task: &TaskSpec, per_class: usize, seed: u64) -> Dataset {
    MockProfile::planted(task, &PlantedOptions::default()).sample_dataset(task, per_class, seed)
}

#[test]
fn loss_drops_and_planted_labels_are_learned() {
    let task = common::single_task("t", 3, &["w"]);
    let model = train(&data(&task, 60, 1), &task, &TrainConfig::default()).unwrap();
    let m = &model.manifest;
    assert!(m.epoch_losses.last().unwrap() < &m.initial_loss, "{:?} vs {}", m.epoch_losses, m.initial_loss);
    let report = evaluate(&model, &data(&task, 60, 2), &task).unwrap();
    assert!(report.downstream["accuracy"] > 0.9, "{:?}", report.downstream);
}

#[test]
fn training_is_deterministic_per_seed() {
    let task = common::single_task("t", 2, &["w"]);
    let d = data(&task, 30, 1);
    let a = train(&d, &task, &TrainConfig::default()).unwrap();
    let b = train(&d, &task, &TrainConfig::default()).unwrap();
    assert_eq!(a.manifest.epoch_losses, b.manifest.epoch_losses);
    let probe = &d.samples[0];
    assert_eq!(predict(&a, &probe.text1, None).unwrap(), predict(&b, &probe.text1, None).unwrap());
}

#[test]
fn save_load_round_trip_and_rejects_garbage() {
    let task = common::regression_task();
    let d = data(&task, 10, 1);
    let model = train(&d, &task, &TrainConfig { epochs: 1, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    model.save(&path).unwrap();
    let back = LinearModel::load(&path).unwrap();
    for s in &d.samples[..5] {
        assert_eq!(predict(&model, &s.text1, s.text2.as_deref()).unwrap(), predict(&back, &s.text1, s.text2.as_deref()).unwrap());
    }
    assert_eq!(back.task.task_id, "similarity");

    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, b"not a model").unwrap();
    assert!(matches!(LinearModel::load(&bad), Err(TrainError::Format { .. })));
    assert!(matches!(LinearModel::load(dir.path().join("missing.bin")), Err(TrainError::Io { .. })));
}

#[test]
fn regression_reports_spearman_and_mse() {
    let task = common::regression_task();
    let model = train(&data(&task, 40, 1), &task, &TrainConfig::default()).unwrap();
    let r = evaluate(&model, &data(&task, 20, 2), &task).unwrap();
    for m in ["accuracy", "spearman", "mse"] {
        assert!(r.downstream.contains_key(m), "{m}: {:?}", r.downstream);
    }
    assert!(!r.downstream.contains_key("mcc"));
}

#[test]
fn model_refuses_a_different_task() {
    let task = common::single_task("t", 2, &["w"]);
    let other = common::single_task("u", 2, &["w"]);
    let model = train(&data(&task, 10, 1), &task, &TrainConfig { epochs: 1, ..Default::default() }).unwrap();
    assert!(matches!(evaluate(&model, &data(&other, 5, 1), &other), Err(TrainError::TaskMismatch(_))));
}

#[test]
fn empty_dataset_is_an_error() {
    let task = common::single_task("t", 2, &["w"]);
    assert!(matches!(train(&Dataset::new("t"), &task, &TrainConfig::default()), Err(TrainError::EmptyDataset)));
}
