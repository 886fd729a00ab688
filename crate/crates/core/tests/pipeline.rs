//! End to end through the public API: generate, load, train, checkpoint, evaluate.

use std::fs;
use std::path::Path;

use dawsol::data::{generate_synthetic, load_manifest, EvalSet, SplitRole, SyntheticSpec, TrainingSet};
use dawsol::trainer::{evaluate, load_checkpoint, resume, save_checkpoint, train, LogRecord, TrainState};
use dawsol::{Exec, RunConfig};

fn spec() -> SyntheticSpec {
    SyntheticSpec { train_images: 16, val_images: 0, test_images: 6, image_size: 32, seed: 9, ..SyntheticSpec::default() }
}

fn config() -> RunConfig {
    RunConfig {
        image_size: 32,
        feature_dim: 8,
        base_width: 4,
        batch_size: 4,
        epochs: 2,
        samples_per_subset: 4,
        lambda2: 0.5,
        ..RunConfig::default()
    }
}

fn load(root: &Path) -> (TrainingSet, EvalSet) {
    let tm = load_manifest(root, "train", SplitRole::Train, 3).unwrap();
    let em = load_manifest(root, "test", SplitRole::Eval, 3).unwrap();
    (TrainingSet::load(&tm, 32).unwrap(), EvalSet::load(&em, 32).unwrap())
}

#[test]
fn generated_annotations_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic(&spec(), dir.path()).unwrap();
    let (train_set, eval_set) = load(dir.path());
    assert_eq!(train_set.images.len(), 16);
    for s in &eval_set.samples {
        let k = s.mask.dominant_class();
        let mask = s.annotation.mask_for(k).unwrap();
        let b = &s.annotation.boxes.iter().find(|b| b.class == k).unwrap().bbox;
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for ((y, x), &on) in mask.indexed_iter() {
            if on {
                (x0, y0, x1, y1) = (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1));
            }
        }
        assert_eq!((b.x0, b.y0, b.x1, b.y1), (x0 as f64, y0 as f64, x1 as f64, y1 as f64), "{}", s.id);
    }
}

#[test]
fn training_never_reads_eval_annotations() {
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic(&spec(), dir.path()).unwrap();
    let (train_set, _) = load(dir.path());
    let clean = train(config(), &train_set, Exec::Sequential, &mut |_| {}).unwrap();

    // wreck the evaluation ground truth; the train split must not care
    fs::write(dir.path().join("test/boxes.csv"), "garbage").unwrap();
    fs::remove_dir_all(dir.path().join("test/masks")).unwrap();
    let tm = load_manifest(dir.path(), "train", SplitRole::Train, 3).unwrap();
    let again = train(config(), &TrainingSet::load(&tm, 32).unwrap(), Exec::Sequential, &mut |_| {}).unwrap();
    assert_eq!(clean.model, again.model);
    assert!(load_manifest(dir.path(), "test", SplitRole::Eval, 3).is_err());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic(&spec(), dir.path()).unwrap();
    let (train_set, eval_set) = load(dir.path());

    let mut full_log: Vec<LogRecord> = Vec::new();
    let full = train(config(), &train_set, Exec::Parallel, &mut |r| full_log.push(*r)).unwrap();

    let mut half_log: Vec<LogRecord> = Vec::new();
    let half = train(RunConfig { epochs: 1, ..config() }, &train_set, Exec::Parallel, &mut |r| half_log.push(*r)).unwrap();
    let ck = dir.path().join("ck.json");
    save_checkpoint(&half, &ck).unwrap();
    let mut restored: TrainState = load_checkpoint(&ck, Exec::Parallel).unwrap();
    restored.config.epochs = 2;
    resume(&mut restored, &train_set, &mut |r| half_log.push(*r)).unwrap();

    assert_eq!(full_log, half_log);
    assert_eq!(full.model, restored.model);
    assert_eq!(full.cache, restored.cache);
    assert_eq!(evaluate(&full, &eval_set).unwrap().0, evaluate(&restored, &eval_set).unwrap().0);
}
