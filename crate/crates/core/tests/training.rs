//! Training runs are reproducible and resumable bit for bit.

use netscope::data::synthetic::gratings;
use netscope::graph::Checkpoint;
use netscope::train::{train, Trainer, TrainConfig};
use netscope::{ArchSpec, Family};

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        lr0: 0.05,
        epochs,
        batch: 4,
        eval_batch: 5,
        seed: 9,
        lr_drop_every: 1,
        lr_drop_factor: 2.0,
        ..TrainConfig::default()
    }
}

fn arch() -> ArchSpec {
    ArchSpec::scaled(Family::Resnet, &[1, 1], 4, (3, 12, 12), 3).with_seed(4)
}

#[test]
fn identical_runs_write_identical_checkpoints() {
    let ds = gratings(10, 12, 3, 1);
    let val = gratings(6, 12, 3, 2);
    let run = || {
        let mut t = Trainer::new(arch().build().unwrap(), &ds, Some(&val), config(1)).unwrap();
        let log = train(&mut t, None).unwrap();
        (t.checkpoint().unwrap().to_bytes().unwrap(), log)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    assert_eq!(la.len(), 1);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let ds = gratings(10, 12, 3, 3);
    let dir = tempfile::tempdir().unwrap();

    let mut full = Trainer::new(arch().build().unwrap(), &ds, None, config(3)).unwrap();
    let full_log = train(&mut full, None).unwrap();
    let want = full.checkpoint().unwrap().to_bytes().unwrap();

    let mut first = Trainer::new(arch().build().unwrap(), &ds, None, config(2)).unwrap();
    let mut log = train(&mut first, Some(dir.path())).unwrap();
    let saved = Checkpoint::load(dir.path().join("epoch-002.nsck")).unwrap();
    let mut rest = Trainer::resume(&saved, &ds, None, config(3)).unwrap();
    log.extend(train(&mut rest, None).unwrap());

    assert_eq!(rest.epoch, 3);
    assert_eq!(rest.checkpoint().unwrap().to_bytes().unwrap(), want);
    assert_eq!(log, full_log);
    let metrics = std::fs::read_to_string(dir.path().join("metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
}

#[test]
fn training_moves_the_weights() {
    let ds = gratings(8, 12, 3, 5);
    let model = arch().build::<f32>().unwrap();
    let before = model.params();
    let mut t = Trainer::new(model, &ds, None, config(1)).unwrap();
    train(&mut t, None).unwrap();
    assert_ne!(t.model.params(), before);
}
