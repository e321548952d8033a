mod common;

use common::overfit_items;
use hazenet::hazegen::SynthOptions;
use hazenet::training::{train_loop, TrainConfig, TrainOutputs, LOG_HEADER};
use hazenet::{Error, ModelConfig};

fn short(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch: 2,
        patch: 16,
        log_every: 1,
        ..TrainConfig::default()
    }
}

fn small_set() -> Vec<hazenet::hazegen::DatasetItem> {
    overfit_items(&SynthOptions {
        scenes: 2,
        size: 16,
        ..SynthOptions::default()
    })
}

#[test]
fn identical_seeds_give_identical_logs() {
    let items = small_set();
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed| {
        let cfg = TrainConfig { seed, ..short(5) };
        let outputs = TrainOutputs {
            checkpoint: Some(dir.path().join(format!("{name}.shan"))),
            log: Some(dir.path().join(format!("{name}.tsv"))),
        };
        train_loop(ModelConfig::tiny(), &items, &cfg, &outputs).unwrap();
        (
            std::fs::read(dir.path().join(format!("{name}.tsv"))).unwrap(),
            std::fs::read(dir.path().join(format!("{name}.shan"))).unwrap(),
        )
    };
    let (a, b, c) = (run("a", 3), run("b", 3), run("c", 4));
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
    let text = String::from_utf8(a.0).unwrap();
    assert_eq!(text.lines().next(), Some(LOG_HEADER));
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn loss_drops_within_two_hundred_steps() {
    let items = overfit_items(&SynthOptions::default());
    let cfg = TrainConfig {
        steps: 201,
        log_every: 200,
        ..TrainConfig::default()
    };
    let r = train_loop(ModelConfig::desk(), &items, &cfg, &TrainOutputs::default()).unwrap();
    let first = r.log.first().unwrap();
    let at200 = r.log.iter().find(|row| row.step == 200).unwrap();
    assert!(at200.loss < first.loss, "{} !< {}", at200.loss, first.loss);
}

#[test]
fn density_switch_changes_final_loss() {
    let items = small_set();
    let cfg = short(4);
    let full = train_loop(ModelConfig::tiny(), &items, &cfg, &TrainOutputs::default()).unwrap();
    let bypass = ModelConfig {
        use_density: false,
        ..ModelConfig::tiny()
    };
    let without = train_loop(bypass, &items, &cfg, &TrainOutputs::default()).unwrap();
    assert_ne!(full.final_loss, without.final_loss);
}

#[test]
fn divergence_names_the_first_bad_op() {
    let items = small_set();
    let cfg = TrainConfig {
        lr_base: 1e30,
        lr_max: 1e30,
        ..short(6)
    };
    match train_loop(ModelConfig::tiny(), &items, &cfg, &TrainOutputs::default()) {
        Err(Error::NonFinite { op, .. }) => assert!(!op.is_empty()),
        other => panic!("expected a non-finite abort, got {:?}", other.map(|r| r.final_loss)),
    }
}

#[test]
fn rejects_bad_inputs() {
    let items = small_set();
    assert!(matches!(
        train_loop(ModelConfig::tiny(), &[], &short(1), &TrainOutputs::default()),
        Err(Error::MissingData(_))
    ));
    let big = TrainConfig { patch: 32, ..short(1) };
    assert!(train_loop(ModelConfig::tiny(), &items, &big, &TrainOutputs::default()).is_err());
    let odd = TrainConfig { patch: 10, ..short(1) };
    assert!(train_loop(ModelConfig::tiny(), &items, &odd, &TrainOutputs::default()).is_err());
}
