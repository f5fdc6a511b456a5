mod common;

use common::*;
use milpmt_nn::{head_hash, HeadRole, Task};
use milpmt_pipeline::train::*;

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        batch_size: 4,
        epochs,
        patience: epochs,
        seed: 3,
        ..Default::default()
    }
}

#[test]
fn round_robin_schedule() {
    let order: Vec<usize> = epoch_schedule(&[4, 4], TaskMix::Cycle).iter().map(|p| p.0).collect();
    assert_eq!(order, vec![0, 1, 0, 1, 0, 1, 0, 1]);
    assert_eq!(
        epoch_schedule(&[3, 1], TaskMix::Cycle),
        vec![(0, 0), (1, 0), (0, 1), (1, 0), (0, 2), (1, 0)]
    );
    assert_eq!(epoch_schedule(&[3, 1], TaskMix::Exhaust), vec![(0, 0), (1, 0), (0, 1), (0, 2)]);
}

#[test]
fn validation_split_is_by_instance() {
    let recs = toy_records(10, 1);
    let (tr, va) = split_validation(&recs, 0.1, 4).unwrap();
    assert_eq!((tr.len(), va.len()), (9, 1));
    assert_eq!(split_validation(&recs, 0.1, 4).unwrap(), (tr.clone(), va.clone()));
    assert!(tr.iter().all(|r| r.id != va[0].id));

    let mut dup = recs.clone();
    dup.extend(recs.iter().cloned());
    let (tr, va) = split_validation(&dup, 0.1, 4).unwrap();
    assert_eq!((tr.len(), va.len()), (18, 2));
    assert!(tr.iter().all(|r| va.iter().all(|v| v.id != r.id)));

    assert_eq!(split_validation(&recs[..1], 0.1, 0), Err(TrainError::TooFewRecords(1)));
}

#[test]
fn config_validation() {
    let bad = TrainConfig { lr: 0.0, ..quick(1) };
    assert!(matches!(bad.validate(), Err(TrainError::BadConfig(_))));
    let bad = TrainConfig {
        validation_fraction: 0.7,
        ..quick(1)
    };
    assert!(matches!(bad.validate(), Err(TrainError::BadConfig(_))));
    assert!(matches!(
        single_task_train(&[], Task::Pas, &quick(1)),
        Err(TrainError::EmptyDataset(_))
    ));
    let mut recs = toy_records(4, 2);
    recs[1].graph.var_feats.pop();
    assert!(matches!(
        single_task_train(&recs, Task::Pas, &quick(1)),
        Err(TrainError::SchemaMismatch(_))
    ));
}

#[test]
fn phase1_keeps_frozen_heads_byte_identical() {
    let cfg = quick(3);
    let data = vec![(Task::Backdoor, toy_records(12, 5)), (Task::Pas, toy_records(12, 6))];
    let out = phase1_train(&data, &cfg).unwrap();
    let dim = out.checkpoint.trunk.dim;
    for task in [Task::Backdoor, Task::Pas] {
        for (index, h) in frozen_heads(task, dim, &cfg).iter().enumerate() {
            let kept = out.checkpoint.head(HeadRole::FrozenRandom { task, index }).unwrap();
            assert_eq!(head_hash(kept), head_hash(h));
        }
    }
    assert!(out.checkpoint.head(HeadRole::Task(Task::Pas)).is_none());
    let fresh = milpmt_nn::TrunkParams::<f32>::init(milpmt_pipeline::derive_seed(cfg.seed, 1));
    assert_ne!(out.checkpoint.trunk_hash(), milpmt_nn::trunk_hash(&fresh));
}

#[test]
fn phase2_keeps_trunk_and_other_heads() {
    let cfg = quick(2);
    let p1 = phase1_train(
        &[(Task::Backdoor, toy_records(10, 5)), (Task::Pas, toy_records(10, 6))],
        &cfg,
    )
    .unwrap();
    let before = p1.checkpoint.trunk_hash();
    // a task the trunk never saw
    let out = phase2_finetune(&p1.checkpoint, &toy_config_records(10, 7), Task::Config, &quick(5)).unwrap();
    assert_eq!(out.checkpoint.trunk_hash(), before);
    assert_eq!(out.checkpoint.trunk, p1.checkpoint.trunk);
    for (role, h) in &p1.checkpoint.heads {
        assert_eq!(head_hash(out.checkpoint.head(*role).unwrap()), head_hash(h));
    }
    assert!(task_head(&out.checkpoint, Task::Config).is_ok());
    assert!(matches!(
        task_head(&out.checkpoint, Task::Pas),
        Err(TrainError::MissingHead(_))
    ));
    assert!(out.checkpoint.meta.contains_key("config.best_epoch"));
}

#[test]
fn toy_losses_go_down() {
    let recs = toy_records(20, 11);
    let out = single_task_train(&recs, Task::Backdoor, &quick(30)).unwrap();
    assert_eq!(out.metrics.len(), 30);
    let first = &out.metrics[0];
    let last = &out.metrics[29];
    assert!(last.train_loss < first.train_loss, "{} vs {}", last.train_loss, first.train_loss);

    let p1 = phase1_train(&[(Task::Backdoor, recs.clone())], &quick(2)).unwrap();
    let p2 = phase2_finetune(&p1.checkpoint, &recs, Task::Backdoor, &quick(30)).unwrap();
    assert!(p2.best_val_loss < p2.metrics[0].val_loss);
}

#[test]
fn training_is_deterministic() {
    let recs = toy_records(8, 2);
    let a = single_task_train(&recs, Task::Pas, &quick(3)).unwrap();
    let b = single_task_train(&recs, Task::Pas, &quick(3)).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
}
