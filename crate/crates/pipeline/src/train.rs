//! Two-phase multi-task training (shared trunk against frozen random heads,
//! then per-task head fine-tuning) and the joint single-task baseline.

use std::collections::BTreeMap;

use milpmt_core::graph::{CON_FEATS, SCHEMA_VERSION, VAR_FEATS};
use milpmt_nn::{
    clip_global_norm, collect_grads, Adam, AdamConfig, Checkpoint, HeadRole, NnError, Tape, Task, TaskHead, Tensor,
    TrunkParams,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::Record;
use crate::derive_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("no training records for task {0}")]
    EmptyDataset(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("need at least 2 records to split off a validation part, got {0}")]
    TooFewRecords(usize),
    #[error("bad training config: {0}")]
    BadConfig(String),
    #[error("checkpoint has no `{0}` head")]
    MissingHead(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// How batches of tasks with different dataset sizes are interleaved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskMix {
    /// Round-robin for as many rounds as the largest task has batches;
    /// smaller tasks restart from their first batch.
    Cycle,
    /// Round-robin while each task has batches left.
    Exhaust,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub tau: f64,
    pub n_random_heads: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub patience: usize,
    pub clip_norm: f64,
    pub mix: TaskMix,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 32,
            epochs: 100,
            tau: milpmt_nn::TAU,
            n_random_heads: 3,
            seed: 0,
            validation_fraction: 0.1,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            patience: 20,
            clip_norm: 5.0,
            mix: TaskMix::Cycle,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |what: &str| Err(TrainError::BadConfig(what.to_string()));
        if !(self.lr > 0.0) || !(self.tau > 0.0) || !(self.clip_norm > 0.0) || !(self.adam_eps > 0.0) {
            return bad("lr, tau, clip_norm and adam_eps must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.n_random_heads == 0 || self.patience == 0 {
            return bad("batch_size, epochs, n_random_heads and patience must be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return bad("validation_fraction must lie in (0, 0.5)");
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return bad("adam betas must lie in [0, 1)");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_betas.0,
            beta2: self.adam_betas.1,
            eps: self.adam_eps,
        }
    }

    fn echo(&self) -> String {
        format!(
            "lr={} batch_size={} epochs={} tau={} n_random_heads={} seed={} validation_fraction={} betas={},{} eps={} patience={} clip_norm={} mix={:?}",
            self.lr,
            self.batch_size,
            self.epochs,
            self.tau,
            self.n_random_heads,
            self.seed,
            self.validation_fraction,
            self.adam_betas.0,
            self.adam_betas.1,
            self.adam_eps,
            self.patience,
            self.clip_norm,
            self.mix
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub task: Task,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("epoch,task,train_loss,val_loss\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.6},{:.6}\n", r.epoch, r.task, r.train_loss, r.val_loss));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint<f32>,
    pub metrics: Vec<MetricRow>,
    pub best_val_loss: f64,
    /// 1-based epoch of the kept parameters.
    pub best_epoch: usize,
}

/// Instance-level split: every record sharing an id lands on the same side.
/// The validation side gets `round(fraction · #ids)` ids, at least one and
/// leaving at least one for training.
pub fn split_validation(records: &[Record], fraction: f64, seed: u64) -> Result<(Vec<Record>, Vec<Record>), TrainError> {
    let (tr, va) = split_indices(records, fraction, seed)?;
    Ok((
        tr.into_iter().map(|i| records[i].clone()).collect(),
        va.into_iter().map(|i| records[i].clone()).collect(),
    ))
}

fn split_indices(records: &[Record], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    let mut ids: Vec<&str> = Vec::new();
    for r in records {
        if !ids.contains(&r.id.as_str()) {
            ids.push(&r.id);
        }
    }
    if ids.len() < 2 {
        return Err(TrainError::TooFewRecords(ids.len()));
    }
    let n_val = ((fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val_ids = &ids[..n_val];
    let (va, tr): (Vec<usize>, Vec<usize>) = (0..records.len()).partition(|&i| val_ids.contains(&records[i].id.as_str()));
    Ok((tr, va))
}

/// Batch order of one epoch as `(task slot, batch index)`.
pub fn epoch_schedule(batch_counts: &[usize], mix: TaskMix) -> Vec<(usize, usize)> {
    let rounds = batch_counts.iter().copied().max().unwrap_or(0);
    let mut out = Vec::new();
    for r in 0..rounds {
        for (t, &c) in batch_counts.iter().enumerate() {
            match mix {
                TaskMix::Cycle if c > 0 => out.push((t, r % c)),
                TaskMix::Exhaust if r < c => out.push((t, r)),
                _ => {}
            }
        }
    }
    out
}

fn task_slot(task: Task) -> u64 {
    Task::ALL.iter().position(|&t| t == task).unwrap_or(0) as u64
}

fn check_schema(trunk: &TrunkParams<f32>, records: &[Record]) -> Result<(), TrainError> {
    if trunk.var_embed.w.rows() != VAR_FEATS || trunk.con_embed.w.rows() != CON_FEATS {
        return Err(TrainError::SchemaMismatch(format!(
            "trunk takes {}/{} features, graphs carry {VAR_FEATS}/{CON_FEATS}",
            trunk.var_embed.w.rows(),
            trunk.con_embed.w.rows()
        )));
    }
    for r in records {
        let g = &r.graph;
        if g.var_feats.len() != g.n * VAR_FEATS || g.con_feats.len() != g.m * CON_FEATS {
            return Err(TrainError::SchemaMismatch(format!("graph of `{}` has the wrong feature width", r.id)));
        }
    }
    Ok(())
}

/// What gets updated.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    /// Trunk only; heads fixed.
    Trunk,
    /// One head only, trunk embeddings cached.
    Head,
    /// Trunk and one head together.
    Joint,
}

struct TaskSlot {
    task: Task,
    heads: Vec<TaskHead<f32>>,
    train: Vec<Record>,
    val: Vec<Record>,
    /// Cached `(V², C²)` for `train` then `val` in head mode.
    embeds: Vec<(Tensor<f32>, Tensor<f32>)>,
}

struct Pass {
    loss: f64,
    trunk: Vec<Vec<f32>>,
    head: Vec<Vec<f32>>,
}

fn record_pass(
    trunk: &TrunkParams<f32>,
    slot: &TaskSlot,
    rec: &Record,
    cached: Option<&(Tensor<f32>, Tensor<f32>)>,
    mode: Mode,
    tau: f32,
    grads: bool,
) -> Result<Pass, TrainError> {
    let mut tape = Tape::<f32>::new();
    let trunk_train = grads && mode != Mode::Head;
    let head_train = grads && mode != Mode::Trunk;
    let (v2, c2, trunk_vars) = match cached {
        Some((v, c)) => (tape.constant(v.clone()), tape.constant(c.clone()), None),
        None => {
            let tv = trunk.bind(&mut tape, trunk_train);
            let (v, c) = trunk.forward(&mut tape, &tv, &rec.graph)?;
            (v, c, Some(tv))
        }
    };
    let mut losses = Vec::with_capacity(slot.heads.len());
    let mut head_vars = Vec::new();
    for head in &slot.heads {
        let hv = head.bind(&mut tape, head_train);
        let out = head.forward(&mut tape, &hv, v2, c2)?;
        losses.push(tape.infonce(out, &rec.pos, &rec.neg, tau)?);
        head_vars.push(hv);
    }
    let loss = tape.mean(&losses);
    let value = tape.value(loss).data[0] as f64;
    if !grads {
        return Ok(Pass {
            loss: value,
            trunk: Vec::new(),
            head: Vec::new(),
        });
    }
    tape.backward(loss)?;
    let trunk_g = match (&trunk_vars, trunk_train) {
        (Some(tv), true) => collect_grads(&tape, &tv.all),
        _ => Vec::new(),
    };
    let head_g = if head_train {
        collect_grads(&tape, &head_vars[0].all)
    } else {
        Vec::new()
    };
    Ok(Pass {
        loss: value,
        trunk: trunk_g,
        head: head_g,
    })
}

fn accumulate(acc: &mut Vec<Vec<f32>>, g: Vec<Vec<f32>>, scale: f32) {
    if acc.is_empty() {
        *acc = g.into_iter().map(|v| v.into_iter().map(|x| x * scale).collect()).collect();
    } else {
        for (a, v) in acc.iter_mut().zip(g) {
            for (x, y) in a.iter_mut().zip(v) {
                *x += y * scale;
            }
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

struct FitResult {
    trunk: TrunkParams<f32>,
    heads: Vec<TaskHead<f32>>,
    metrics: Vec<MetricRow>,
    best_val: f64,
    best_epoch: usize,
}

/// Shared epoch loop. In `Head` and `Joint` mode there is exactly one slot
/// with one head.
fn fit(mut trunk: TrunkParams<f32>, mut slots: Vec<TaskSlot>, mode: Mode, cfg: &TrainConfig) -> Result<FitResult, TrainError> {
    let tau = cfg.tau as f32;
    if mode == Mode::Head {
        for s in &mut slots {
            s.embeds = s
                .train
                .iter()
                .chain(&s.val)
                .map(|r| trunk.embed(&r.graph))
                .collect::<Result<_, _>>()?;
        }
    }
    let mut sizes: Vec<usize> = Vec::new();
    if mode != Mode::Head {
        sizes.extend(trunk.tensors().iter().map(|(_, t)| t.len()));
    }
    if mode != Mode::Trunk {
        sizes.extend(slots[0].heads[0].tensors("h").iter().map(|(_, t)| t.len()));
    }
    let mut adam = Adam::<f32>::new(cfg.adam(), &sizes);

    let mut metrics = Vec::new();
    let mut best: Option<(f64, usize, TrunkParams<f32>, Vec<TaskHead<f32>>)> = None;
    for epoch in 1..=cfg.epochs {
        let batches: Vec<Vec<Vec<usize>>> = slots
            .iter()
            .map(|s| {
                let mut order: Vec<usize> = (0..s.train.len()).collect();
                let seed = derive_seed(cfg.seed, (epoch as u64) << 8 | task_slot(s.task));
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect()
            })
            .collect();
        let counts: Vec<usize> = batches.iter().map(Vec::len).collect();
        let mut train_losses: Vec<Vec<f64>> = vec![Vec::new(); slots.len()];
        for (t, b) in epoch_schedule(&counts, cfg.mix) {
            let batch = &batches[t][b];
            let scale = 1.0 / batch.len() as f32;
            let (mut gt, mut gh) = (Vec::new(), Vec::new());
            for &i in batch {
                let cached = (mode == Mode::Head).then(|| &slots[t].embeds[i]);
                let pass = record_pass(&trunk, &slots[t], &slots[t].train[i], cached, mode, tau, true)?;
                train_losses[t].push(pass.loss);
                accumulate(&mut gt, pass.trunk, scale);
                accumulate(&mut gh, pass.head, scale);
            }
            let mut grads: Vec<Vec<f32>> = gt.into_iter().chain(gh).collect();
            clip_global_norm(&mut grads, cfg.clip_norm);
            let mut params: Vec<&mut Tensor<f32>> = Vec::new();
            let (trunk_ref, slot_ref) = (&mut trunk, &mut slots[t]);
            if mode != Mode::Head {
                params.extend(trunk_ref.tensors_mut());
            }
            if mode != Mode::Trunk {
                params.extend(slot_ref.heads[0].tensors_mut());
            }
            adam.step(params, &grads);
        }

        let mut val_all = Vec::new();
        for (t, s) in slots.iter().enumerate() {
            let vals: Vec<f64> = s
                .val
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let cached = (mode == Mode::Head).then(|| &s.embeds[s.train.len() + i]);
                    record_pass(&trunk, s, r, cached, mode, tau, false).map(|p| p.loss)
                })
                .collect::<Result<_, _>>()?;
            let v = mean(&vals);
            val_all.push(v);
            metrics.push(MetricRow {
                epoch,
                task: s.task,
                train_loss: mean(&train_losses[t]),
                val_loss: v,
            });
        }
        let val = mean(&val_all);
        let improved = best.as_ref().is_none_or(|b| val < b.0);
        if improved {
            let heads = if mode == Mode::Trunk { Vec::new() } else { slots[0].heads.clone() };
            best = Some((val, epoch, trunk.clone(), heads));
        } else if epoch - best.as_ref().map_or(0, |b| b.1) >= cfg.patience {
            break;
        }
    }
    let (best_val, best_epoch, trunk, heads) = best.expect("at least one epoch ran");
    Ok(FitResult {
        trunk,
        heads,
        metrics,
        best_val,
        best_epoch,
    })
}

fn base_meta(mode: &str, tasks: &[Task], cfg: &TrainConfig, fit: &FitResult) -> BTreeMap<String, String> {
    let mut meta = BTreeMap::new();
    meta.insert("mode".into(), mode.into());
    meta.insert(
        "tasks".into(),
        tasks.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(","),
    );
    meta.insert("schema_version".into(), SCHEMA_VERSION.to_string());
    meta.insert("train_config".into(), cfg.echo());
    meta.insert("best_val_loss".into(), format!("{:.6}", fit.best_val));
    meta.insert("best_epoch".into(), fit.best_epoch.to_string());
    meta
}

fn make_slot(task: Task, heads: Vec<TaskHead<f32>>, records: &[Record], cfg: &TrainConfig) -> Result<TaskSlot, TrainError> {
    if records.is_empty() {
        return Err(TrainError::EmptyDataset(task.as_str().into()));
    }
    let (train, val) = split_validation(records, cfg.validation_fraction, derive_seed(cfg.seed, 7 + task_slot(task)))?;
    Ok(TaskSlot {
        task,
        heads,
        train,
        val,
        embeds: Vec::new(),
    })
}

/// The random heads phase 1 pairs with `task`; they are never updated.
pub fn frozen_heads(task: Task, dim: usize, cfg: &TrainConfig) -> Vec<TaskHead<f32>> {
    (0..cfg.n_random_heads)
        .map(|k| TaskHead::init(task, dim, derive_seed(cfg.seed, 1000 + 16 * task_slot(task) + k as u64)))
        .collect()
}

/// Phase 1: trains a fresh trunk against `n_random_heads` frozen random heads
/// per task, batches alternating across tasks. The returned checkpoint holds
/// the best-validation trunk and the frozen heads.
pub fn phase1_train(datasets: &[(Task, Vec<Record>)], cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if datasets.is_empty() {
        return Err(TrainError::EmptyDataset("(none)".into()));
    }
    let trunk = TrunkParams::<f32>::init(derive_seed(cfg.seed, 1));
    let mut slots = Vec::new();
    for (task, records) in datasets {
        check_schema(&trunk, records)?;
        slots.push(make_slot(*task, frozen_heads(*task, trunk.dim, cfg), records, cfg)?);
    }
    let frozen: Vec<(Task, Vec<TaskHead<f32>>)> = slots.iter().map(|s| (s.task, s.heads.clone())).collect();
    let tasks: Vec<Task> = datasets.iter().map(|d| d.0).collect();
    let fit = fit(trunk, slots, Mode::Trunk, cfg)?;
    let mut ckpt = Checkpoint::new(fit.trunk.clone());
    for (task, heads) in frozen {
        for (index, h) in heads.into_iter().enumerate() {
            ckpt.set_head(HeadRole::FrozenRandom { task, index }, h);
        }
    }
    ckpt.meta = base_meta("phase1", &tasks, cfg, &fit);
    Ok(TrainOutcome {
        checkpoint: ckpt,
        metrics: fit.metrics,
        best_val_loss: fit.best_val,
        best_epoch: fit.best_epoch,
    })
}

/// Phase 2: a fresh head for `task` on the frozen trunk of `trunk_ckpt`.
/// Everything else in the checkpoint is carried over unchanged.
pub fn phase2_finetune(
    trunk_ckpt: &Checkpoint<f32>,
    records: &[Record],
    task: Task,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    check_schema(&trunk_ckpt.trunk, records)?;
    let head = TaskHead::init(task, trunk_ckpt.trunk.dim, derive_seed(cfg.seed, 2000 + task_slot(task)));
    let slot = make_slot(task, vec![head], records, cfg)?;
    let fit = fit(trunk_ckpt.trunk.clone(), vec![slot], Mode::Head, cfg)?;
    let mut ckpt = trunk_ckpt.clone();
    ckpt.set_head(HeadRole::Task(task), fit.heads[0].clone());
    for (k, v) in base_meta("phase2", &[task], cfg, &fit) {
        ckpt.meta.insert(format!("{}.{k}", task.as_str()), v);
    }
    Ok(TrainOutcome {
        checkpoint: ckpt,
        metrics: fit.metrics,
        best_val_loss: fit.best_val,
        best_epoch: fit.best_epoch,
    })
}

/// Baseline: trunk and head trained jointly on one task.
pub fn single_task_train(records: &[Record], task: Task, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let trunk = TrunkParams::<f32>::init(derive_seed(cfg.seed, 1));
    check_schema(&trunk, records)?;
    let head = TaskHead::init(task, trunk.dim, derive_seed(cfg.seed, 2000 + task_slot(task)));
    let slot = make_slot(task, vec![head], records, cfg)?;
    let fit = fit(trunk, vec![slot], Mode::Joint, cfg)?;
    let mut ckpt = Checkpoint::new(fit.trunk.clone());
    ckpt.set_head(HeadRole::Task(task), fit.heads[0].clone());
    ckpt.meta = base_meta("single", &[task], cfg, &fit);
    Ok(TrainOutcome {
        checkpoint: ckpt,
        metrics: fit.metrics,
        best_val_loss: fit.best_val,
        best_epoch: fit.best_epoch,
    })
}

/// The trained head for `task`.
pub fn task_head(ckpt: &Checkpoint<f32>, task: Task) -> Result<&TaskHead<f32>, TrainError> {
    ckpt.head(HeadRole::Task(task))
        .ok_or_else(|| TrainError::MissingHead(task.as_str().into()))
}
