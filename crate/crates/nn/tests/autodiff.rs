mod common;

use milpmt_core::solver::config::CATEGORICAL_GROUPS;
use milpmt_nn::{collect_grads, NnError, Tape, Task, TaskHead, Tensor, TrunkParams, TAU};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-4;
const FD_RTOL: f64 = 1e-3;
/// Coordinates probed per parameter tensor.
const FD_PROBES: usize = 24;

#[test]
fn sigmoid_gradient_at_zero() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(&Tensor::zeros(2, 3));
    let y = tape.sigmoid(x);
    let ones = tape.constant(Tensor::filled(3, 1, 1.0));
    let row_sums = tape.matmul(y, ones);
    let col = tape.mean_rows(row_sums);
    // mean over 2 rows, so scale back to a plain sum
    let total = tape.scale(col, 2.0);
    tape.backward(total).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[0.25; 6]);
}

#[test]
fn second_backward_fails() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(&Tensor::filled(1, 1, 2.0));
    let y = tape.scale(x, 3.0);
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[3.0]);
    assert_eq!(tape.backward(y), Err(NnError::GraphFreed));
}

#[test]
fn singleton_segment_gets_full_weight() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::matrix(3, 2, vec![5.0, -1.0, 0.3, 0.3, 7.0, 2.0]));
    let y = tape.segment_softmax(x, &[0, 1, 1], 2);
    let v = &tape.value(y).data;
    assert_eq!(&v[0..2], &[1.0, 1.0]);
    assert!((v[2] + v[4] - 1.0).abs() < 1e-15);
}

/// Loss of trunk + head + InfoNCE on one graph.
fn composite_loss(
    trunk: &TrunkParams<f64>,
    head: &TaskHead<f64>,
    g: &milpmt_core::graph::BipartiteGraph<f64>,
    pos: &[Vec<f64>],
    neg: &[Vec<f64>],
) -> (f64, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let tv = trunk.bind(&mut tape, true);
    let hv = head.bind(&mut tape, true);
    let (v2, c2) = trunk.forward(&mut tape, &tv, g).unwrap();
    let p = head.forward(&mut tape, &hv, v2, c2).unwrap();
    let loss = tape.infonce(p, pos, neg, TAU).unwrap();
    let value = tape.value(loss).data[0];
    tape.backward(loss).unwrap();
    (value, collect_grads(&tape, &tv.all), collect_grads(&tape, &hv.all))
}

fn probe_indices(len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= FD_PROBES {
        (0..len).collect()
    } else {
        (0..FD_PROBES).map(|_| rng.gen_range(0..len)).collect()
    }
}

/// Relative error between analytic and central-difference gradients over
/// the probed coordinates of one tensor. A probe whose step straddles a
/// leaky-ReLU kink is re-measured with a step 100× smaller.
fn group_error(
    analytic: &[f64],
    probes: &[usize],
    mut eval: impl FnMut(usize, f64) -> f64,
) -> f64 {
    let mut diff = 0.0;
    let mut scale = 0.0;
    for &k in probes {
        let central = |h: f64, eval: &mut dyn FnMut(usize, f64) -> f64| (eval(k, h) - eval(k, -h)) / (2.0 * h);
        let mut fd = central(FD_STEP, &mut eval);
        if (fd - analytic[k]).abs() > FD_RTOL * fd.abs().max(analytic[k].abs()) {
            fd = central(FD_STEP * 1e-2, &mut eval);
        }
        diff += (fd - analytic[k]).powi(2);
        scale += fd.powi(2).max(analytic[k].powi(2));
    }
    if scale < 1e-20 {
        return diff.sqrt();
    }
    diff.sqrt() / scale.sqrt()
}

fn check_gradients(seed: u64, task: Task) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
    let g = common::toy_graph(seed, seed % 3 == 0);
    let trunk = TrunkParams::<f64>::init(seed);
    let head = TaskHead::<f64>::init(task, trunk.dim, seed + 1);
    let len = if task.per_variable() { g.n } else { 19 };
    let pos = if task.per_variable() {
        common::random_samples(len, 2, &mut rng)
    } else {
        vec![(0..len).map(|_| rng.gen_range(0.0..1.0)).collect()]
    };
    let neg = common::random_samples(len, 3, &mut rng);
    let (_, tg, hg) = composite_loss(&trunk, &head, &g, &pos, &neg);

    let names: Vec<String> = trunk.tensors().into_iter().map(|(n, _)| n).collect();
    for (t_idx, name) in names.iter().enumerate() {
        let probes = probe_indices(tg[t_idx].len(), &mut rng);
        let err = group_error(&tg[t_idx], &probes, |k, h| {
            let mut tp = trunk.clone();
            tp.tensors_mut()[t_idx].data[k] += h;
            composite_loss(&tp, &head, &g, &pos, &neg).0
        });
        assert!(err < FD_RTOL, "seed {seed} {task}: {name} rel err {err}");
    }
    for (h_idx, (name, _)) in head.tensors("head").into_iter().enumerate() {
        let probes = probe_indices(hg[h_idx].len(), &mut rng);
        let err = group_error(&hg[h_idx], &probes, |k, h| {
            let mut hp = head.clone();
            hp.tensors_mut()[h_idx].data[k] += h;
            composite_loss(&trunk, &hp, &g, &pos, &neg).0
        });
        assert!(err < FD_RTOL, "seed {seed} {task}: {name} rel err {err}");
    }
}

#[test]
fn finite_difference_var_scorer() {
    for seed in 0..6 {
        check_gradients(seed, Task::Backdoor);
    }
}

#[test]
fn finite_difference_config_scorer() {
    for seed in 100..104 {
        check_gradients(seed, Task::Config);
    }
}

#[test]
fn group_activation_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z: Vec<f64> = (0..19).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let w: Vec<f64> = (0..19).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let f = |z: &[f64]| {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::matrix(1, 19, z.to_vec()));
        let y = tape.group_activation(x, &CATEGORICAL_GROUPS);
        let wv = tape.constant(Tensor::matrix(19, 1, w.clone()));
        let s = tape.matmul(y, wv);
        let v = tape.value(s).data[0];
        tape.backward(s).unwrap();
        (v, tape.grad(x).unwrap().to_vec())
    };
    let (_, g) = f(&z);
    for k in 0..19 {
        let mut zp = z.clone();
        zp[k] += FD_STEP;
        let mut zm = z.clone();
        zm[k] -= FD_STEP;
        let fd = (f(&zp).0 - f(&zm).0) / (2.0 * FD_STEP);
        assert!((fd - g[k]).abs() < 1e-7, "slot {k}: {fd} vs {}", g[k]);
    }
}

#[test]
fn zero_loss_gives_zero_gradients() {
    let g = common::toy_graph(9, false);
    let trunk = TrunkParams::<f64>::init(1);
    let head = TaskHead::<f64>::init(Task::Pas, trunk.dim, 2);
    let pos = vec![vec![1.0; g.n]];
    let (loss, tg, hg) = composite_loss(&trunk, &head, &g, &pos, &[]);
    assert_eq!(loss, 0.0);
    assert!(tg.iter().chain(&hg).flatten().all(|&v| v == 0.0));
}
