use milpmt_core::generate::{gen_ba_graph, gen_ca, gen_mis, gen_mvc, Graph};
use milpmt_core::milp::{brute_force_optimum, MilpInstance, ObjSense, RawInstance, RowSense};
use milpmt_core::solver::{
    default_config, presolve_pass, solve, BranchPriorities, BranchingRule, NodeSelection,
    SolveBudget, SolveError, SolveStatus, SolverConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn big_budget() -> SolveBudget {
    SolveBudget::nodes(1_000_000)
}

fn packing_pair() -> MilpInstance<f64> {
    let mut raw = RawInstance::binary("pair", ObjSense::Minimize, 2);
    raw.obj = vec![-1.0, -1.0];
    raw.add_row(vec![(0, 1.0), (1, 1.0)], RowSense::Le, 1.0);
    MilpInstance::canonicalize(&raw).unwrap()
}

fn triangle_mvc() -> MilpInstance<f64> {
    let g = Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
    gen_mvc(&g, "tri").unwrap()
}

/// Small instance drawn from one of the three families; n ≤ 20.
fn family_instance(k: u64) -> MilpInstance<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + k);
    match k % 3 {
        0 => {
            let items = rng.gen_range(5..12);
            let bids = rng.gen_range(6..=20);
            gen_ca(items, bids, k, "ca").unwrap()
        }
        1 => {
            let nodes = rng.gen_range(5..=20);
            let g = gen_ba_graph(nodes, rng.gen_range(1..=3), k).unwrap();
            gen_mis(&g, "mis").unwrap()
        }
        _ => {
            let nodes = rng.gen_range(5..=20);
            let g = gen_ba_graph(nodes, rng.gen_range(1..=3), k).unwrap();
            gen_mvc(&g, "mvc").unwrap()
        }
    }
}

fn random_priorities(inst: &MilpInstance<f64>, rng: &mut ChaCha8Rng) -> BranchPriorities {
    BranchPriorities {
        priority: (0..inst.num_vars()).map(|_| rng.gen_range(0..3)).collect(),
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * a.abs().max(1.0)
}

#[test]
fn packing_pair_optimal() {
    let r = solve(&packing_pair(), &default_config(), None, &big_budget(), 0).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!(close(r.best_obj.unwrap(), -1.0));
    assert!(close(r.dual_bound, -1.0));
}

#[test]
fn triangle_mvc_optimal() {
    let r = solve(&triangle_mvc(), &default_config(), None, &big_budget(), 0).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!(close(r.best_obj.unwrap(), 2.0));
    assert!(r.trace.nodes_processed >= 1);
}

#[test]
fn maximize_reports_original_sense() {
    let g = Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
    let inst: MilpInstance<f64> = gen_mis(&g, "tri").unwrap();
    let r = solve(&inst, &default_config(), None, &big_budget(), 0).unwrap();
    assert!(close(r.best_obj.unwrap(), 1.0));
    assert!(close(r.dual_bound, 1.0));
    // trace is kept in minimization sense
    assert!(close(r.trace.events.last().unwrap().incumbent, -1.0));
}

#[test]
fn empty_budget_rejected() {
    let inst = packing_pair();
    let cfg = default_config();
    assert_eq!(
        solve(&inst, &cfg, None, &SolveBudget::default(), 0),
        Err(SolveError::BudgetZero)
    );
    assert_eq!(
        solve(&inst, &cfg, None, &SolveBudget::nodes(0), 0),
        Err(SolveError::BudgetZero)
    );
}

#[test]
fn priorities_on_continuous_rejected() {
    let mut raw = RawInstance::binary("c", ObjSense::Minimize, 2);
    raw.binaries = vec![0];
    raw.var_ub[1] = 4.0;
    raw.add_row(vec![(0, 1.0), (1, 1.0)], RowSense::Le, 3.0);
    let inst: MilpInstance<f64> = MilpInstance::canonicalize(&raw).unwrap();
    let p = BranchPriorities::from_selected(2, &[1]);
    assert!(matches!(
        solve(&inst, &default_config(), Some(&p), &big_budget(), 0),
        Err(SolveError::BadPriorities(_))
    ));
}

#[test]
fn infeasible_instance() {
    let mut raw = RawInstance::binary("inf", ObjSense::Minimize, 2);
    raw.add_row(vec![(0, 1.0), (1, 1.0)], RowSense::Ge, 3.0);
    let inst: MilpInstance<f64> = MilpInstance::canonicalize(&raw).unwrap();
    for presolve in [true, false] {
        let cfg = SolverConfig {
            presolve,
            ..default_config()
        };
        let r = solve(&inst, &cfg, None, &big_budget(), 0).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert!(r.best_obj.is_none());
    }
}

#[test]
fn mixed_binary_continuous() {
    // min -x0 - 2 y  s.t.  y <= 1.5 x0 ,  x0 + y <= 2.2 , y in [0, 3]
    let mut raw = RawInstance::binary("mix", ObjSense::Minimize, 2);
    raw.binaries = vec![0];
    raw.var_ub[1] = 3.0;
    raw.obj = vec![-1.0, -2.0];
    raw.add_row(vec![(1, 1.0), (0, -1.5)], RowSense::Le, 0.0);
    raw.add_row(vec![(0, 1.0), (1, 1.0)], RowSense::Le, 2.2);
    let inst: MilpInstance<f64> = MilpInstance::canonicalize(&raw).unwrap();
    let r = solve(&inst, &default_config(), None, &big_budget(), 0).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    // x0 = 1 allows y = 1.2: objective -1 - 2.4
    assert!(close(r.best_obj.unwrap(), -3.4));
}

/// Twelve binaries. y0..y9 are tied to the two designated variables
/// x10, x11 by y_k ≤ x; once both are fixed every remaining LP vertex is
/// integral, so branching on {10, 11} alone closes the tree.
fn crafted_backdoor() -> MilpInstance<f64> {
    let mut raw = RawInstance::binary("backdoor", ObjSense::Minimize, 12);
    for k in 0..10 {
        raw.obj[k] = -1.0 - 0.01 * k as f64;
        let x = if k < 5 { 10 } else { 11 };
        raw.add_row(vec![(k, 1.0), (x, -1.0)], RowSense::Le, 0.0);
    }
    raw.obj[10] = 2.0;
    raw.obj[11] = 2.0;
    raw.add_row((0..10).map(|k| (k, 1.0)).collect(), RowSense::Le, 7.0);
    raw.add_row(vec![(10, 1.0), (11, 1.0)], RowSense::Le, 1.5);
    MilpInstance::canonicalize(&raw).unwrap()
}

#[test]
fn backdoor_priorities_do_not_grow_the_tree() {
    let inst = crafted_backdoor();
    let oracle = brute_force_optimum(&inst).unwrap().best_obj;
    let cfg = SolverConfig {
        presolve: false,
        rounding_freq: 0.0,
        ..default_config()
    };
    let plain = solve(&inst, &cfg, None, &big_budget(), 3).unwrap();
    let prio = BranchPriorities::from_selected(12, &[10, 11]);
    let guided = solve(&inst, &cfg, Some(&prio), &big_budget(), 3).unwrap();
    assert!(close(plain.best_obj.unwrap(), oracle));
    assert!(close(guided.best_obj.unwrap(), oracle));
    assert!(
        guided.trace.nodes_processed <= plain.trace.nodes_processed,
        "guided {} vs plain {}",
        guided.trace.nodes_processed,
        plain.trace.nodes_processed
    );
}

#[test]
fn oracle_equivalence_over_families() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for k in 0..200u64 {
        let inst = family_instance(k);
        assert!(inst.num_vars() <= 20);
        let oracle = brute_force_optimum(&inst).unwrap().best_obj;
        let cfg = if k % 4 == 0 {
            default_config()
        } else {
            SolverConfig::sample(&mut rng)
        };
        let prio = (k % 2 == 1).then(|| random_priorities(&inst, &mut rng));
        let r = solve(&inst, &cfg, prio.as_ref(), &big_budget(), k).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal, "instance {k} cfg {cfg:?}");
        let got = r.best_obj.unwrap();
        assert!(close(got, oracle), "instance {k}: {got} vs {oracle}, cfg {cfg:?}");
        assert!(close(r.dual_bound, got));
        let x = r.best_assignment.unwrap();
        assert!(inst.check_feasible(&x, 1e-6));
        assert!(close(inst.objective_value(&x), got));
    }
}

#[test]
fn every_node_selection_and_rule_agree() {
    for k in 0..12u64 {
        let inst = family_instance(k);
        let oracle = brute_force_optimum(&inst).unwrap().best_obj;
        for ns in [NodeSelection::BestBound, NodeSelection::Dfs, NodeSelection::Hybrid] {
            for br in [
                BranchingRule::MostInfeasible,
                BranchingRule::Pseudocost,
                BranchingRule::Random,
            ] {
                let cfg = SolverConfig {
                    node_selection: ns,
                    branching_rule: br,
                    ..default_config()
                };
                let r = solve(&inst, &cfg, None, &big_budget(), k).unwrap();
                assert!(close(r.best_obj.unwrap(), oracle));
            }
        }
    }
}

#[test]
fn presolve_preserves_family_optima() {
    for k in 0..30u64 {
        let inst = family_instance(k);
        let before = brute_force_optimum(&inst).unwrap().best_obj;
        let after = brute_force_optimum(&presolve_pass(&inst, 5).unwrap())
            .unwrap()
            .best_obj;
        assert_eq!(before, after);
    }
}

#[test]
fn trace_csv_layout() {
    let r = solve(&triangle_mvc(), &default_config(), None, &big_budget(), 0).unwrap();
    let csv = r.trace.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("work,node,incumbent"));
    assert_eq!(lines.count(), r.trace.events.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn trace_strictly_improving_and_deterministic(k in 0u64..500, cfg_seed in any::<u64>(), seed in any::<u64>()) {
        let inst = family_instance(k);
        let cfg = SolverConfig::sample(&mut ChaCha8Rng::seed_from_u64(cfg_seed));
        let a = solve(&inst, &cfg, None, &big_budget(), seed).unwrap();
        let b = solve(&inst, &cfg, None, &big_budget(), seed).unwrap();
        prop_assert_eq!(&a.trace, &b.trace);
        prop_assert_eq!(&a.best_assignment, &b.best_assignment);
        prop_assert_eq!(a.dual_bound, b.dual_bound);
        for w in a.trace.events.windows(2) {
            prop_assert!(w[1].incumbent < w[0].incumbent);
            prop_assert!(w[1].work >= w[0].work);
        }
    }

    #[test]
    fn priorities_never_change_the_optimum(k in 0u64..500, pseed in any::<u64>()) {
        let inst = family_instance(k);
        let cfg = default_config();
        let base = solve(&inst, &cfg, None, &big_budget(), 0).unwrap();
        let prio = random_priorities(&inst, &mut ChaCha8Rng::seed_from_u64(pseed));
        let guided = solve(&inst, &cfg, Some(&prio), &big_budget(), 0).unwrap();
        prop_assert!(close(base.best_obj.unwrap(), guided.best_obj.unwrap()));
    }

    #[test]
    fn larger_node_limit_never_worse(k in 0u64..500, limit in 1u64..6, cfg_seed in any::<u64>()) {
        let inst = family_instance(k);
        let cfg = SolverConfig::sample(&mut ChaCha8Rng::seed_from_u64(cfg_seed));
        let small = solve(&inst, &cfg, None, &SolveBudget::nodes(limit), 5).unwrap();
        let large = solve(&inst, &cfg, None, &SolveBudget::nodes(limit + 3), 5).unwrap();
        let s = small.best_internal(&inst);
        let l = large.best_internal(&inst);
        prop_assert!(l <= s);
        if small.status == SolveStatus::Feasible || small.status == SolveStatus::BudgetExhausted {
            // dual bound never exceeds the incumbent (minimization sense)
            prop_assert!(inst.to_internal(small.dual_bound) <= s + 1e-9);
        }
    }
}
