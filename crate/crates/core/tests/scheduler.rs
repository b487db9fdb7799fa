use iscs_core::grouping::GroupingPlan;
use iscs_core::scheduler::{
    build_dag_flat, build_dag_grouped, grouped_task_count, simulate, CostModel, Dag, SliceTask,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tick-by-tick replay of the list-scheduling rule for integer task costs:
/// at each tick, idle workers take ready tasks in (group, slice, id) order.
fn tick_oracle(dag: &Dag, cost: &CostModel, workers: usize) -> f64 {
    let n = dag.tasks().len();
    let dur: Vec<u64> = dag
        .tasks()
        .iter()
        .map(|t| {
            let c = cost.task_cost(t);
            assert_eq!(c, c.round(), "oracle needs integer costs");
            c as u64
        })
        .collect();
    let mut finish: Vec<Option<u64>> = vec![None; n];
    let mut started = vec![false; n];
    let mut busy_until = vec![0u64; workers];
    let mut now = 0u64;
    while finish.iter().any(Option::is_none) || busy_until.iter().any(|&b| b > now) {
        let mut ready: Vec<usize> = (0..n)
            .filter(|&i| {
                !started[i]
                    && dag
                        .preds(i)
                        .iter()
                        .all(|&p| finish[p].is_some_and(|f| f <= now))
            })
            .collect();
        ready.sort_by_key(|&i| (dag.tasks()[i].group, dag.tasks()[i].slice, i));
        let mut ready = ready.into_iter();
        for b in busy_until.iter_mut() {
            if *b <= now {
                if let Some(t) = ready.next() {
                    started[t] = true;
                    *b = now + dur[t];
                    finish[t] = Some(*b);
                }
            }
        }
        if finish.iter().all(Option::is_some) {
            break;
        }
        now += 1;
    }
    let groups = dag.group_count();
    let mut end = vec![0u64; groups];
    for t in dag.tasks() {
        end[t.group] = end[t.group].max(finish[t.id].unwrap());
    }
    end.iter()
        .map(|&e| e as f64 + cost.sync_overhead)
        .fold(0.0, f64::max)
}

fn random_chains(rng: &mut impl Rng) -> Dag {
    let g = rng.gen_range(1..=8);
    let chains: Vec<Vec<usize>> = (0..g)
        .map(|_| {
            (0..rng.gen_range(1..=10))
                .map(|_| rng.gen_range(0..=16))
                .collect()
        })
        .collect();
    Dag::from_chains(&chains)
}

fn random_dag(rng: &mut impl Rng) -> Dag {
    let n = rng.gen_range(1..=30);
    let groups = rng.gen_range(1..=5);
    let mut tasks = Vec::with_capacity(n);
    let mut preds = Vec::with_capacity(n);
    for id in 0..n {
        tasks.push(SliceTask {
            id,
            group: rng.gen_range(0..groups),
            slice: id,
            channels: rng.gen_range(0..=16),
        });
        preds.push((0..id).filter(|_| rng.gen_bool(0.15)).collect());
    }
    Dag::new(tasks, preds).unwrap()
}

fn random_cost(rng: &mut impl Rng) -> CostModel {
    CostModel {
        base_per_slice: rng.gen_range(0.1..3.0),
        per_channel: rng.gen_range(0.0..0.2),
        sync_overhead: rng.gen_range(0.0..5.0),
    }
}

fn integer_cost(rng: &mut impl Rng) -> CostModel {
    CostModel {
        base_per_slice: rng.gen_range(1..=3) as f64,
        per_channel: rng.gen_range(0..=1) as f64,
        sync_overhead: rng.gen_range(0..=4) as f64,
    }
}

#[test]
fn unit_chains_closed_forms() {
    let unit = CostModel::unit();
    for g in 1..=8 {
        for s in 1..=10 {
            let dag = Dag::from_chains(&vec![vec![4; s]; g]);
            for p in g..g + 3 {
                assert_eq!(simulate(&dag, &unit, p).unwrap().makespan, s as f64);
            }
            assert_eq!(simulate(&dag, &unit, 1).unwrap().makespan, (g * s) as f64);
        }
    }
    let dag = Dag::from_chains(&vec![vec![8; 8]; 5]);
    assert_eq!(simulate(&dag, &unit, 4).unwrap().makespan, 16.0);
}

#[test]
fn integer_costs_match_tick_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let dag = if rng.gen_bool(0.5) {
            random_chains(&mut rng)
        } else {
            random_dag(&mut rng)
        };
        let cost = integer_cost(&mut rng);
        let p = rng.gen_range(1..=6);
        let got = simulate(&dag, &cost, p).unwrap().makespan;
        assert_eq!(got, tick_oracle(&dag, &cost, p));
    }
}

#[test]
fn lower_bounds_hold_on_fuzzed_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..400 {
        let dag = if rng.gen_bool(0.5) {
            random_chains(&mut rng)
        } else {
            random_dag(&mut rng)
        };
        let cost = random_cost(&mut rng);
        let p = rng.gen_range(1..=8);
        let r = simulate(&dag, &cost, p).unwrap();
        let tol = 1e-9 * r.makespan.max(1.0);
        assert!(r.makespan + tol >= dag.critical_path(&cost) + cost.sync_overhead);
        assert!(r.makespan + tol >= dag.total_work(&cost) / p as f64 + cost.sync_overhead);
        assert!(r.makespan <= dag.total_work(&cost) + cost.sync_overhead + tol);
    }
}

#[test]
fn makespan_never_grows_with_workers_on_chains() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..400 {
        let dag = random_chains(&mut rng);
        let cost = random_cost(&mut rng);
        let mut prev = f64::INFINITY;
        for p in 1..=10 {
            let m = simulate(&dag, &cost, p).unwrap().makespan;
            assert!(m <= prev + 1e-9, "P={p}: {m} > {prev}");
            prev = m;
        }
    }
}

#[test]
fn trace_is_a_valid_schedule() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..200 {
        let dag = random_dag(&mut rng);
        let cost = random_cost(&mut rng);
        let p = rng.gen_range(1..=4);
        let r = simulate(&dag, &cost, p).unwrap();
        for t in dag.tasks() {
            let e = r.trace[t.id];
            assert!(e.worker < p);
            assert!((e.end - e.start - cost.task_cost(t)).abs() < 1e-9);
            for &q in dag.preds(t.id) {
                assert!(r.trace[q].end <= e.start);
            }
        }
        for a in &r.trace {
            for b in &r.trace {
                if a.task < b.task && a.worker == b.worker {
                    assert!(a.end <= b.start || b.end <= a.start, "worker overlap");
                }
            }
        }
    }
}

#[test]
fn grouped_beats_flat_by_two_when_sync_is_small() {
    for g in 3..=8 {
        for s in [2, 4, 8] {
            let per = 8;
            let chains = vec![vec![per; s]; g];
            let grouped = Dag::from_chains(&chains);
            let flat = build_dag_flat(g * s, g * s * per);
            for sync_frac in [0.0, 0.1, 0.3] {
                let base = CostModel {
                    base_per_slice: 1.0,
                    per_channel: 0.05,
                    sync_overhead: 0.0,
                };
                let chain_time = s as f64 * (1.0 + 0.05 * per as f64);
                let cost = CostModel {
                    sync_overhead: sync_frac * chain_time,
                    ..base
                };
                let flat_serial = simulate(&flat, &cost, g).unwrap().makespan;
                let ours = simulate(&grouped, &cost, g).unwrap().makespan;
                assert!(flat_serial >= 2.0 * ours, "g={g} s={s} sync={sync_frac}");
            }
        }
    }
}

#[test]
fn grouped_dag_conserves_work() {
    let plan = GroupingPlan {
        permutation: vec![0, 2, 1, 3, 4, 6, 5, 7, 8, 9, 10],
        groups: vec![
            iscs_core::grouping::GroupSlices {
                sc: 0,
                slices: vec![vec![0, 2], vec![1, 3]],
            },
            iscs_core::grouping::GroupSlices {
                sc: 4,
                slices: vec![vec![4, 6], vec![5, 7]],
            },
        ],
        slice_count: 2,
        ordering_strategy: iscs_core::grouping::OrderingStrategy::KnI,
        tail: vec![8, 9, 10],
    };
    plan.validate().unwrap();
    let grouped = build_dag_grouped(&plan);
    assert_eq!(grouped.tasks().len(), grouped_task_count(&plan));
    assert_eq!(grouped.group_count(), 3);
    assert_eq!(grouped.edge_count(), 2);
    let flat = build_dag_flat(grouped_task_count(&plan), 11);
    let cost = CostModel::default();
    assert!((grouped.total_work(&cost) - flat.total_work(&cost)).abs() < 1e-12);
}

proptest! {
    #[test]
    fn one_worker_is_serial(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dag = random_dag(&mut rng);
        let cost = random_cost(&mut rng);
        let r = simulate(&dag, &cost, 1).unwrap();
        let expect = dag.total_work(&cost) + cost.sync_overhead;
        prop_assert!((r.makespan - expect).abs() <= 1e-9 * expect.max(1.0));
    }

    #[test]
    fn enough_workers_reach_the_critical_path_on_chains(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dag = random_chains(&mut rng);
        let cost = random_cost(&mut rng);
        let r = simulate(&dag, &cost, dag.group_count()).unwrap();
        let expect = dag.critical_path(&cost) + cost.sync_overhead;
        prop_assert!((r.makespan - expect).abs() <= 1e-9 * expect.max(1.0));
    }
}
