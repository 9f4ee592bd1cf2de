mod common;

use gridplan::costmodel::{cost_batch_parallel, Assignment, ComputeModel, ComputeTable, HardwareModel};
use gridplan::netspec::alexnet_preset;
use gridplan::planner::{
    enumerate_grids, evaluate_all, factor_pairs, is_feasible, plan, sweep_strong, Overlap, PlanQuery, Policy,
    DEFAULT_EXHAUSTIVE_CAP,
};
use proptest::prelude::*;

fn divisors(n: u64) -> usize {
    (1..=n).filter(|d| n % d == 0).count()
}

fn policy() -> impl Strategy<Value = Policy> {
    prop::sample::select(vec![Policy::AllModel, Policy::ConvBatchFcModel, Policy::ConvDomainFcModel, Policy::Exhaustive])
}

fn compute() -> impl Strategy<Value = Option<ComputeModel>> {
    prop::option::of((0.001f64..0.1, 1.0f64..50.0).prop_map(|(small, slope)| {
        ComputeModel::Table(ComputeTable::new(vec![(1.0, small), (1024.0, small + slope)]).unwrap())
    }))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ranking_and_reference(
        net in common::arb_network(),
        procs in prop::sample::select(vec![1u64, 2, 6, 8, 12, 16, 64]),
        batch in 1u64..=1024,
        policy in policy(),
        comp in compute(),
        overlap in any::<bool>(),
    ) {
        let mut hw = HardwareModel::knl_cluster();
        hw.compute = comp;
        let q = PlanQuery::new(net.clone(), hw, procs, batch, policy)
            .with_overlap(if overlap { Overlap::BackpropOverlap } else { Overlap::None });
        let all = evaluate_all(&q).unwrap();
        for w in all.windows(2) {
            prop_assert!(w[0].feasible >= w[1].feasible);
            if w[0].feasible == w[1].feasible {
                prop_assert!(w[0].t_total <= w[1].t_total);
            }
        }
        let pure = all.iter().find(|r| r.grid.p_r == 1).unwrap();
        prop_assert_eq!(pure.speedup_vs_pure_batch, 1.0);
        let iters = net.sample_count().div_ceil(batch) as f64;
        prop_assert_eq!(pure.t_comm, cost_batch_parallel(&net, procs).to_seconds(&q.hw) * iters);
        for r in &all {
            prop_assert_eq!(r.feasible, is_feasible(&net, &r.grid, batch));
            if r.feasible {
                for layer in net.iter() {
                    let a = r.grid.effective(layer.index);
                    prop_assert!(batch >= r.grid.p_c);
                    if a == Assignment::BatchOnly {
                        prop_assert!(batch >= r.grid.procs());
                    }
                }
            }
            prop_assert!(r.t_total <= r.t_comm + r.t_comp);
        }
    }

    #[test]
    fn all_model_grid_count_is_divisor_count(net in common::arb_network(), procs in 1u64..=2048) {
        prop_assert_eq!(enumerate_grids(&net, procs, Policy::AllModel, DEFAULT_EXHAUSTIVE_CAP).len(), divisors(procs));
        prop_assert_eq!(factor_pairs(procs).len(), divisors(procs));
    }
}

#[test]
fn parallel_evaluation_is_reproducible() {
    let q = PlanQuery::new(alexnet_preset(), HardwareModel::knl_cluster(), 256, 1024, Policy::Exhaustive);
    let first = evaluate_all(&q).unwrap();
    for _ in 0..3 {
        assert_eq!(evaluate_all(&q).unwrap(), first);
    }
}

#[test]
fn pure_batch_words_level_off_under_strong_scaling() {
    let net = alexnet_preset();
    let total: f64 = net.iter().map(|l| l.dims.weight_count as f64).fold(0.0, |a, b| a + b);
    let mut last = 0.0;
    for p in [8u64, 16, 32, 64, 128, 256, 512] {
        let words = cost_batch_parallel(&net, p).words();
        assert!(words >= last && words < 2.0 * total);
        last = words;
    }
    assert!((2.0 * total - last) / (2.0 * total) < 0.01);
}

#[test]
fn strong_sweep_has_one_ranked_list_per_process_count() {
    let base = PlanQuery::new(alexnet_preset(), HardwareModel::knl_cluster(), 1, 2048, Policy::ConvBatchFcModel);
    let list = [8, 16, 32, 64, 128, 256, 512];
    let table = sweep_strong(&base, &list).unwrap();
    for p in list {
        let rows: Vec<_> = table.for_procs(p).collect();
        assert_eq!(rows.len(), divisors(p));
        assert!(rows.windows(2).all(|w| w[0].result.t_total <= w[1].result.t_total));
        assert!(plan(&PlanQuery { procs: p, ..base.clone() }).unwrap()[0].speedup_vs_pure_batch >= 1.0);
    }
}
