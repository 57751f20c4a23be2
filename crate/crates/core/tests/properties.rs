use std::sync::Arc;

use proptest::prelude::*;

use carbonsched::cap::compute_thresholds;
use carbonsched::carbon::{BusyInterval, CarbonTrace};
use carbonsched::engine::{busy_profile, simulate, ClusterConfig, SimOptions};
use carbonsched::pcaps::psi;
use carbonsched::policy::PolicySpec;
use carbonsched::schedulers::softmax_normalized;
use carbonsched::workload::{generate_workload, DagModel, DurationDist, GeneratorParams, WorkloadSpec};

fn trace_strategy() -> impl Strategy<Value = CarbonTrace> {
    (prop::collection::vec(0.0..800.0f64, 1..48), 10.0..3600.0f64)
        .prop_map(|(v, step)| CarbonTrace::hourly(v).unwrap().with_step(step).unwrap())
}

fn workload(n_jobs: u32, seed: u64) -> WorkloadSpec {
    let params = GeneratorParams {
        n_jobs,
        mean_interarrival_s: 90.0,
        dag_model: DagModel::LayeredRandom {
            max_layers: 4,
            max_width: 3,
            max_tasks: 4,
            extra_edge_prob: 0.3,
        },
        durations: DurationDist::LogNormal {
            median: 40.0,
            sigma: 0.8,
        },
    };
    generate_workload(&params, seed).unwrap()
}

fn policy_strategy() -> impl Strategy<Value = (PolicySpec, u32)> {
    (1u32..=8).prop_flat_map(|k| {
        let policies = prop_oneof![
            Just(PolicySpec::Fifo),
            Just(PolicySpec::WeightedFair { w: 1.0 }),
            (0.05..2.0f64).prop_map(|tau| PolicySpec::Pb { tau }),
            (0.0..=1.0f64).prop_map(PolicySpec::pcaps),
            (1..=k).prop_map(|b| PolicySpec::cap(b, PolicySpec::Fifo)),
            (1..=k).prop_map(|b| PolicySpec::cap(b, PolicySpec::pb())),
        ];
        (policies, Just(k))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn emissions_are_additive_over_splits(tr in trace_strategy(), a in 0.0..1.0f64, b in 0.0..1.0f64, cut in 0.0..1.0f64) {
        let d = tr.duration();
        let (lo, hi) = if a < b { (a * d, b * d) } else { (b * d, a * d) };
        prop_assume!(hi > lo);
        let mid = lo + cut * (hi - lo);
        let whole = tr.integrate_emissions(&[BusyInterval { start: lo, end: hi, count: 1.0 }], 1.0).unwrap();
        let parts = tr.integrate_emissions(&[
            BusyInterval { start: lo, end: mid, count: 1.0 },
            BusyInterval { start: mid, end: hi, count: 1.0 },
        ], 1.0).unwrap();
        prop_assert!((whole - parts).abs() <= 1e-9 * whole.abs().max(1.0));
        let scaled = tr.integrate_emissions(&[BusyInterval { start: lo, end: hi, count: 3.0 }], 2.5).unwrap();
        prop_assert!((scaled - 7.5 * whole).abs() <= 1e-9 * scaled.abs().max(1.0));
    }

    #[test]
    fn window_bounds_contain_current_value(tr in trace_strategy(), f in 0.0..1.0f64, h in 1.0..200_000.0f64) {
        let t = f * tr.duration() * 0.999;
        let b = tr.bounds_over_window(t, h).unwrap();
        let c = tr.intensity_at(t).unwrap();
        prop_assert!(b.lower <= c && c <= b.upper);
    }

    #[test]
    fn cap_quota_is_monotone_in_carbon(k in 2u32..40, bf in 0.0..1.0f64, lower in 1.0..400.0f64, spread in 1.0..600.0f64,
                                        mut cs in prop::collection::vec(0.0..1200.0f64, 2..30)) {
        let b = 1 + ((k - 1) as f64 * bf) as u32;
        let t = compute_thresholds(k, b, lower, lower + spread).unwrap();
        cs.sort_by(f64::total_cmp);
        let quotas: Vec<u32> = cs.iter().map(|&c| t.quota(c)).collect();
        prop_assert!(quotas.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(quotas.iter().all(|&q| (b..=k).contains(&q)));
    }

    #[test]
    fn psi_is_monotone_in_importance(gamma in 0.0..=1.0f64, lower in 0.0..400.0f64, spread in 0.0..600.0f64,
                                     r1 in 0.0..=1.0f64, r2 in 0.0..=1.0f64) {
        let upper = lower + spread;
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let a = psi(gamma, lower, upper, lo).unwrap();
        let b = psi(gamma, lower, upper, hi).unwrap();
        prop_assert!(a <= b + 1e-12 * upper.max(1.0));
        prop_assert!(a >= gamma * lower + (1.0 - gamma) * upper - 1e-9 * upper.max(1.0));
        prop_assert!(b <= upper + 1e-9 * upper.max(1.0));
    }

    #[test]
    fn softmax_commutes_with_permutation(scores in prop::collection::vec(0.0..100.0f64, 1..12), tau in 0.05..3.0f64,
                                          rot in 0usize..12) {
        let p = softmax_normalized(&scores, tau);
        let r = rot % scores.len();
        let mut rotated = scores.clone();
        rotated.rotate_left(r);
        let mut expect = p.clone();
        expect.rotate_left(r);
        let q = softmax_normalized(&rotated, tau);
        for (x, y) in q.iter().zip(&expect) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn critical_path_within_total_work(n in 1u32..6, seed in any::<u64>()) {
        for job in &workload(n, seed).jobs {
            let cp = job.critical_path().unwrap();
            prop_assert!(cp > 0.0);
            prop_assert!(cp <= job.total_work() * (1.0 + 1e-12));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn simulations_are_valid_and_deterministic((policy, k) in policy_strategy(), n in 1u32..7, wseed in any::<u64>(),
                                               seed in any::<u64>(), values in prop::collection::vec(20.0..600.0f64, 24..48),
                                               move_delay in prop_oneof![Just(0.0), 0.0..5.0f64]) {
        let w = workload(n, wseed);
        let trace = Arc::new(CarbonTrace::hourly(values).unwrap().with_step(120.0).unwrap().with_wrap(true));
        let mut cluster = ClusterConfig::new(k);
        cluster.executor_move_delay_s = move_delay;
        let go = || {
            let mut p = policy.build(&trace, seed).unwrap();
            simulate(&cluster, &w, &trace, &mut p, &SimOptions::default()).unwrap()
        };
        let a = go();
        prop_assert_eq!(&a, &go());
        prop_assert!(a.check_invariants(&w).is_ok());
        prop_assert_eq!(a.jobs.len(), w.jobs.len());
        prop_assert_eq!(a.assignments.len() as u32, w.num_tasks());

        // busy profile against a direct count at every assignment boundary
        let profile = busy_profile(&a);
        for probe in a.assignments.iter().flat_map(|x| [x.start, x.end]) {
            let direct = a.assignments.iter().filter(|x| x.start <= probe && probe < x.end).count() as f64;
            let via = profile.iter().find(|iv| iv.start <= probe && probe < iv.end).map_or(0.0, |iv| iv.count);
            prop_assert_eq!(direct, via);
            prop_assert!(direct <= k as f64);
        }
    }
}
