use std::sync::Arc;

use carbonsched::analysis::compute_metrics;
use carbonsched::carbon::{synthetic, CarbonTrace};
use carbonsched::engine::{simulate, ClusterConfig, ScheduleRecord, SimOptions};
use carbonsched::pcaps::psi;
use carbonsched::policy::PolicySpec;
use carbonsched::workload::{generate_workload, GeneratorParams, JobDag, StageSpec, WorkloadSpec};

fn run(k: u32, w: &WorkloadSpec, trace: &Arc<CarbonTrace>, policy: &PolicySpec, seed: u64) -> ScheduleRecord {
    let mut p = policy.build(trace, seed).unwrap();
    simulate(&ClusterConfig::new(k), w, trace, &mut p, &SimOptions::default()).unwrap()
}

/// Root, then a long bottleneck chain beside a short wide branch, joined by a sink.
fn bottleneck_job(job_id: u32, arrival: f64) -> JobDag {
    JobDag {
        job_id,
        arrival_time: arrival,
        stages: vec![
            StageSpec::uniform(0, 1, 10.0),
            StageSpec::uniform(1, 8, 100.0),
            StageSpec::uniform(2, 4, 100.0),
            StageSpec::uniform(3, 4, 20.0),
            StageSpec::uniform(4, 4, 20.0),
            StageSpec::uniform(5, 1, 10.0),
        ],
        edges: vec![(0, 1), (1, 2), (2, 5), (0, 3), (3, 4), (4, 5)],
    }
}

fn steps_at(trace: &CarbonTrace, level: f64) -> impl Fn(f64) -> bool + '_ {
    move |t| trace.intensity_at(t).unwrap() == level
}

#[test]
fn pcaps_defers_side_branches_while_the_bottleneck_runs() {
    // starts high: 500 for 5 minutes, then 50 for 5 minutes, repeating
    let trace = Arc::new(synthetic::square_wave(500.0, 50.0, 2, 400, 300.0).unwrap());
    let w = WorkloadSpec::new(vec![bottleneck_job(0, 0.0), bottleneck_job(1, 30.0)]).unwrap();
    let high = steps_at(&trace, 500.0);
    let mut deferrals = 0;
    let mut bottleneck_in_high = 0;
    for seed in 0..20 {
        let rec = run(4, &w, &trace, &PolicySpec::pcaps(0.9), seed);
        for d in &rec.deferrals {
            deferrals += 1;
            assert!(d.relative_importance < 1.0, "deferred a bottleneck stage: {d:?}");
            let threshold = psi(0.9, 50.0, 500.0, d.relative_importance).unwrap();
            assert!(threshold < d.carbon);
            assert!(high(d.time));
            assert!(
                rec.assignments.iter().any(|a| a.start <= d.time && d.time < a.end),
                "deferral at {} with nothing running",
                d.time
            );
        }
        bottleneck_in_high += rec
            .assignments
            .iter()
            .filter(|a| a.stage_id == 1 && high(a.start))
            .count();
    }
    assert!(deferrals > 0);
    assert!(bottleneck_in_high > 0);
}

#[test]
fn pcaps_never_defers_on_a_constant_trace() {
    let trace = Arc::new(CarbonTrace::hourly(vec![120.0; 48]).unwrap());
    let w = WorkloadSpec::new(vec![bottleneck_job(0, 0.0), bottleneck_job(1, 5.0)]).unwrap();
    for seed in 0..10 {
        assert!(run(3, &w, &trace, &PolicySpec::pcaps(0.7), seed).deferrals.is_empty());
    }
}

#[test]
fn cap_shifts_work_out_of_high_carbon_steps() {
    // starts high so the agnostic run works through a high stretch
    let trace = Arc::new(synthetic::square_wave(500.0, 50.0, 6, 400, 600.0).unwrap());
    let w = generate_workload(&GeneratorParams::template_library(12, 120.0), 9).unwrap();
    let high = steps_at(&trace, 500.0);
    let busy_in_high = |r: &ScheduleRecord| -> f64 {
        r.assignments
            .iter()
            .map(|a| {
                // split each task at step boundaries
                let mut t = a.start;
                let mut acc = 0.0;
                while t < a.end {
                    let next = ((trace.step_index(t) + 1) as f64 * trace.step()).min(a.end);
                    if high(t) {
                        acc += next - t;
                    }
                    t = next;
                }
                acc
            })
            .sum()
    };
    let fifo = run(6, &w, &trace, &PolicySpec::Fifo, 0);
    let cap = run(6, &w, &trace, &PolicySpec::cap(1, PolicySpec::Fifo), 0);
    assert!(busy_in_high(&cap) < busy_in_high(&fifo));
    let m_fifo = compute_metrics(&fifo, &trace, 1.0).unwrap();
    let m_cap = compute_metrics(&cap, &trace, 1.0).unwrap();
    assert!(m_cap.footprint_g < m_fifo.footprint_g);
    assert!(m_cap.ect >= m_fifo.ect);
    // the quota sits at B whenever carbon is at the window maximum
    for q in &cap.quota_history {
        if high(q.time) {
            assert_eq!(q.quota, 1);
        }
    }
    assert!(cap.quota_history.iter().any(|q| q.quota == 6));
}

#[test]
fn greenhadoop_without_deferral_weight_is_fifo() {
    let trace = Arc::new(
        synthetic::diurnal(
            &synthetic::DiurnalParams {
                n_steps: 200,
                ..Default::default()
            },
            3,
        )
        .unwrap(),
    );
    let w = generate_workload(&GeneratorParams::template_library(8, 300.0), 4).unwrap();
    let gh = PolicySpec::GreenHadoop {
        theta: 0.0,
        apportion: Default::default(),
    };
    let a = run(5, &w, &trace, &gh, 0);
    let b = run(5, &w, &trace, &PolicySpec::Fifo, 0);
    assert_eq!(a.assignments, b.assignments);
    assert_eq!(a.jobs, b.jobs);
}

#[test]
fn greenhadoop_defers_more_with_higher_theta() {
    let trace = Arc::new(
        synthetic::diurnal(
            &synthetic::DiurnalParams {
                n_steps: 400,
                ..Default::default()
            },
            5,
        )
        .unwrap(),
    );
    let w = generate_workload(&GeneratorParams::template_library(20, 120.0), 6).unwrap();
    let ect = |theta: f64| {
        let r = run(
            4,
            &w,
            &trace,
            &PolicySpec::GreenHadoop {
                theta,
                apportion: Default::default(),
            },
            0,
        );
        compute_metrics(&r, &trace, 1.0).unwrap().ect
    };
    assert!(ect(0.9) >= ect(0.0));
}
