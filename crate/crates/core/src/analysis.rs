//! Post-hoc metrics, makespan bound checks and carbon-savings accounting
//! over finished schedule records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::carbon::{CarbonTrace, TraceError};
use crate::engine::{busy_profile, ScheduleRecord};
use crate::workload::{JobDag, JobId};

mod opt;
mod savings;

pub use opt::{optimal_makespan, optimal_makespan_by_orders, MAX_OPT_EXECUTORS, MAX_OPT_TASKS};
pub use savings::{
    avg_savings_backlogged, savings_decomposition_cap, savings_decomposition_pcaps, step_busy_seconds, BacklogMode,
    BacklogPoint, SavingsDecomposition,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("instance too large for exhaustive search: {tasks} tasks on {executors} executors (limit {max_tasks} tasks, {max_executors} executors)")]
    InstanceTooLarge {
        tasks: usize,
        executors: u32,
        max_tasks: usize,
        max_executors: u32,
    },
    #[error("records cover different workloads")]
    WorkloadMismatch,
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Workload(#[from] crate::workload::WorkloadError),
}

/// Relative tolerance used by every bound check.
pub const BOUND_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub footprint_g: f64,
    pub per_job_jct: BTreeMap<JobId, f64>,
    pub avg_jct: f64,
    pub ect: f64,
    pub makespan: f64,
    pub busy_executor_seconds: f64,
    pub utilization: f64,
}

pub fn compute_metrics(
    record: &ScheduleRecord,
    trace: &CarbonTrace,
    power_kw: f64,
) -> Result<MetricsReport, TraceError> {
    let profile = busy_profile(record);
    let footprint_g = trace.integrate_emissions(&profile, power_kw)?;
    let per_job_jct: BTreeMap<JobId, f64> = record
        .jobs
        .iter()
        .map(|j| (j.job_id, j.completion - j.arrival))
        .collect();
    let avg_jct = if per_job_jct.is_empty() {
        0.0
    } else {
        per_job_jct.values().sum::<f64>() / per_job_jct.len() as f64
    };
    let ect = record.makespan() - record.first_arrival();
    let busy: f64 = profile.iter().map(|p| (p.end - p.start) * p.count).sum();
    let utilization = if ect > 0.0 {
        busy / (record.executors as f64 * ect)
    } else {
        0.0
    };
    Ok(MetricsReport {
        footprint_g,
        per_job_jct,
        avg_jct,
        ect,
        makespan: record.makespan(),
        busy_executor_seconds: busy,
        utilization,
    })
}

/// Ratios of a run's headline metrics to a baseline run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedMetrics {
    pub footprint: f64,
    pub ect: f64,
    pub avg_jct: f64,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}

pub fn normalize(run: &MetricsReport, baseline: &MetricsReport) -> NormalizedMetrics {
    NormalizedMetrics {
        footprint: ratio(run.footprint_g, baseline.footprint_g),
        ect: ratio(run.ect, baseline.ect),
        avg_jct: ratio(run.avg_jct, baseline.avg_jct),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsfReport {
    pub agnostic_makespan: f64,
    pub aware_makespan: f64,
    /// aware / agnostic.
    pub observed_ratio: f64,
    /// Per-instance certificates `makespan / OPT` when OPT is known.
    pub agnostic_certificate: Option<f64>,
    pub aware_certificate: Option<f64>,
}

pub fn compute_csf(agnostic: &ScheduleRecord, aware: &ScheduleRecord, opt: Option<f64>) -> CsfReport {
    let a = agnostic.makespan() - agnostic.first_arrival();
    let b = aware.makespan() - aware.first_arrival();
    CsfReport {
        agnostic_makespan: a,
        aware_makespan: b,
        observed_ratio: ratio(b, a),
        agnostic_certificate: opt.map(|o| a / o),
        aware_certificate: opt.map(|o| b / o),
    }
}

/// Measured deferred fraction: the `min(D, n - 1)` longest task runtimes over
/// total work, where D is the number of deferrals in the record.
pub fn deferral_fraction(record: &ScheduleRecord, jobs: &[JobDag]) -> f64 {
    let mut runtimes: Vec<f64> = jobs
        .iter()
        .flat_map(|j| j.stages.iter().flat_map(|s| s.durations()))
        .collect();
    let total: f64 = runtimes.iter().sum();
    if runtimes.is_empty() || total <= 0.0 {
        return 0.0;
    }
    runtimes.sort_by(|a, b| b.total_cmp(a));
    let d = record.deferrals.len().min(runtimes.len() - 1);
    runtimes[..d].iter().sum::<f64>() / total
}

/// Smallest quota in force during the run (K when the policy imposed none).
pub fn min_quota(record: &ScheduleRecord) -> u32 {
    record.min_quota().unwrap_or(record.executors)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    /// `2 - 1/K` for greedy list scheduling.
    Graham,
    /// `2 - 1/K + D K` with the measured deferral fraction.
    DeferralMeasuredD,
    /// `2K/M - K/M^2` with the measured minimum quota.
    MinimumQuota,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub makespan: f64,
    pub opt: f64,
    pub factor: f64,
    pub bound: f64,
    pub slack: f64,
    pub executors: u32,
    pub d_hat: Option<f64>,
    pub min_quota: Option<u32>,
    pub pass: bool,
}

fn bound_report(
    kind: BoundKind,
    record: &ScheduleRecord,
    factor: f64,
    k: u32,
    opt: f64,
    d_hat: Option<f64>,
    m: Option<u32>,
) -> BoundReport {
    let makespan = record.makespan() - record.first_arrival();
    let bound = factor * opt;
    BoundReport {
        kind,
        makespan,
        opt,
        factor,
        bound,
        slack: bound - makespan,
        executors: k,
        d_hat,
        min_quota: m,
        pass: makespan <= bound * (1.0 + BOUND_TOLERANCE),
    }
}

pub fn graham_factor(k: u32) -> f64 {
    2.0 - 1.0 / k as f64
}

pub fn check_graham(record: &ScheduleRecord, k: u32, opt: f64) -> BoundReport {
    bound_report(BoundKind::Graham, record, graham_factor(k), k, opt, None, None)
}

pub fn check_bound_thm1(record: &ScheduleRecord, d_hat: f64, k: u32, opt: f64) -> BoundReport {
    let factor = graham_factor(k) + d_hat * k as f64;
    bound_report(BoundKind::DeferralMeasuredD, record, factor, k, opt, Some(d_hat), None)
}

pub fn check_bound_thm3(record: &ScheduleRecord, m: u32, k: u32, opt: f64) -> BoundReport {
    let (k_f, m_f) = (k as f64, m as f64);
    let factor = 2.0 * k_f / m_f - k_f / (m_f * m_f);
    bound_report(BoundKind::MinimumQuota, record, factor, k, opt, None, Some(m))
}
