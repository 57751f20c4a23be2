//! Carbon-savings accounting between an agnostic and an aware run over the
//! same workload and trace, discretized to trace steps.

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::cap::compute_thresholds;
use crate::carbon::{CarbonTrace, SECONDS_PER_HOUR};
use crate::engine::{busy_profile, ScheduleRecord};

/// Busy executor-seconds inside each trace step, up to the last busy step.
pub fn step_busy_seconds(record: &ScheduleRecord, trace: &CarbonTrace) -> Vec<f64> {
    let step = trace.step();
    let mut out: Vec<f64> = Vec::new();
    for seg in busy_profile(record) {
        let mut k = trace.step_index(seg.start);
        while (k as f64 * step) < seg.end {
            let lo = seg.start.max(k as f64 * step);
            let hi = seg.end.min((k + 1) as f64 * step);
            if hi > lo {
                if out.len() <= k {
                    out.resize(k + 1, 0.0);
                }
                out[k] += seg.count * (hi - lo);
            }
            k += 1;
        }
    }
    out
}

fn last_step(record: &ScheduleRecord, trace: &CarbonTrace) -> Option<usize> {
    let m = record.makespan();
    (m > 0.0).then(|| ((m / trace.step()).ceil() as usize).saturating_sub(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecompositionForm {
    Cap,
    Pcaps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsDecomposition {
    pub form: DecompositionForm,
    /// Excess work in executor-seconds.
    pub w: f64,
    /// Deferred-work average intensity (the single `s` term in the cap form).
    pub s_minus: Option<f64>,
    pub s_plus: Option<f64>,
    pub c_bar: Option<f64>,
    pub savings_g: f64,
    pub direct_savings_g: f64,
    /// |savings - direct| over the sum of both runs' emissions.
    pub relative_error: f64,
    /// Completion times of the agnostic and aware runs, in seconds.
    pub t: f64,
    pub t_prime: f64,
}

struct Aligned {
    ag: Vec<f64>,
    aw: Vec<f64>,
    c: Vec<f64>,
    t_step: Option<usize>,
    direct: f64,
    scale: f64,
    to_grams: f64,
}

fn align(
    agnostic: &ScheduleRecord,
    aware: &ScheduleRecord,
    trace: &CarbonTrace,
    power_kw: f64,
) -> Result<Aligned, AnalysisError> {
    let mut ag = step_busy_seconds(agnostic, trace);
    let mut aw = step_busy_seconds(aware, trace);
    let n = ag.len().max(aw.len());
    ag.resize(n, 0.0);
    aw.resize(n, 0.0);
    let c: Vec<f64> = (0..n).map(|k| trace.value_at_step(k)).collect();
    let e_ag = trace.integrate_emissions(&busy_profile(agnostic), power_kw)?;
    let e_aw = trace.integrate_emissions(&busy_profile(aware), power_kw)?;
    Ok(Aligned {
        ag,
        aw,
        c,
        t_step: last_step(agnostic, trace),
        direct: e_ag - e_aw,
        scale: (e_ag + e_aw).max(f64::MIN_POSITIVE),
        to_grams: power_kw / SECONDS_PER_HOUR,
    })
}

fn nonzero(w: f64, a: &Aligned) -> bool {
    let total: f64 = a.ag.iter().chain(&a.aw).sum();
    w.abs() > 1e-12 * total.max(1.0)
}

/// Savings as `W (s - c)`: `W` is the agnostic run's lead in executor time up
/// to its completion step, `s` the intensity that work would have cost and
/// `c` the intensity the aware run pays after that step.
pub fn savings_decomposition_cap(
    agnostic: &ScheduleRecord,
    aware: &ScheduleRecord,
    trace: &CarbonTrace,
    power_kw: f64,
) -> Result<SavingsDecomposition, AnalysisError> {
    let a = align(agnostic, aware, trace, power_kw)?;
    let split = a.t_step.map_or(0, |t| t + 1);
    let (mut w, mut ws, mut wc) = (0.0, 0.0, 0.0);
    for i in 0..a.c.len() {
        if i < split {
            w += a.ag[i] - a.aw[i];
            ws += (a.ag[i] - a.aw[i]) * a.c[i];
        } else {
            wc += a.aw[i] * a.c[i];
        }
    }
    let (s, c_bar, savings) = if nonzero(w, &a) {
        let (s, c) = (ws / w, wc / w);
        (Some(s), Some(c), w * (s - c) * a.to_grams)
    } else {
        (None, None, (ws - wc) * a.to_grams)
    };
    Ok(SavingsDecomposition {
        form: DecompositionForm::Cap,
        w,
        s_minus: s,
        s_plus: s.map(|_| 0.0),
        c_bar,
        savings_g: savings,
        direct_savings_g: a.direct,
        relative_error: (savings - a.direct).abs() / a.scale,
        t: agnostic.makespan(),
        t_prime: aware.makespan(),
    })
}

/// Savings as `W (s- - s+ - c)`, splitting steps before the agnostic
/// completion by whether the aware run used fewer or more executors.
pub fn savings_decomposition_pcaps(
    agnostic: &ScheduleRecord,
    aware: &ScheduleRecord,
    trace: &CarbonTrace,
    power_kw: f64,
) -> Result<SavingsDecomposition, AnalysisError> {
    let a = align(agnostic, aware, trace, power_kw)?;
    let split = a.t_step.map_or(0, |t| t + 1);
    let (mut w, mut wm, mut wp, mut wc) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..a.c.len() {
        if i < split {
            let d = a.ag[i] - a.aw[i];
            if d >= 0.0 {
                w += d;
                wm += d * a.c[i];
            } else {
                wp += -d * a.c[i];
            }
        } else {
            wc += a.aw[i] * a.c[i];
        }
    }
    let (sm, sp, c_bar, savings) = if nonzero(w, &a) {
        let (sm, sp, c) = (wm / w, wp / w, wc / w);
        (Some(sm), Some(sp), Some(c), w * (sm - sp - c) * a.to_grams)
    } else {
        (None, None, None, (wm - wp - wc) * a.to_grams)
    };
    Ok(SavingsDecomposition {
        form: DecompositionForm::Pcaps,
        w,
        s_minus: sm,
        s_plus: sp,
        c_bar,
        savings_g: savings,
        direct_savings_g: a.direct,
        relative_error: (savings - a.direct).abs() / a.scale,
        t: agnostic.makespan(),
        t_prime: aware.makespan(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum BacklogMode {
    Pcaps,
    Cap { b: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacklogPoint {
    pub step: usize,
    pub intensity: f64,
    /// Busy fraction of K.
    pub rho_agnostic: f64,
    /// Busy fraction of K (pcaps mode) or of the quota (cap mode).
    pub rho_aware: f64,
    pub quota: Option<u32>,
    /// Intensity the saved executor time is valued at.
    pub price: f64,
    pub savings_g: f64,
}

fn backlogged(record: &ScheduleRecord, lo: f64, hi: f64) -> bool {
    record.jobs.iter().any(|j| j.arrival <= lo && j.completion >= hi)
}

fn quota_at(record: &ScheduleRecord, t: f64) -> u32 {
    record
        .quota_history
        .iter()
        .take_while(|q| q.time <= t)
        .last()
        .map_or(record.executors, |q| q.quota)
}

/// Per-step savings estimate over steps where both runs have an unfinished
/// job for the whole step. Diagnostic only.
pub fn avg_savings_backlogged(
    agnostic: &ScheduleRecord,
    aware: &ScheduleRecord,
    trace: &CarbonTrace,
    power_kw: f64,
    mode: BacklogMode,
) -> Vec<BacklogPoint> {
    let step = trace.step();
    let k = aware.executors as f64;
    let ag = step_busy_seconds(agnostic, trace);
    let aw = step_busy_seconds(aware, trace);
    let n = ag.len().max(aw.len());
    let mut out = Vec::new();
    for i in 0..n {
        let (lo, hi) = (i as f64 * step, (i + 1) as f64 * step);
        if !(backlogged(agnostic, lo, hi) && backlogged(aware, lo, hi)) {
            continue;
        }
        let x_ag = ag.get(i).copied().unwrap_or(0.0);
        let x_aw = aw.get(i).copied().unwrap_or(0.0);
        let c = trace.value_at_step(i);
        let (quota, price, rho_aw) = match mode {
            BacklogMode::Pcaps => (None, c, x_aw / (k * step)),
            BacklogMode::Cap { b } => {
                let r = quota_at(aware, lo);
                let bounds = aware.carbon_bounds_history.iter().take_while(|h| h.time <= lo).last();
                let phi = bounds
                    .and_then(|h| {
                        compute_thresholds(aware.executors, b.clamp(1, aware.executors), h.lower, h.upper).ok()
                    })
                    .map_or(c, |t| t.phi(r.max(t.b)));
                (Some(r), phi, x_aw / (r.max(1) as f64 * step))
            }
        };
        out.push(BacklogPoint {
            step: i,
            intensity: c,
            rho_agnostic: x_ag / (k * step),
            rho_aware: rho_aw,
            quota,
            price,
            savings_g: (x_ag - x_aw) * price * power_kw / SECONDS_PER_HOUR,
        });
    }
    out
}
