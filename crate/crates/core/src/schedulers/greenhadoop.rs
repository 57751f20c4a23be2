use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{fifo_pick, SchedError};
use crate::carbon::CarbonTrace;
use crate::engine::{ClusterView, Deferral, PolicyDecision, SchedulingPolicy, DEFAULT_LOOKAHEAD_S};

/// How the brown executors needed over the final window are spread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BrownApportion {
    /// Evenly over the whole window.
    #[default]
    Uniform,
    /// As much as possible in the current trace step.
    FrontLoaded,
}

fn green_rate(trace: &CarbonTrace, k: usize) -> f64 {
    if !trace.wraps() && k >= trace.len() {
        return 0.0;
    }
    trace.green_at_step(k).unwrap_or(0.0)
}

/// Green executor-seconds available over `[t, t + h)` on `executors` machines.
fn green_capacity(trace: &CarbonTrace, t: f64, h: f64, executors: f64) -> f64 {
    let step = trace.step();
    let end = t + h;
    let mut k = trace.step_index(t);
    let mut total = 0.0;
    loop {
        let lo = (k as f64 * step).max(t);
        let hi = ((k + 1) as f64 * step).min(end);
        if hi <= lo {
            break;
        }
        total += green_rate(trace, k) * executors * (hi - lo);
        k += 1;
    }
    total
}

/// Smallest horizon at which cumulative green capacity covers `outstanding`,
/// or `max_horizon` if it never does.
fn green_window(trace: &CarbonTrace, t: f64, executors: f64, outstanding: f64, max_horizon: f64) -> f64 {
    let step = trace.step();
    let end = t + max_horizon;
    let mut k = trace.step_index(t);
    let mut acc = 0.0;
    loop {
        let lo = (k as f64 * step).max(t);
        let hi = ((k + 1) as f64 * step).min(end);
        if hi <= lo {
            return max_horizon;
        }
        let rate = green_rate(trace, k) * executors;
        let need = outstanding - acc;
        if rate > 0.0 && rate * (hi - lo) >= need {
            return (lo + need / rate) - t;
        }
        acc += rate * (hi - lo);
        k += 1;
    }
}

/// Executor limit at time `t` given `outstanding` executor-seconds of work.
#[allow(clippy::too_many_arguments)]
pub fn greenhadoop_limit(
    trace: &CarbonTrace,
    t: f64,
    executors: u32,
    outstanding: f64,
    theta: f64,
    lookahead_s: f64,
    apportion: BrownApportion,
) -> Result<u32, SchedError> {
    if trace.green_fraction().is_none() {
        return Err(SchedError::NoGreenFraction);
    }
    let k = executors as f64;
    if outstanding <= 0.0 {
        return Ok(executors);
    }
    let g = green_window(trace, t, k, outstanding, lookahead_s);
    let br = outstanding / k;
    let wf = theta * g + (1.0 - theta) * br;
    // no slack beyond the brown window: run flat out
    if wf <= br * (1.0 + 1e-9) {
        return Ok(executors);
    }
    let brown = (outstanding - green_capacity(trace, t, wf, k)).max(0.0);
    let step_k = trace.step_index(t);
    let green_now = (green_rate(trace, step_k) * k).floor();
    let brown_now = match apportion {
        BrownApportion::Uniform => (brown / wf).ceil(),
        BrownApportion::FrontLoaded => {
            let left_in_step = ((step_k + 1) as f64 * trace.step() - t).min(wf);
            (brown / left_in_step).ceil()
        }
    };
    Ok((green_now + brown_now).clamp(0.0, k) as u32)
}

/// FIFO dispatch under a green/brown-window executor limit.
#[derive(Debug, Clone)]
pub struct GreenHadoop {
    pub theta: f64,
    pub lookahead_s: f64,
    pub apportion: BrownApportion,
    trace: Arc<CarbonTrace>,
    limit: Option<u32>,
}

impl GreenHadoop {
    pub fn new(theta: f64, trace: Arc<CarbonTrace>) -> Result<Self, SchedError> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(SchedError::InvalidParam(format!(
                "theta must lie in [0, 1], got {theta}"
            )));
        }
        if trace.green_fraction().is_none() {
            return Err(SchedError::NoGreenFraction);
        }
        Ok(Self {
            theta,
            lookahead_s: DEFAULT_LOOKAHEAD_S,
            apportion: BrownApportion::Uniform,
            trace,
            limit: None,
        })
    }
}

impl SchedulingPolicy for GreenHadoop {
    fn name(&self) -> String {
        format!("greenhadoop(theta={})", self.theta)
    }

    fn quota(&self) -> Option<u32> {
        self.limit
    }

    fn decide(&mut self, view: &ClusterView<'_>, _: &mut Vec<Deferral>) -> PolicyDecision {
        let outstanding: f64 = view.jobs.iter().map(|j| j.remaining_work).sum();
        let limit = greenhadoop_limit(
            &self.trace,
            view.now,
            view.executors,
            outstanding,
            self.theta,
            self.lookahead_s,
            self.apportion,
        )
        .expect("green fraction checked at construction");
        self.limit = Some(limit);
        if view.busy >= limit {
            return PolicyDecision::Idle;
        }
        match fifo_pick(view.available) {
            Some(a) => PolicyDecision::Schedule {
                job_id: a.job_id,
                stage_id: a.stage_id,
                parallelism: a.unstarted_tasks.min(limit - view.busy),
            },
            None => PolicyDecision::Idle,
        }
    }
}
