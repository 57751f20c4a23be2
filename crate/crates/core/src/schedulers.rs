//! Carbon-agnostic baselines and the GreenHadoop-style adapted baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::engine::{AvailableStage, ClusterView, Deferral, PolicyDecision, SchedulingPolicy};
use crate::workload::{JobId, StageId};

mod greenhadoop;

pub use greenhadoop::{greenhadoop_limit, BrownApportion, GreenHadoop};

#[derive(Debug, Error, PartialEq)]
pub enum SchedError {
    #[error("available set is empty")]
    EmptyAvailable,
    #[error("trace has no green_fraction column; the GreenHadoop baseline is unavailable")]
    NoGreenFraction,
    #[error("invalid policy parameter: {0}")]
    InvalidParam(String),
}

fn fifo_pick(available: &[AvailableStage]) -> Option<&AvailableStage> {
    // `available` is already ordered by (arrival rank, stage id)
    available.first()
}

/// Earliest-arrived job first, lowest stage id within it, parallelism equal
/// to the stage's remaining tasks.
#[derive(Debug, Clone, Default)]
pub struct Fifo;

pub fn fifo_choose(view: &ClusterView<'_>) -> PolicyDecision {
    match fifo_pick(view.available) {
        Some(a) => PolicyDecision::Schedule {
            job_id: a.job_id,
            stage_id: a.stage_id,
            parallelism: a.unstarted_tasks,
        },
        None => PolicyDecision::Idle,
    }
}

impl SchedulingPolicy for Fifo {
    fn name(&self) -> String {
        "fifo".into()
    }

    fn decide(&mut self, view: &ClusterView<'_>, _: &mut Vec<Deferral>) -> PolicyDecision {
        fifo_choose(view)
    }
}

/// Integer shares of `k` proportional to `work^w`, rounded by largest
/// remainder (ties to the lower index).
pub fn fair_shares(work: &[f64], w: f64, k: u32) -> Vec<u32> {
    if work.is_empty() {
        return Vec::new();
    }
    let weights: Vec<f64> = work.iter().map(|x| x.max(0.0).powf(w)).collect();
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = if total > 0.0 && total.is_finite() {
        weights.iter().map(|x| k as f64 * x / total).collect()
    } else {
        vec![k as f64 / work.len() as f64; work.len()]
    };
    let mut shares: Vec<u32> = exact.iter().map(|x| x.floor() as u32).collect();
    let assigned: u32 = shares.iter().sum();
    let mut order: Vec<usize> = (0..work.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(k.saturating_sub(assigned) as usize) {
        shares[i] += 1;
    }
    shares
}

/// Executors split across active jobs in proportion to remaining work.
#[derive(Debug, Clone)]
pub struct WeightedFair {
    pub exponent: f64,
}

impl Default for WeightedFair {
    fn default() -> Self {
        Self { exponent: 1.0 }
    }
}

impl SchedulingPolicy for WeightedFair {
    fn name(&self) -> String {
        format!("weighted-fair(w={})", self.exponent)
    }

    fn decide(&mut self, view: &ClusterView<'_>, _: &mut Vec<Deferral>) -> PolicyDecision {
        if view.available.is_empty() {
            return PolicyDecision::Idle;
        }
        let work: Vec<f64> = view.jobs.iter().map(|j| j.remaining_work).collect();
        let shares = fair_shares(&work, self.exponent, view.executors);
        let mut best: Option<(i64, &AvailableStage)> = None;
        for (j, share) in view.jobs.iter().zip(&shares) {
            let Some(stage) = view.available.iter().find(|a| a.job_id == j.job_id) else {
                continue;
            };
            let deficit = *share as i64 - j.executors as i64;
            if best.is_none_or(|(d, _)| deficit > d) {
                best = Some((deficit, stage));
            }
        }
        let (deficit, stage) = best.expect("available stages belong to active jobs");
        // every job at or over its share: keep executors busy one at a time
        let parallelism = if deficit > 0 { deficit as u32 } else { 1 };
        PolicyDecision::Schedule {
            job_id: stage.job_id,
            stage_id: stage.stage_id,
            parallelism,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEntry {
    pub job_id: JobId,
    pub stage_id: StageId,
    pub probability: f64,
}

/// Masked softmax over the available set, in available-set order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDistribution {
    pub entries: Vec<ScoreEntry>,
}

impl ScoreDistribution {
    /// Inverse-CDF lookup for a single uniform draw in [0, 1).
    pub fn sample_index(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, e) in self.entries.iter().enumerate() {
            acc += e.probability;
            if u < acc {
                return i;
            }
        }
        self.entries.len() - 1
    }

    pub fn max_probability(&self) -> f64 {
        self.entries.iter().map(|e| e.probability).fold(0.0, f64::max)
    }
}

/// Softmax of `scores / max(scores)` at temperature `tau`.
pub fn softmax_normalized(scores: &[f64], tau: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_nan() || max <= 0.0 {
        return vec![1.0 / scores.len() as f64; scores.len()];
    }
    let exps: Vec<f64> = scores.iter().map(|s| ((s / max - 1.0) / tau).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Scores each available stage by its remaining downstream critical path.
pub fn pb_scores(available: &[AvailableStage], tau: f64) -> Result<ScoreDistribution, SchedError> {
    if available.is_empty() {
        return Err(SchedError::EmptyAvailable);
    }
    let scores: Vec<f64> = available.iter().map(|a| a.downstream_cp).collect();
    let probs = softmax_normalized(&scores, tau);
    Ok(ScoreDistribution {
        entries: available
            .iter()
            .zip(probs)
            .map(|(a, p)| ScoreEntry {
                job_id: a.job_id,
                stage_id: a.stage_id,
                probability: p,
            })
            .collect(),
    })
}

pub const DEFAULT_TAU: f64 = 0.25;

/// Probabilistic scheduler: softmax over remaining critical path, one
/// uniform draw per decision.
#[derive(Debug, Clone)]
pub struct Pb {
    pub tau: f64,
    rng: ChaCha8Rng,
}

impl Pb {
    pub fn new(tau: f64, seed: u64) -> Result<Self, SchedError> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(SchedError::InvalidParam(format!("tau must be > 0, got {tau}")));
        }
        Ok(Self {
            tau,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Draws one stage. Returns the distribution and the chosen index.
    pub fn sample(&mut self, available: &[AvailableStage]) -> Result<(ScoreDistribution, usize), SchedError> {
        let dist = pb_scores(available, self.tau)?;
        let u: f64 = self.rng.random();
        let i = dist.sample_index(u);
        Ok((dist, i))
    }
}

impl SchedulingPolicy for Pb {
    fn name(&self) -> String {
        format!("pb(tau={})", self.tau)
    }

    fn decide(&mut self, view: &ClusterView<'_>, _: &mut Vec<Deferral>) -> PolicyDecision {
        match self.sample(view.available) {
            Ok((_, i)) => {
                let a = &view.available[i];
                PolicyDecision::Schedule {
                    job_id: a.job_id,
                    stage_id: a.stage_id,
                    parallelism: a.unstarted_tasks,
                }
            }
            Err(_) => PolicyDecision::Idle,
        }
    }
}
