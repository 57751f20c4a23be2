use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::templates::TPCH_TEMPLATES;
use super::{JobDag, StageId, StageSpec, WorkloadError, WorkloadSpec};

/// Data scale of a template-library job; maps to a mean single-executor
/// runtime in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TpchScale {
    Gb2,
    Gb10,
    Gb50,
}

impl TpchScale {
    pub fn mean_duration_s(self) -> f64 {
        match self {
            TpchScale::Gb2 => 180.0,
            TpchScale::Gb10 => 386.0,
            TpchScale::Gb50 => 1261.0,
        }
    }
}

/// Per-task duration distribution in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DurationDist {
    Constant { value: f64 },
    Uniform { lo: f64, hi: f64 },
    Exponential { mean: f64 },
    LogNormal { median: f64, sigma: f64 },
}

impl DurationDist {
    fn check(&self) -> Result<(), WorkloadError> {
        let ok = match *self {
            DurationDist::Constant { value } => value > 0.0,
            DurationDist::Uniform { lo, hi } => lo > 0.0 && hi >= lo,
            DurationDist::Exponential { mean } => mean > 0.0,
            DurationDist::LogNormal { median, sigma } => median > 0.0 && sigma >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(WorkloadError::InvalidParams(format!(
                "bad duration distribution {self:?}"
            )))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let d = match *self {
            DurationDist::Constant { value } => value,
            DurationDist::Uniform { lo, hi } => {
                if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                }
            }
            DurationDist::Exponential { mean } => Exp::new(1.0 / mean).unwrap().sample(rng),
            DurationDist::LogNormal { median, sigma } => LogNormal::new(median.ln(), sigma).unwrap().sample(rng),
        };
        d.max(1e-3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DagModel {
    /// Query-plan shapes from a fixed library; total single-executor work is
    /// the scale's mean runtime times a mean-one log-normal jitter times
    /// `duration_multiplier`.
    TemplateLibrary {
        scales: Vec<TpchScale>,
        #[serde(default = "one")]
        duration_multiplier: f64,
        #[serde(default = "default_jitter")]
        jitter_sigma: f64,
    },
    /// Random layered DAG: edges only go from lower to strictly higher layers.
    LayeredRandom {
        max_layers: u32,
        max_width: u32,
        max_tasks: u32,
        #[serde(default = "default_edge_prob")]
        extra_edge_prob: f64,
    },
    /// Production-trace-like DAGs: stage count drawn from a truncated power
    /// law, layered structure, durations scaled down by `duration_scale`.
    AlibabaLike {
        #[serde(default = "default_exponent")]
        power_law_exponent: f64,
        #[serde(default = "default_min_stages")]
        min_stages: u32,
        #[serde(default = "default_max_stages")]
        max_stages: u32,
        #[serde(default = "default_alibaba_tasks")]
        max_tasks: u32,
        #[serde(default = "default_alibaba_scale")]
        duration_scale: f64,
    },
}

fn one() -> f64 {
    1.0
}
fn default_jitter() -> f64 {
    0.25
}
fn default_edge_prob() -> f64 {
    0.1
}
fn default_exponent() -> f64 {
    2.0
}
// With exponent 2 the truncated power law on [20, 500] averages ~66 stages.
fn default_min_stages() -> u32 {
    20
}
fn default_max_stages() -> u32 {
    500
}
fn default_alibaba_tasks() -> u32 {
    4
}
fn default_alibaba_scale() -> f64 {
    1.0 / 60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub n_jobs: u32,
    pub mean_interarrival_s: f64,
    pub dag_model: DagModel,
    #[serde(default = "default_durations")]
    pub durations: DurationDist,
}

fn default_durations() -> DurationDist {
    // ~121 s of work per stage at 2.5 tasks per stage
    DurationDist::Exponential { mean: 48.4 }
}

impl GeneratorParams {
    pub fn template_library(n_jobs: u32, mean_interarrival_s: f64) -> Self {
        Self {
            n_jobs,
            mean_interarrival_s,
            dag_model: DagModel::TemplateLibrary {
                scales: vec![TpchScale::Gb2, TpchScale::Gb10, TpchScale::Gb50],
                duration_multiplier: 1.0,
                jitter_sigma: default_jitter(),
            },
            durations: default_durations(),
        }
    }

    fn check(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::InvalidParams(m.to_string()));
        if self.n_jobs == 0 {
            return bad("n_jobs must be >= 1");
        }
        if !(self.mean_interarrival_s > 0.0 && self.mean_interarrival_s.is_finite()) {
            return bad("mean_interarrival_s must be > 0");
        }
        self.durations.check()?;
        match &self.dag_model {
            DagModel::TemplateLibrary {
                scales,
                duration_multiplier,
                jitter_sigma,
            } => {
                if scales.is_empty() {
                    return bad("template library needs at least one scale");
                }
                if duration_multiplier.is_nan()
                    || *duration_multiplier <= 0.0
                    || jitter_sigma.is_nan()
                    || *jitter_sigma < 0.0
                {
                    return bad("duration_multiplier must be > 0 and jitter_sigma >= 0");
                }
            }
            DagModel::LayeredRandom {
                max_layers,
                max_width,
                max_tasks,
                extra_edge_prob,
            } => {
                if *max_layers == 0 || *max_width == 0 || *max_tasks == 0 {
                    return bad("layered-random sizes must be >= 1");
                }
                if !(0.0..=1.0).contains(extra_edge_prob) {
                    return bad("extra_edge_prob must lie in [0,1]");
                }
            }
            DagModel::AlibabaLike {
                power_law_exponent,
                min_stages,
                max_stages,
                max_tasks,
                duration_scale,
            } => {
                if *min_stages == 0 || max_stages < min_stages || *max_tasks == 0 {
                    return bad("alibaba-like sizes must satisfy 1 <= min_stages <= max_stages");
                }
                if power_law_exponent.is_nan()
                    || *power_law_exponent <= 0.0
                    || duration_scale.is_nan()
                    || *duration_scale <= 0.0
                {
                    return bad("power_law_exponent and duration_scale must be > 0");
                }
            }
        }
        Ok(())
    }
}

/// Deterministic workload: the first job arrives at 0 and later jobs follow
/// exponential gaps with the configured mean.
pub fn generate_workload(params: &GeneratorParams, seed: u64) -> Result<WorkloadSpec, WorkloadError> {
    params.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaps = Exp::new(1.0 / params.mean_interarrival_s).unwrap();
    let mut t = 0.0;
    let mut jobs = Vec::with_capacity(params.n_jobs as usize);
    for job_id in 0..params.n_jobs {
        if job_id > 0 {
            t += gaps.sample(&mut rng);
        }
        let (stages, edges) = match &params.dag_model {
            DagModel::TemplateLibrary {
                scales,
                duration_multiplier,
                jitter_sigma,
            } => template_job(&mut rng, scales, *duration_multiplier, *jitter_sigma),
            DagModel::LayeredRandom {
                max_layers,
                max_width,
                max_tasks,
                extra_edge_prob,
            } => {
                let layers = rng.random_range(1..=*max_layers);
                let widths: Vec<u32> = (0..layers).map(|_| rng.random_range(1..=*max_width)).collect();
                layered_job(&mut rng, &widths, *max_tasks, *extra_edge_prob, &params.durations, 1.0)
            }
            DagModel::AlibabaLike {
                power_law_exponent,
                min_stages,
                max_stages,
                max_tasks,
                duration_scale,
            } => {
                let n = power_law(&mut rng, *power_law_exponent, *min_stages, *max_stages);
                let width = (n as f64).sqrt().ceil() as u32;
                let mut widths = Vec::new();
                let mut placed = 0;
                while placed < n {
                    let w = rng.random_range(1..=width.max(1)).min(n - placed);
                    widths.push(w);
                    placed += w;
                }
                layered_job(&mut rng, &widths, *max_tasks, 0.05, &params.durations, *duration_scale)
            }
        };
        jobs.push(JobDag {
            job_id,
            arrival_time: t,
            stages,
            edges,
        });
    }
    WorkloadSpec::new(jobs)
}

fn template_job(
    rng: &mut ChaCha8Rng,
    scales: &[TpchScale],
    multiplier: f64,
    sigma: f64,
) -> (Vec<StageSpec>, Vec<(StageId, StageId)>) {
    let tpl = &TPCH_TEMPLATES[rng.random_range(0..TPCH_TEMPLATES.len())];
    let scale = scales[rng.random_range(0..scales.len())];
    let jitter = if sigma > 0.0 {
        let z: f64 = Normal::new(0.0, 1.0).unwrap().sample(rng);
        (sigma * z - 0.5 * sigma * sigma).exp()
    } else {
        1.0
    };
    let total = scale.mean_duration_s() * jitter * multiplier;
    let weight_sum: f64 = tpl.stages.iter().map(|&(_, w)| w).sum();
    let stages = tpl
        .stages
        .iter()
        .enumerate()
        .map(|(i, &(n, w))| StageSpec::uniform(i as StageId, n, total * w / weight_sum / n as f64))
        .collect();
    (stages, tpl.edges.to_vec())
}

fn layered_job(
    rng: &mut ChaCha8Rng,
    widths: &[u32],
    max_tasks: u32,
    extra_edge_prob: f64,
    durations: &DurationDist,
    scale: f64,
) -> (Vec<StageSpec>, Vec<(StageId, StageId)>) {
    let mut stages = Vec::new();
    let mut layers: Vec<Vec<StageId>> = Vec::new();
    let mut edges = Vec::new();
    for &w in widths {
        let mut layer = Vec::new();
        for _ in 0..w {
            let id = stages.len() as StageId;
            let n = rng.random_range(1..=max_tasks);
            let d = durations.sample(rng) * scale;
            stages.push(StageSpec::uniform(id, n, d));
            if let Some(prev) = layers.last() {
                let p = prev[rng.random_range(0..prev.len())];
                edges.push((p, id));
                for lower in &layers {
                    for &u in lower {
                        if u != p && rng.random_bool(extra_edge_prob) {
                            edges.push((u, id));
                        }
                    }
                }
            }
            layer.push(id);
        }
        layers.push(layer);
    }
    edges.sort_unstable();
    (stages, edges)
}

/// Integer draw from a power law with density ∝ x^-a on [lo, hi].
fn power_law(rng: &mut ChaCha8Rng, a: f64, lo: u32, hi: u32) -> u32 {
    if lo == hi {
        return lo;
    }
    let (lo_f, hi_f) = (lo as f64, hi as f64 + 1.0);
    let u: f64 = rng.random();
    let x = if (a - 1.0).abs() < 1e-12 {
        lo_f * (hi_f / lo_f).powf(u)
    } else {
        let e = 1.0 - a;
        (lo_f.powf(e) + u * (hi_f.powf(e) - lo_f.powf(e))).powf(1.0 / e)
    };
    (x.floor() as u32).clamp(lo, hi)
}
