//! Experiment configuration, trials with random trace offsets, parameter
//! sweeps, and self-describing run directories.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    self, AnalysisError, BoundReport, CsfReport, MetricsReport, NormalizedMetrics, SavingsDecomposition,
};
use crate::carbon::{self, synthetic, CarbonTrace, TraceError, TraceStats, SECONDS_PER_HOUR};
use crate::engine::{self, ClusterConfig, DeferralScope, ScheduleRecord, SimError, SimOptions};
use crate::par;
use crate::policy::{PolicyError, PolicySpec};
use crate::workload::{self, GeneratorParams, WorkloadError, WorkloadSpec};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("cannot access {path}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad trace file {path}")]
    TraceFile { path: PathBuf, source: TraceError },
    #[error("bad workload file {path}")]
    WorkloadFile { path: PathBuf, source: WorkloadError },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("bad JSON in {path}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("runs are not comparable: {0}")]
    Mismatch(String),
}

type Result<T> = std::result::Result<T, ExperimentError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn hour() -> f64 {
    SECONDS_PER_HOUR
}
fn default_lookahead_hours() -> f64 {
    48.0
}
fn yes() -> bool {
    true
}
fn one() -> u32 {
    1
}
fn week() -> usize {
    168
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TraceSource {
    File {
        path: PathBuf,
        /// Replays the file's values with this step instead of the stamped one.
        #[serde(default)]
        step_s: Option<f64>,
        #[serde(default)]
        wrap: bool,
    },
    SquareWave {
        low: f64,
        high: f64,
        period_steps: usize,
        n_steps: usize,
        #[serde(default = "hour")]
        step_s: f64,
    },
    Diurnal {
        seed: u64,
        #[serde(default)]
        n_steps: Option<usize>,
    },
}

impl TraceSource {
    pub fn load(&self) -> Result<CarbonTrace> {
        match self {
            Self::File { path, step_s, wrap } => {
                let f = fs::File::open(path).map_err(io_err(path))?;
                let mut t = carbon::load_trace(f).map_err(|source| ExperimentError::TraceFile {
                    path: path.clone(),
                    source,
                })?;
                if let Some(s) = step_s {
                    t = t.with_step(*s)?;
                }
                Ok(t.with_wrap(*wrap))
            }
            Self::SquareWave {
                low,
                high,
                period_steps,
                n_steps,
                step_s,
            } => Ok(synthetic::square_wave(*low, *high, *period_steps, *n_steps, *step_s)?),
            Self::Diurnal { seed, n_steps } => {
                let mut p = synthetic::DiurnalParams::default();
                if let Some(n) = n_steps {
                    p.n_steps = *n;
                }
                Ok(synthetic::diurnal(&p, *seed)?)
            }
        }
    }

    fn resolve(&mut self, base: &Path) {
        if let Self::File { path, .. } = self {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WorkloadSource {
    File {
        path: PathBuf,
    },
    /// Regenerated per trial from the trial seed.
    Generate {
        params: GeneratorParams,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    #[serde(default = "one")]
    pub count: u32,
    /// Start each trial at a uniformly random trace step.
    #[serde(default = "yes")]
    pub random_offset: bool,
    /// Steps kept free after the latest possible offset.
    #[serde(default = "week")]
    pub reserve_steps: usize,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            count: 1,
            random_offset: true,
            reserve_steps: week(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub cluster: ClusterConfig,
    pub trace: TraceSource,
    #[serde(default = "default_lookahead_hours")]
    pub lookahead_hours: f64,
    pub workload: WorkloadSource,
    pub policy: PolicySpec,
    /// Reference policy for normalized sweep metrics; inferred when absent.
    #[serde(default)]
    pub baseline: Option<PolicySpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub trials: TrialConfig,
    #[serde(default)]
    pub deferral_scope: DeferralScope,
    #[serde(default = "yes")]
    pub record_events: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// Reads a TOML (or `.json`) file; relative paths inside resolve
    /// against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| ExperimentError::Config(e.to_string()))?
        } else {
            Self::from_toml(&text)?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.trace.resolve(base);
        if let WorkloadSource::File { path: p } = &mut cfg.workload {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(out) = &mut cfg.output_dir {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.cluster.validate()?;
        self.policy.validate(self.cluster.executors)?;
        if let Some(b) = &self.baseline {
            b.validate(self.cluster.executors)?;
        }
        if !(self.lookahead_hours > 0.0 && self.lookahead_hours.is_finite()) {
            return Err(ExperimentError::Config("lookahead_hours must be > 0".into()));
        }
        if self.trials.count == 0 {
            return Err(ExperimentError::Config("trials.count must be >= 1".into()));
        }
        Ok(())
    }

    pub fn sim_options(&self) -> SimOptions {
        SimOptions {
            lookahead_s: self.lookahead_hours * SECONDS_PER_HOUR,
            deferral_scope: self.deferral_scope,
            record_events: self.record_events,
        }
    }

    /// The carbon-agnostic counterpart of the configured policy.
    pub fn baseline_policy(&self) -> PolicySpec {
        if let Some(b) = &self.baseline {
            return b.clone();
        }
        match &self.policy {
            PolicySpec::Pcaps { tau, .. } => PolicySpec::Pb { tau: *tau },
            PolicySpec::Cap { inner, .. } => (**inner).clone(),
            PolicySpec::GreenHadoop { .. } => PolicySpec::Fifo,
            other => other.clone(),
        }
    }
}

/// Inputs of one trial: its seed, trace offset, sliced trace and workload.
#[derive(Debug, Clone)]
pub struct TrialSetup {
    pub index: u32,
    pub seed: u64,
    pub offset: usize,
    pub trace: Arc<CarbonTrace>,
    pub workload: Arc<WorkloadSpec>,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub setup: TrialSetup,
    pub policy: PolicySpec,
    pub record: ScheduleRecord,
    pub metrics: MetricsReport,
}

/// A validated config with its trace (and fixed workload, if any) loaded once.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    trace: Arc<CarbonTrace>,
    workload: Option<Arc<WorkloadSpec>>,
}

impl Experiment {
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let trace = Arc::new(config.trace.load()?);
        let workload = match &config.workload {
            WorkloadSource::File { path } => {
                let f = fs::File::open(path).map_err(io_err(path))?;
                let w = workload::load_workload(f).map_err(|source| ExperimentError::WorkloadFile {
                    path: path.clone(),
                    source,
                })?;
                Some(Arc::new(w))
            }
            WorkloadSource::Generate { .. } => None,
        };
        Ok(Self {
            config,
            trace,
            workload,
        })
    }

    pub fn trace(&self) -> &CarbonTrace {
        &self.trace
    }

    pub fn trial_seed(&self, index: u32) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(index as u64);
        rng.next_u64()
    }

    pub fn trial_setup(&self, index: u32) -> Result<TrialSetup> {
        let seed = self.trial_seed(index);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = self.trace.len();
        let offset = if self.config.trials.random_offset {
            let span = if self.trace.wraps() {
                len
            } else {
                len.saturating_sub(self.config.trials.reserve_steps).max(1)
            };
            rng.random_range(0..span)
        } else {
            0
        };
        let trace = if offset == 0 {
            Arc::clone(&self.trace)
        } else {
            Arc::new(self.trace.slice_from(offset)?)
        };
        let workload = match (&self.workload, &self.config.workload) {
            (Some(w), _) => Arc::clone(w),
            (None, WorkloadSource::Generate { params }) => Arc::new(workload::generate_workload(params, seed)?),
            (None, WorkloadSource::File { .. }) => unreachable!("file workloads load in prepare"),
        };
        Ok(TrialSetup {
            index,
            seed,
            offset,
            trace,
            workload,
        })
    }

    pub fn run_policy(&self, setup: &TrialSetup, policy: &PolicySpec) -> Result<TrialOutcome> {
        let mut p = policy.build(&setup.trace, setup.seed)?;
        let record = engine::simulate(
            &self.config.cluster,
            &setup.workload,
            &setup.trace,
            &mut p,
            &self.config.sim_options(),
        )?;
        let metrics = analysis::compute_metrics(&record, &setup.trace, self.config.cluster.power_per_executor_kw)?;
        Ok(TrialOutcome {
            setup: setup.clone(),
            policy: policy.clone(),
            record,
            metrics,
        })
    }

    pub fn run_trial(&self, index: u32) -> Result<TrialOutcome> {
        self.run_policy(&self.trial_setup(index)?, &self.config.policy)
    }

    /// All configured trials, in parallel when enabled.
    pub fn run_trials(&self) -> Result<Vec<TrialOutcome>> {
        let idx: Vec<u32> = (0..self.config.trials.count).collect();
        par::map(&idx, |&i| self.run_trial(i)).into_iter().collect()
    }

    /// Evaluates every axis point and the baseline on each trial index.
    pub fn sweep(&self, axis: &SweepAxis, trials: &[u32]) -> Result<SweepSummary> {
        self.sweep_with(axis, trials, |jobs, f| par::map(jobs, f))
    }

    pub fn sweep_sequential(&self, axis: &SweepAxis, trials: &[u32]) -> Result<SweepSummary> {
        self.sweep_with(axis, trials, |jobs, f| par::map_sequential(jobs, f))
    }

    fn sweep_with<M>(&self, axis: &SweepAxis, trials: &[u32], map: M) -> Result<SweepSummary>
    where
        M: Fn(
            &[(u32, Option<usize>)],
            &(dyn Fn(&(u32, Option<usize>)) -> Result<MetricsReport> + Sync),
        ) -> Vec<Result<MetricsReport>>,
    {
        let policies = axis.policies(&self.config.policy)?;
        let baseline = self.config.baseline_policy();
        let setups: Vec<TrialSetup> = trials.iter().map(|&i| self.trial_setup(i)).collect::<Result<_>>()?;
        let mut jobs: Vec<(u32, Option<usize>)> = Vec::new();
        for (s, _) in setups.iter().enumerate() {
            jobs.push((s as u32, None));
            for p in 0..policies.len() {
                jobs.push((s as u32, Some(p)));
            }
        }
        let run = |&(s, p): &(u32, Option<usize>)| -> Result<MetricsReport> {
            let policy = p.map_or(&baseline, |i| &policies[i]);
            Ok(self.run_policy(&setups[s as usize], policy)?.metrics)
        };
        let results: Vec<MetricsReport> = map(&jobs, &run).into_iter().collect::<Result<_>>()?;
        let per = policies.len() + 1;
        let mut points = Vec::with_capacity(policies.len());
        for (p, policy) in policies.iter().enumerate() {
            let mut samples = Vec::with_capacity(trials.len());
            for (s, &trial) in trials.iter().enumerate() {
                let base = &results[s * per];
                let m = &results[s * per + 1 + p];
                samples.push(SweepSample {
                    trial,
                    footprint_g: m.footprint_g,
                    ect: m.ect,
                    avg_jct: m.avg_jct,
                    normalized: analysis::normalize(m, base),
                });
            }
            points.push(SweepPoint::new(axis.name(), axis.value(p), policy.label(), samples));
        }
        Ok(SweepSummary {
            baseline: baseline.label(),
            points,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "kebab-case")]
pub enum SweepAxis {
    Gamma(Vec<f64>),
    B(Vec<u32>),
    Theta(Vec<f64>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Gamma(_) => "gamma",
            Self::B(_) => "B",
            Self::Theta(_) => "theta",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Gamma(v) | Self::Theta(v) => v.len(),
            Self::B(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn value(&self, i: usize) -> f64 {
        match self {
            Self::Gamma(v) | Self::Theta(v) => v[i],
            Self::B(v) => v[i] as f64,
        }
    }

    /// The configured policy with the swept knob set to each value.
    pub fn policies(&self, template: &PolicySpec) -> Result<Vec<PolicySpec>> {
        let wrong = || {
            ExperimentError::Config(format!(
                "sweep axis {} does not apply to policy {}",
                self.name(),
                template.label()
            ))
        };
        (0..self.len())
            .map(|i| {
                let mut p = template.clone();
                match (self, &mut p) {
                    (Self::Gamma(v), PolicySpec::Pcaps { gamma, .. }) => *gamma = v[i],
                    (Self::B(v), PolicySpec::Cap { b, .. }) => *b = v[i],
                    (Self::Theta(v), PolicySpec::GreenHadoop { theta, .. }) => *theta = v[i],
                    _ => return Err(wrong()),
                }
                Ok(p)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSample {
    pub trial: u32,
    pub footprint_g: f64,
    pub ect: f64,
    pub avg_jct: f64,
    pub normalized: NormalizedMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Self {
        let xs: Vec<f64> = xs.into_iter().collect();
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: String,
    pub value: f64,
    pub policy: String,
    pub footprint_g: MeanStd,
    pub ect: MeanStd,
    pub avg_jct: MeanStd,
    pub norm_footprint: MeanStd,
    pub norm_ect: MeanStd,
    pub norm_avg_jct: MeanStd,
    pub samples: Vec<SweepSample>,
}

impl SweepPoint {
    fn new(axis: &str, value: f64, policy: String, samples: Vec<SweepSample>) -> Self {
        let stat = |f: fn(&SweepSample) -> f64| MeanStd::of(samples.iter().map(f));
        Self {
            axis: axis.into(),
            value,
            policy,
            footprint_g: stat(|s| s.footprint_g),
            ect: stat(|s| s.ect),
            avg_jct: stat(|s| s.avg_jct),
            norm_footprint: stat(|s| s.normalized.footprint),
            norm_ect: stat(|s| s.normalized.ect),
            norm_avg_jct: stat(|s| s.normalized.avg_jct),
            samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub baseline: String,
    pub points: Vec<SweepPoint>,
}

impl SweepSummary {
    pub fn write_csv<W: std::io::Write>(&self, sink: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "axis",
            "value",
            "policy",
            "baseline",
            "n",
            "footprint_g_mean",
            "footprint_g_std",
            "ect_mean",
            "ect_std",
            "avg_jct_mean",
            "avg_jct_std",
            "norm_footprint_mean",
            "norm_footprint_std",
            "norm_ect_mean",
            "norm_ect_std",
            "norm_avg_jct_mean",
            "norm_avg_jct_std",
        ])?;
        for p in &self.points {
            let mut row = vec![
                p.axis.clone(),
                p.value.to_string(),
                p.policy.clone(),
                self.baseline.clone(),
                p.samples.len().to_string(),
            ];
            for m in [
                p.footprint_g,
                p.ect,
                p.avg_jct,
                p.norm_footprint,
                p.norm_ect,
                p.norm_avg_jct,
            ] {
                row.push(m.mean.to_string());
                row.push(m.std.to_string());
            }
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-trial rows for plotting individual outcomes.
    pub fn write_samples_csv<W: std::io::Write>(&self, sink: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "axis",
            "value",
            "trial",
            "footprint_g",
            "ect",
            "avg_jct",
            "norm_footprint",
            "norm_ect",
            "norm_avg_jct",
        ])?;
        for p in &self.points {
            for s in &p.samples {
                w.write_record([
                    p.axis.clone(),
                    p.value.to_string(),
                    s.trial.to_string(),
                    s.footprint_g.to_string(),
                    s.ect.to_string(),
                    s.avg_jct.to_string(),
                    s.normalized.footprint.to_string(),
                    s.normalized.ect.to_string(),
                    s.normalized.avg_jct.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Contents of `config.json` in a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub policy: PolicySpec,
    pub trial: u32,
    pub seed: u64,
    pub trace_offset: usize,
}

pub const RUN_FILES: &[&str] = &[
    "config.json",
    "schedule.csv",
    "events.jsonl",
    "gantt.json",
    "metrics.json",
    "record.json",
    "workload.json",
    "trace.json",
];

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| ExperimentError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| ExperimentError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_err(path: &Path, e: csv::Error) -> ExperimentError {
    ExperimentError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

pub fn metrics_json(metrics: &MetricsReport) -> String {
    serde_json::to_string_pretty(metrics).expect("metrics serialize") + "\n"
}

/// Writes every artifact of one trial into `dir`.
pub fn write_run_dir(dir: &Path, config: &ExperimentConfig, outcome: &TrialOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = RunManifest {
        config: config.clone(),
        policy: outcome.policy.clone(),
        trial: outcome.setup.index,
        seed: outcome.setup.seed,
        trace_offset: outcome.setup.offset,
    };
    write_json(&dir.join("config.json"), &manifest)?;

    let p = dir.join("schedule.csv");
    let f = fs::File::create(&p).map_err(io_err(&p))?;
    outcome
        .record
        .write_schedule_csv(BufWriter::new(f))
        .map_err(|e| csv_err(&p, e))?;

    let p = dir.join("events.jsonl");
    let f = fs::File::create(&p).map_err(io_err(&p))?;
    outcome
        .record
        .write_events_jsonl(BufWriter::new(f))
        .map_err(io_err(&p))?;

    write_json(&dir.join("gantt.json"), &outcome.record.gantt_json())?;
    let p = dir.join("metrics.json");
    fs::write(&p, metrics_json(&outcome.metrics)).map_err(io_err(&p))?;
    write_json(&dir.join("record.json"), &outcome.record)?;
    write_json(&dir.join("workload.json"), &*outcome.setup.workload)?;
    write_json(&dir.join("trace.json"), &*outcome.setup.trace)?;
    Ok(())
}

/// Runs every configured trial and writes them under `out`. A single trial
/// goes straight into `out`; several go into `trial-NNN` subdirectories.
pub fn run_to_dir(config: &ExperimentConfig, out: &Path) -> Result<Vec<TrialOutcome>> {
    let exp = Experiment::prepare(config.clone())?;
    let outcomes = exp.run_trials()?;
    if outcomes.len() == 1 {
        write_run_dir(out, config, &outcomes[0])?;
    } else {
        for o in &outcomes {
            write_run_dir(&out.join(format!("trial-{:03}", o.setup.index)), config, o)?;
        }
    }
    Ok(outcomes)
}

#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub record: ScheduleRecord,
    pub workload: WorkloadSpec,
    pub trace: CarbonTrace,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        manifest: read_json(&dir.join("config.json"))?,
        record: read_json(&dir.join("record.json"))?,
        workload: read_json(&dir.join("workload.json"))?,
        trace: read_json(&dir.join("trace.json"))?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub metrics: MetricsReport,
    pub metrics_reproduced: bool,
    pub deferrals: usize,
    pub d_hat: f64,
    pub min_quota: u32,
    /// OPT and bound checks, only for instances small enough to solve exactly.
    pub opt: Option<f64>,
    pub bounds: Vec<BoundReport>,
}

fn tiny(workload: &WorkloadSpec, k: u32) -> bool {
    workload.num_tasks() as usize <= analysis::MAX_OPT_TASKS && k <= analysis::MAX_OPT_EXECUTORS
}

/// Recomputes a run directory's metrics from its record and trace.
pub fn analyze(dir: &Path) -> Result<AnalyzeReport> {
    let run = load_run(dir)?;
    let power = run.manifest.config.cluster.power_per_executor_kw;
    let metrics = analysis::compute_metrics(&run.record, &run.trace, power)?;
    let p = dir.join("metrics.json");
    let stored = fs::read_to_string(&p).map_err(io_err(&p))?;
    let k = run.record.executors;
    let d_hat = analysis::deferral_fraction(&run.record, &run.workload.jobs);
    let m = analysis::min_quota(&run.record);
    let (opt, bounds) = if tiny(&run.workload, k) {
        let opt = analysis::optimal_makespan(&run.workload.jobs, k)?;
        let bounds = match &run.manifest.policy {
            PolicySpec::Pcaps { .. } => vec![analysis::check_bound_thm1(&run.record, d_hat, k, opt)],
            PolicySpec::Cap { .. } => vec![analysis::check_bound_thm3(&run.record, m, k, opt)],
            PolicySpec::Fifo => vec![analysis::check_graham(&run.record, k, opt)],
            _ => Vec::new(),
        };
        (Some(opt), bounds)
    } else {
        (None, Vec::new())
    };
    Ok(AnalyzeReport {
        metrics_reproduced: metrics_json(&metrics) == stored,
        metrics,
        deferrals: run.record.deferrals.len(),
        d_hat,
        min_quota: m,
        opt,
        bounds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub baseline_policy: String,
    pub aware_policy: String,
    pub baseline: MetricsReport,
    pub aware: MetricsReport,
    pub normalized: NormalizedMetrics,
    pub csf: CsfReport,
    pub savings_cap_form: SavingsDecomposition,
    pub savings_pcaps_form: SavingsDecomposition,
    pub d_hat: f64,
    pub min_quota: u32,
}

/// Compares two run directories over the same workload and trace.
pub fn compare(baseline_dir: &Path, aware_dir: &Path) -> Result<ComparisonReport> {
    let base = load_run(baseline_dir)?;
    let aware = load_run(aware_dir)?;
    if base.workload != aware.workload {
        return Err(ExperimentError::Mismatch(format!(
            "{} and {} ran different workloads",
            baseline_dir.display(),
            aware_dir.display()
        )));
    }
    if base.trace != aware.trace {
        return Err(ExperimentError::Mismatch(format!(
            "{} and {} ran against different trace slices",
            baseline_dir.display(),
            aware_dir.display()
        )));
    }
    if base.record.executors != aware.record.executors {
        return Err(ExperimentError::Mismatch("cluster sizes differ".into()));
    }
    let power = aware.manifest.config.cluster.power_per_executor_kw;
    let mb = analysis::compute_metrics(&base.record, &base.trace, power)?;
    let ma = analysis::compute_metrics(&aware.record, &aware.trace, power)?;
    Ok(ComparisonReport {
        baseline_policy: base.manifest.policy.label(),
        aware_policy: aware.manifest.policy.label(),
        normalized: analysis::normalize(&ma, &mb),
        csf: analysis::compute_csf(&base.record, &aware.record, None),
        savings_cap_form: analysis::savings_decomposition_cap(&base.record, &aware.record, &aware.trace, power)?,
        savings_pcaps_form: analysis::savings_decomposition_pcaps(&base.record, &aware.record, &aware.trace, power)?,
        d_hat: analysis::deferral_fraction(&aware.record, &aware.workload.jobs),
        min_quota: analysis::min_quota(&aware.record),
        baseline: mb,
        aware: ma,
    })
}

/// Loads a trace file and summarizes it.
pub fn validate_trace(path: &Path) -> Result<TraceStats> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let t = carbon::load_trace(f).map_err(|source| ExperimentError::TraceFile {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(t.stats())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ExperimentConfig {
        ExperimentConfig::from_toml(
            r#"
            seed = 3
            [cluster]
            executors = 4
            [trace]
            kind = "square-wave"
            low = 50.0
            high = 500.0
            period_steps = 6
            n_steps = 400
            [workload]
            kind = "generate"
            [workload.params]
            n_jobs = 4
            mean_interarrival_s = 600.0
            [workload.params.dag_model]
            kind = "layered-random"
            max_layers = 3
            max_width = 3
            max_tasks = 4
            [policy]
            name = "pcaps"
            gamma = 0.5
            [trials]
            count = 3
            "#,
        )
        .unwrap()
    }

    #[test]
    fn config_parses_with_defaults() {
        let c = config();
        assert_eq!(c.lookahead_hours, 48.0);
        assert_eq!(c.cluster.power_per_executor_kw, 1.0);
        assert_eq!(c.baseline_policy(), PolicySpec::pb());
        c.validate().unwrap();
    }

    #[test]
    fn trials_are_reproducible_and_distinct() {
        let exp = Experiment::prepare(config()).unwrap();
        let a = exp.run_trials().unwrap();
        let b = exp.run_trials().unwrap();
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.record, y.record);
            assert_eq!(x.setup.offset, y.setup.offset);
        }
        assert_ne!(a[0].setup.seed, a[1].setup.seed);
        assert!(a.iter().all(|o| o.setup.offset < 400 - 168));
    }

    #[test]
    fn gamma_zero_matches_baseline() {
        let exp = Experiment::prepare(config()).unwrap();
        let s = exp.sweep(&SweepAxis::Gamma(vec![0.0]), &[0, 1]).unwrap();
        assert_eq!(s.points[0].norm_footprint.mean, 1.0);
        assert_eq!(s.points[0].norm_footprint.std, 0.0);
        assert_eq!(s, exp.sweep_sequential(&SweepAxis::Gamma(vec![0.0]), &[0, 1]).unwrap());
    }

    #[test]
    fn axis_must_match_policy() {
        let exp = Experiment::prepare(config()).unwrap();
        assert!(exp.sweep(&SweepAxis::B(vec![2]), &[0]).is_err());
    }

    #[test]
    fn mean_std() {
        let m = MeanStd::of([1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.std, 1.0);
        assert_eq!(MeanStd::of([4.0]).std, 0.0);
    }
}
