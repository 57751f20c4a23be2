//! Deterministic discrete-event simulation of a K-executor cluster.
//!
//! Events at the same instant are applied together in (kind, sequence)
//! order, carbon changes first, then arrivals, then task completions, and
//! the policy is consulted once per such batch. Executors stay bound to a
//! stage and pull its tasks back to back until none are left unstarted.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::carbon::{CarbonBounds, CarbonTrace, SECONDS_PER_HOUR};
use crate::workload::{downstream_critical_paths, DagIndex, JobId, StageId, WorkloadSpec};

mod record;

pub use record::{
    busy_profile, Assignment, BoundsChange, Deferral, EventRecord, JobOutcome, QuotaChange, RecordViolation,
    ScheduleRecord,
};

pub const DEFAULT_LOOKAHEAD_S: f64 = 48.0 * SECONDS_PER_HOUR;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("carbon trace ends at {duration} s but jobs are still running")]
    TraceOverrun { duration: f64 },
    #[error("policy chose job {job} stage {stage}, which is not available")]
    UnavailableStage { job: JobId, stage: StageId },
    #[error("policy returned parallelism 0 for job {job} stage {stage}")]
    ZeroParallelism { job: JobId, stage: StageId },
    #[error("invalid cluster configuration: {0}")]
    InvalidCluster(String),
    #[error("invalid workload: {0}")]
    Workload(#[from] crate::workload::WorkloadError),
    #[error("carbon trace error: {0}")]
    Trace(#[from] crate::carbon::TraceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub executors: u32,
    #[serde(default = "default_power")]
    pub power_per_executor_kw: f64,
    #[serde(default)]
    pub executor_move_delay_s: f64,
    #[serde(default)]
    pub per_job_executor_cap: Option<u32>,
}

fn default_power() -> f64 {
    1.0
}

impl ClusterConfig {
    pub fn new(executors: u32) -> Self {
        Self {
            executors,
            power_per_executor_kw: 1.0,
            executor_move_delay_s: 0.0,
            per_job_executor_cap: None,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidCluster(m));
        if self.executors == 0 {
            return bad("executors must be >= 1".into());
        }
        if !(self.power_per_executor_kw > 0.0 && self.power_per_executor_kw.is_finite()) {
            return bad("power_per_executor_kw must be > 0".into());
        }
        if !(self.executor_move_delay_s >= 0.0 && self.executor_move_delay_s.is_finite()) {
            return bad("executor_move_delay_s must be >= 0".into());
        }
        match self.per_job_executor_cap {
            Some(c) if c == 0 || c > self.executors => {
                bad(format!("per_job_executor_cap {c} must lie in [1, {}]", self.executors))
            }
            _ => Ok(()),
        }
    }
}

/// What a deferral idles until the next scheduling event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeferralScope {
    /// Every idle executor waits for the next event.
    AllIdle,
    /// Only the executors freed by the current event wait; executors that
    /// were already idle get one more policy call.
    #[default]
    FreedOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    #[serde(default = "default_lookahead")]
    pub lookahead_s: f64,
    #[serde(default)]
    pub deferral_scope: DeferralScope,
    #[serde(default = "yes")]
    pub record_events: bool,
}

fn default_lookahead() -> f64 {
    DEFAULT_LOOKAHEAD_S
}
fn yes() -> bool {
    true
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            lookahead_s: DEFAULT_LOOKAHEAD_S,
            deferral_scope: DeferralScope::FreedOnly,
            record_events: true,
        }
    }
}

/// Current intensity and rolling forecast bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarbonSnapshot {
    pub intensity: f64,
    pub bounds: CarbonBounds,
    pub step: usize,
}

/// A stage in the available set: parents complete, tasks left to start.
#[derive(Debug, Clone, PartialEq)]
pub struct AvailableStage {
    pub job_id: JobId,
    pub stage_id: StageId,
    /// Arrival rank of the job (0 = earliest).
    pub job_rank: usize,
    pub arrival: f64,
    pub unstarted_tasks: u32,
    /// Heaviest remaining stage-weight path from this stage to a sink, inclusive.
    pub downstream_cp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobStatus {
    pub job_id: JobId,
    pub job_rank: usize,
    pub arrival: f64,
    /// Unstarted task seconds plus the remainder of running tasks.
    pub remaining_work: f64,
    pub executors: u32,
}

/// Read-only state handed to a policy at each invocation. `available` is
/// ordered by job arrival, then stage id.
#[derive(Debug)]
pub struct ClusterView<'a> {
    pub now: f64,
    pub executors: u32,
    pub idle: u32,
    pub busy: u32,
    pub carbon: CarbonSnapshot,
    pub available: &'a [AvailableStage],
    pub jobs: &'a [JobStatus],
}

impl ClusterView<'_> {
    pub fn job(&self, job_id: JobId) -> Option<&JobStatus> {
        self.jobs.iter().find(|j| j.job_id == job_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyDecision {
    Schedule {
        job_id: JobId,
        stage_id: StageId,
        parallelism: u32,
    },
    Idle,
}

pub trait SchedulingPolicy {
    fn name(&self) -> String;

    /// Called at every trace-step boundary before any scheduling at that instant.
    fn on_carbon_change(&mut self, _now: f64, _carbon: &CarbonSnapshot, _executors: u32) {}

    /// Resource quota currently in force, if the policy imposes one.
    fn quota(&self) -> Option<u32> {
        None
    }

    /// Chooses the next stage or idles. A policy that idles because of a
    /// carbon filter appends the sampled stage to `deferrals`.
    fn decide(&mut self, view: &ClusterView<'_>, deferrals: &mut Vec<Deferral>) -> PolicyDecision;
}

impl<P: SchedulingPolicy + ?Sized> SchedulingPolicy for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn on_carbon_change(&mut self, now: f64, carbon: &CarbonSnapshot, executors: u32) {
        (**self).on_carbon_change(now, carbon, executors)
    }
    fn quota(&self) -> Option<u32> {
        (**self).quota()
    }
    fn decide(&mut self, view: &ClusterView<'_>, deferrals: &mut Vec<Deferral>) -> PolicyDecision {
        (**self).decide(view, deferrals)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    CarbonChange = 0,
    JobArrival = 1,
    TaskCompletion = 2,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    kind: EventKind,
    seq: u64,
    payload: usize,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // reversed so BinaryHeap pops the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.kind.cmp(&self.kind))
            .then(other.seq.cmp(&self.seq))
    }
}

struct StageState {
    stage_id: StageId,
    num_tasks: u32,
    next_task: u32,
    done: u32,
    parents_left: usize,
}

struct JobState {
    dag: DagIndex,
    cp: Vec<f64>,
    stages: Vec<StageState>,
    stages_done: usize,
    executors: u32,
    unstarted_work: f64,
    arrived: bool,
    completion: Option<f64>,
}

#[derive(Clone, Copy)]
struct Running {
    job: usize,
    stage: usize,
    end: f64,
}

#[derive(Clone, Copy, Default)]
struct Executor {
    running: Option<Running>,
    last_job: Option<usize>,
}

struct Sim<'a> {
    cluster: &'a ClusterConfig,
    workload: &'a WorkloadSpec,
    trace: &'a CarbonTrace,
    opts: &'a SimOptions,
    jobs: Vec<JobState>,
    executors: Vec<Executor>,
    available: BTreeSet<(usize, StageId, usize)>,
    heap: BinaryHeap<Event>,
    seq: u64,
    carbon: CarbonSnapshot,
    record: ScheduleRecord,
    last_quota: Option<u32>,
    jobs_left: usize,
}

/// Runs one simulation to completion. The policy is consulted at every
/// scheduling event; the returned record is post-checked for capacity,
/// precedence and work conservation.
pub fn simulate(
    cluster: &ClusterConfig,
    workload: &WorkloadSpec,
    trace: &CarbonTrace,
    policy: &mut dyn SchedulingPolicy,
    opts: &SimOptions,
) -> Result<ScheduleRecord, SimError> {
    cluster.validate()?;
    if opts.lookahead_s.is_nan() || opts.lookahead_s <= 0.0 {
        return Err(SimError::InvalidCluster("lookahead must be > 0".into()));
    }
    let mut jobs = Vec::with_capacity(workload.jobs.len());
    for j in &workload.jobs {
        let dag = j.validate()?;
        let cp = downstream_critical_paths(j, &dag);
        let stages = j
            .stages
            .iter()
            .enumerate()
            .map(|(i, s)| StageState {
                stage_id: s.stage_id,
                num_tasks: s.num_tasks,
                next_task: 0,
                done: 0,
                parents_left: dag.parents[i].len(),
            })
            .collect();
        jobs.push(JobState {
            dag,
            cp,
            stages,
            stages_done: 0,
            executors: 0,
            unstarted_work: j.total_work(),
            arrived: false,
            completion: None,
        });
    }
    let mut sim = Sim {
        cluster,
        workload,
        trace,
        opts,
        jobs_left: jobs.len(),
        jobs,
        executors: vec![Executor::default(); cluster.executors as usize],
        available: BTreeSet::new(),
        heap: BinaryHeap::new(),
        seq: 0,
        carbon: CarbonSnapshot {
            intensity: 0.0,
            bounds: CarbonBounds { lower: 0.0, upper: 0.0 },
            step: 0,
        },
        record: ScheduleRecord::new(cluster.executors),
        last_quota: None,
    };
    sim.run(policy)?;
    let record = sim.record;
    if let Err(v) = record.check_invariants(workload) {
        panic!("simulation produced an inconsistent schedule: {v}");
    }
    Ok(record)
}

impl Sim<'_> {
    fn push(&mut self, time: f64, kind: EventKind, payload: usize) {
        self.seq += 1;
        self.heap.push(Event {
            time,
            kind,
            seq: self.seq,
            payload,
        });
    }

    fn run(&mut self, policy: &mut dyn SchedulingPolicy) -> Result<(), SimError> {
        if self.jobs.is_empty() {
            return Ok(());
        }
        self.push(0.0, EventKind::CarbonChange, 0);
        for (slot, j) in self.workload.jobs.iter().enumerate() {
            self.push(j.arrival_time, EventKind::JobArrival, slot);
        }
        while let Some(first) = self.heap.pop() {
            let now = first.time;
            let mut batch = vec![first];
            while self.heap.peek().is_some_and(|e| e.time == now) {
                batch.push(self.heap.pop().unwrap());
            }
            let mut overrun = false;
            let mut freed = 0u32;
            for ev in batch {
                match ev.kind {
                    EventKind::CarbonChange => {
                        if now >= self.trace.duration() {
                            overrun = true;
                        } else {
                            self.carbon_change(now, ev.payload, policy)?;
                        }
                    }
                    EventKind::JobArrival => self.arrive(now, ev.payload),
                    EventKind::TaskCompletion => {
                        if self.complete(now, ev.payload) {
                            freed += 1;
                        }
                    }
                }
            }
            if self.jobs_left == 0 {
                break;
            }
            if overrun {
                return Err(SimError::TraceOverrun {
                    duration: self.trace.duration(),
                });
            }
            self.invoke(now, freed, policy)?;
        }
        for (slot, j) in self.jobs.iter().enumerate() {
            let spec = &self.workload.jobs[slot];
            self.record.jobs.push(JobOutcome {
                job_id: spec.job_id,
                arrival: spec.arrival_time,
                completion: j.completion.expect("all jobs complete"),
            });
        }
        Ok(())
    }

    fn log(&mut self, ev: EventRecord) {
        if self.opts.record_events {
            self.record.events.push(ev);
        }
    }

    fn note_quota(&mut self, now: f64, policy: &dyn SchedulingPolicy) {
        let q = policy.quota().unwrap_or(self.cluster.executors);
        if self.last_quota != Some(q) {
            self.last_quota = Some(q);
            self.record.quota_history.push(QuotaChange { time: now, quota: q });
            self.log(EventRecord::QuotaChange { time: now, quota: q });
        }
    }

    fn carbon_change(&mut self, now: f64, step: usize, policy: &mut dyn SchedulingPolicy) -> Result<(), SimError> {
        let intensity = self.trace.value_at_step(step);
        let bounds = self.trace.bounds_over_window(now, self.opts.lookahead_s)?;
        self.carbon = CarbonSnapshot {
            intensity,
            bounds,
            step,
        };
        self.record.carbon_bounds_history.push(BoundsChange {
            time: now,
            intensity,
            lower: bounds.lower,
            upper: bounds.upper,
        });
        self.log(EventRecord::CarbonChange {
            time: now,
            intensity,
            lower: bounds.lower,
            upper: bounds.upper,
        });
        policy.on_carbon_change(now, &self.carbon, self.cluster.executors);
        self.note_quota(now, policy);
        self.push((step + 1) as f64 * self.trace.step(), EventKind::CarbonChange, step + 1);
        Ok(())
    }

    fn arrive(&mut self, now: f64, slot: usize) {
        let job = &mut self.jobs[slot];
        job.arrived = true;
        for (i, s) in job.stages.iter().enumerate() {
            if s.parents_left == 0 {
                self.available.insert((slot, s.stage_id, i));
            }
        }
        let job_id = self.workload.jobs[slot].job_id;
        self.log(EventRecord::JobArrival { time: now, job: job_id });
    }

    /// Returns true when the executor became idle.
    fn complete(&mut self, now: f64, exec: usize) -> bool {
        let run = self.executors[exec]
            .running
            .take()
            .expect("completion for busy executor");
        let (slot, si) = (run.job, run.stage);
        let job_id = self.workload.jobs[slot].job_id;
        let stage_id = self.jobs[slot].stages[si].stage_id;
        self.log(EventRecord::TaskCompletion {
            time: now,
            job: job_id,
            stage: stage_id,
            executor: exec as u32,
        });

        let stage = &mut self.jobs[slot].stages[si];
        stage.done += 1;
        if stage.done == stage.num_tasks {
            let children = self.jobs[slot].dag.children[si].clone();
            for c in children {
                let cs = &mut self.jobs[slot].stages[c];
                cs.parents_left -= 1;
                if cs.parents_left == 0 {
                    self.available.insert((slot, cs.stage_id, c));
                }
            }
            let job = &mut self.jobs[slot];
            job.stages_done += 1;
            if job.stages_done == job.stages.len() {
                job.completion = Some(now);
                self.jobs_left -= 1;
                self.log(EventRecord::JobCompletion { time: now, job: job_id });
            }
        }

        let stage = &self.jobs[slot].stages[si];
        if stage.next_task < stage.num_tasks {
            self.start_task(now, exec, slot, si, 0.0);
            false
        } else {
            self.jobs[slot].executors -= 1;
            true
        }
    }

    fn start_task(&mut self, now: f64, exec: usize, slot: usize, si: usize, delay: f64) {
        let spec = &self.workload.jobs[slot];
        let stage_spec = &spec.stages[si];
        let stage = &mut self.jobs[slot].stages[si];
        let task = stage.next_task;
        stage.next_task += 1;
        let dur = stage_spec.task_duration(task);
        if stage.next_task == stage.num_tasks {
            self.available.remove(&(slot, stage.stage_id, si));
        }
        self.jobs[slot].unstarted_work -= dur;
        let start = now + delay;
        let end = start + dur;
        self.executors[exec] = Executor {
            running: Some(Running {
                job: slot,
                stage: si,
                end,
            }),
            last_job: Some(slot),
        };
        self.record.assignments.push(Assignment {
            job_id: spec.job_id,
            stage_id: stage_spec.stage_id,
            task,
            executor: exec as u32,
            start,
            end,
        });
        self.log(EventRecord::TaskStart {
            time: start,
            job: spec.job_id,
            stage: stage_spec.stage_id,
            task,
            executor: exec as u32,
        });
        self.push(end, EventKind::TaskCompletion, exec);
    }

    fn busy(&self) -> u32 {
        self.executors.iter().filter(|e| e.running.is_some()).count() as u32
    }

    fn headroom(&self, slot: usize) -> u32 {
        match self.cluster.per_job_executor_cap {
            Some(cap) => cap.saturating_sub(self.jobs[slot].executors),
            None => u32::MAX,
        }
    }

    fn build_view_data(&self, now: f64) -> (Vec<AvailableStage>, Vec<JobStatus>) {
        let mut running_left = vec![0.0; self.jobs.len()];
        for e in &self.executors {
            if let Some(r) = e.running {
                running_left[r.job] += (r.end - now).max(0.0);
            }
        }
        let jobs = self
            .jobs
            .iter()
            .enumerate()
            .filter(|(_, j)| j.arrived && j.completion.is_none())
            .map(|(slot, j)| JobStatus {
                job_id: self.workload.jobs[slot].job_id,
                job_rank: slot,
                arrival: self.workload.jobs[slot].arrival_time,
                remaining_work: (j.unstarted_work + running_left[slot]).max(0.0),
                executors: j.executors,
            })
            .collect();
        let available = self
            .available
            .iter()
            .filter(|&&(slot, _, _)| self.headroom(slot) > 0)
            .map(|&(slot, stage_id, si)| {
                let j = &self.jobs[slot];
                AvailableStage {
                    job_id: self.workload.jobs[slot].job_id,
                    stage_id,
                    job_rank: slot,
                    arrival: self.workload.jobs[slot].arrival_time,
                    unstarted_tasks: j.stages[si].num_tasks - j.stages[si].next_task,
                    downstream_cp: j.cp[si],
                }
            })
            .collect();
        (available, jobs)
    }

    fn invoke(&mut self, now: f64, freed: u32, policy: &mut dyn SchedulingPolicy) -> Result<(), SimError> {
        let mut held = 0u32;
        let mut deferrals_this_event = 0u32;
        loop {
            let busy = self.busy();
            let idle = self.cluster.executors - busy;
            if idle <= held {
                break;
            }
            let (available, jobs) = self.build_view_data(now);
            if available.is_empty() {
                break;
            }
            let view = ClusterView {
                now,
                executors: self.cluster.executors,
                idle: idle - held,
                busy,
                carbon: self.carbon,
                available: &available,
                jobs: &jobs,
            };
            let mut deferrals = Vec::new();
            let decision = policy.decide(&view, &mut deferrals);
            for d in deferrals {
                self.log(EventRecord::Deferral {
                    time: d.time,
                    job: d.job_id,
                    stage: d.stage_id,
                    relative_importance: d.relative_importance,
                    carbon: d.carbon,
                });
                self.record.deferrals.push(d);
            }
            self.note_quota(now, policy);
            match decision {
                PolicyDecision::Idle => match self.opts.deferral_scope {
                    DeferralScope::AllIdle => break,
                    DeferralScope::FreedOnly => {
                        deferrals_this_event += 1;
                        let prompting = if deferrals_this_event == 1 && freed > 0 {
                            freed
                        } else {
                            idle - held
                        };
                        held += prompting.min(idle - held);
                    }
                },
                PolicyDecision::Schedule {
                    job_id,
                    stage_id,
                    parallelism,
                } => {
                    let Some(a) = available.iter().find(|a| a.job_id == job_id && a.stage_id == stage_id) else {
                        return Err(SimError::UnavailableStage {
                            job: job_id,
                            stage: stage_id,
                        });
                    };
                    if parallelism == 0 {
                        return Err(SimError::ZeroParallelism {
                            job: job_id,
                            stage: stage_id,
                        });
                    }
                    let slot = a.job_rank;
                    let n = parallelism
                        .min(idle - held)
                        .min(a.unstarted_tasks)
                        .min(self.headroom(slot));
                    self.assign(now, slot, stage_id, n);
                }
            }
        }
        Ok(())
    }

    fn assign(&mut self, now: f64, slot: usize, stage_id: StageId, n: u32) {
        let si = self.jobs[slot]
            .stages
            .iter()
            .position(|s| s.stage_id == stage_id)
            .expect("stage exists");
        let mut idle: Vec<usize> = (0..self.executors.len())
            .filter(|&e| self.executors[e].running.is_none())
            .collect();
        // executors already holding this job's state go first
        idle.sort_by_key(|&e| (self.executors[e].last_job != Some(slot), e));
        for &e in idle.iter().take(n as usize) {
            let delay = match self.executors[e].last_job {
                Some(prev) if prev != slot => self.cluster.executor_move_delay_s,
                _ => 0.0,
            };
            self.jobs[slot].executors += 1;
            self.start_task(now, e, slot, si, delay);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedulers::Fifo;
    use crate::workload::{JobDag, StageSpec};

    fn job(id: JobId, arrival: f64, stages: Vec<StageSpec>, edges: Vec<(StageId, StageId)>) -> JobDag {
        JobDag {
            job_id: id,
            arrival_time: arrival,
            stages,
            edges,
        }
    }

    fn flat_trace() -> CarbonTrace {
        CarbonTrace::hourly(vec![100.0; 48]).unwrap()
    }

    fn run_fifo(k: u32, jobs: Vec<JobDag>) -> ScheduleRecord {
        let w = WorkloadSpec::new(jobs).unwrap();
        simulate(
            &ClusterConfig::new(k),
            &w,
            &flat_trace(),
            &mut Fifo,
            &SimOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn single_task() {
        let r = run_fifo(1, vec![job(0, 0.0, vec![StageSpec::uniform(0, 1, 5.0)], vec![])]);
        assert_eq!(r.assignments.len(), 1);
        assert_eq!(r.makespan(), 5.0);
    }

    #[test]
    fn chain_uses_one_executor() {
        let r = run_fifo(
            4,
            vec![job(
                0,
                0.0,
                vec![StageSpec::uniform(0, 1, 3.0), StageSpec::uniform(1, 1, 4.0)],
                vec![(0, 1)],
            )],
        );
        assert_eq!(r.makespan(), 7.0);
        let peak = busy_profile(&r).iter().map(|i| i.count).fold(0.0, f64::max);
        assert_eq!(peak, 1.0);
    }

    #[test]
    fn two_waves() {
        let r = run_fifo(2, vec![job(0, 0.0, vec![StageSpec::uniform(0, 4, 2.0)], vec![])]);
        assert_eq!(r.makespan(), 4.0);
        assert_eq!(r.assignments.len(), 4);
    }

    #[test]
    fn trace_overrun_is_an_error() {
        let w = WorkloadSpec::new(vec![job(0, 0.0, vec![StageSpec::uniform(0, 1, 7200.0)], vec![])]).unwrap();
        let short = CarbonTrace::hourly(vec![1.0]).unwrap();
        let err = simulate(&ClusterConfig::new(1), &w, &short, &mut Fifo, &SimOptions::default());
        assert!(matches!(err, Err(SimError::TraceOverrun { .. })));
        // finishing exactly at the end of the trace is fine
        let exact = CarbonTrace::hourly(vec![1.0, 1.0]).unwrap();
        assert!(simulate(&ClusterConfig::new(1), &w, &exact, &mut Fifo, &SimOptions::default()).is_ok());
        // wrap-around replays the trace instead
        assert!(simulate(
            &ClusterConfig::new(1),
            &w,
            &short.with_wrap(true),
            &mut Fifo,
            &SimOptions::default()
        )
        .is_ok());
    }

    #[test]
    fn move_delay_applies_across_jobs() {
        let w = WorkloadSpec::new(vec![
            job(0, 0.0, vec![StageSpec::uniform(0, 1, 2.0)], vec![]),
            job(1, 1.0, vec![StageSpec::uniform(0, 1, 2.0)], vec![]),
        ])
        .unwrap();
        let mut c = ClusterConfig::new(1);
        c.executor_move_delay_s = 0.5;
        let r = simulate(&c, &w, &flat_trace(), &mut Fifo, &SimOptions::default()).unwrap();
        assert_eq!(r.assignments[1].start, 2.5);
        assert_eq!(r.makespan(), 4.5);
    }

    #[test]
    fn per_job_cap_limits_parallelism() {
        let w = WorkloadSpec::new(vec![job(0, 0.0, vec![StageSpec::uniform(0, 8, 1.0)], vec![])]).unwrap();
        let mut c = ClusterConfig::new(8);
        c.per_job_executor_cap = Some(2);
        let r = simulate(&c, &w, &flat_trace(), &mut Fifo, &SimOptions::default()).unwrap();
        assert_eq!(r.makespan(), 4.0);
        let mut bad = ClusterConfig::new(2);
        bad.per_job_executor_cap = Some(3);
        assert!(bad.validate().is_err());
    }

    struct Rogue;
    impl SchedulingPolicy for Rogue {
        fn name(&self) -> String {
            "rogue".into()
        }
        fn decide(&mut self, _v: &ClusterView<'_>, _d: &mut Vec<Deferral>) -> PolicyDecision {
            PolicyDecision::Schedule {
                job_id: 0,
                stage_id: 1,
                parallelism: 1,
            }
        }
    }

    #[test]
    fn unavailable_stage_rejected() {
        let w = WorkloadSpec::new(vec![job(
            0,
            0.0,
            vec![StageSpec::uniform(0, 1, 1.0), StageSpec::uniform(1, 1, 1.0)],
            vec![(0, 1)],
        )])
        .unwrap();
        let err = simulate(
            &ClusterConfig::new(1),
            &w,
            &flat_trace(),
            &mut Rogue,
            &SimOptions::default(),
        );
        assert!(matches!(err, Err(SimError::UnavailableStage { job: 0, stage: 1 })));
    }

    #[test]
    fn carbon_changes_recorded_each_step() {
        let r = run_fifo(
            1,
            vec![job(0, 0.0, vec![StageSpec::uniform(0, 1, 3.5 * 3600.0)], vec![])],
        );
        let times: Vec<f64> = r.carbon_bounds_history.iter().map(|b| b.time).collect();
        assert_eq!(times, vec![0.0, 3600.0, 7200.0, 10800.0]);
        assert_eq!(r.quota_history, vec![QuotaChange { time: 0.0, quota: 1 }]);
    }
}
