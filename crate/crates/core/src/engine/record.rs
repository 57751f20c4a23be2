use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::carbon::{merge_profile, BusyInterval};
use crate::workload::{JobId, StageId, WorkloadSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub job_id: JobId,
    pub stage_id: StageId,
    pub task: u32,
    pub executor: u32,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deferral {
    pub time: f64,
    pub job_id: JobId,
    pub stage_id: StageId,
    pub relative_importance: f64,
    pub carbon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuotaChange {
    pub time: f64,
    pub quota: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsChange {
    pub time: f64,
    pub intensity: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JobOutcome {
    pub job_id: JobId,
    pub arrival: f64,
    pub completion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum EventRecord {
    CarbonChange {
        time: f64,
        intensity: f64,
        lower: f64,
        upper: f64,
    },
    JobArrival {
        time: f64,
        job: JobId,
    },
    TaskStart {
        time: f64,
        job: JobId,
        stage: StageId,
        task: u32,
        executor: u32,
    },
    TaskCompletion {
        time: f64,
        job: JobId,
        stage: StageId,
        executor: u32,
    },
    JobCompletion {
        time: f64,
        job: JobId,
    },
    Deferral {
        time: f64,
        job: JobId,
        stage: StageId,
        relative_importance: f64,
        carbon: f64,
    },
    QuotaChange {
        time: f64,
        quota: u32,
    },
}

/// Complete history of one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRecord {
    pub executors: u32,
    pub assignments: Vec<Assignment>,
    pub deferrals: Vec<Deferral>,
    pub quota_history: Vec<QuotaChange>,
    pub carbon_bounds_history: Vec<BoundsChange>,
    pub jobs: Vec<JobOutcome>,
    #[serde(default)]
    pub events: Vec<EventRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecordViolation {
    Overlap {
        executor: u32,
        at: f64,
    },
    Precedence {
        job: JobId,
        stage: StageId,
        start: f64,
        parent_done: f64,
    },
    WorkMismatch {
        scheduled: f64,
        expected: f64,
    },
    MissingTask {
        job: JobId,
        stage: StageId,
        task: u32,
    },
    Capacity {
        at: f64,
        busy: f64,
    },
}

impl fmt::Display for RecordViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Overlap { executor, at } => write!(f, "executor {executor} double-booked at {at}"),
            Self::Precedence {
                job,
                stage,
                start,
                parent_done,
            } => write!(
                f,
                "job {job} stage {stage} starts at {start} before its parents finish at {parent_done}"
            ),
            Self::WorkMismatch { scheduled, expected } => {
                write!(f, "scheduled work {scheduled} differs from workload total {expected}")
            }
            Self::MissingTask { job, stage, task } => {
                write!(f, "job {job} stage {stage} task {task} never ran or ran twice")
            }
            Self::Capacity { at, busy } => write!(f, "{busy} executors busy at {at}"),
        }
    }
}

impl ScheduleRecord {
    pub fn new(executors: u32) -> Self {
        Self {
            executors,
            assignments: Vec::new(),
            deferrals: Vec::new(),
            quota_history: Vec::new(),
            carbon_bounds_history: Vec::new(),
            jobs: Vec::new(),
            events: Vec::new(),
        }
    }

    /// Time of the last completion (0 for an empty record).
    pub fn makespan(&self) -> f64 {
        self.jobs.iter().map(|j| j.completion).fold(0.0, f64::max)
    }

    pub fn first_arrival(&self) -> f64 {
        self.jobs
            .iter()
            .map(|j| j.arrival)
            .fold(f64::INFINITY, f64::min)
            .min(self.makespan())
    }

    pub fn min_quota(&self) -> Option<u32> {
        self.quota_history.iter().map(|q| q.quota).min()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    pub fn write_schedule_csv<W: Write>(&self, sink: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["job", "stage", "task", "executor", "start", "end"])?;
        for a in &self.assignments {
            w.write_record([
                a.job_id.to_string(),
                a.stage_id.to_string(),
                a.task.to_string(),
                a.executor.to_string(),
                a.start.to_string(),
                a.end.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_events_jsonl<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut sink, e)?;
            sink.write_all(b"\n")?;
        }
        Ok(())
    }

    /// One lane per executor, bars in start order.
    pub fn gantt_json(&self) -> serde_json::Value {
        let mut lanes: Vec<Vec<serde_json::Value>> = vec![Vec::new(); self.executors as usize];
        for a in &self.assignments {
            lanes[a.executor as usize].push(serde_json::json!({
                "job": a.job_id,
                "stage": a.stage_id,
                "task": a.task,
                "start": a.start,
                "end": a.end,
            }));
        }
        serde_json::json!({
            "executors": self.executors,
            "makespan": self.makespan(),
            "lanes": lanes
                .into_iter()
                .enumerate()
                .map(|(i, bars)| serde_json::json!({ "executor": i, "bars": bars }))
                .collect::<Vec<_>>(),
            "deferrals": self.deferrals,
            "quota": self.quota_history,
        })
    }

    /// Checks executor exclusivity, capacity, precedence and that every task
    /// ran exactly once for its stated duration.
    pub fn check_invariants(&self, workload: &WorkloadSpec) -> Result<(), RecordViolation> {
        let mut by_exec: Vec<Vec<&Assignment>> = vec![Vec::new(); self.executors as usize];
        for a in &self.assignments {
            by_exec[a.executor as usize].push(a);
        }
        for (e, list) in by_exec.iter_mut().enumerate() {
            list.sort_by(|x, y| x.start.total_cmp(&y.start));
            for w in list.windows(2) {
                if w[1].start < w[0].end {
                    return Err(RecordViolation::Overlap {
                        executor: e as u32,
                        at: w[1].start,
                    });
                }
            }
        }
        for seg in busy_profile(self) {
            if seg.count > self.executors as f64 {
                return Err(RecordViolation::Capacity {
                    at: seg.start,
                    busy: seg.count,
                });
            }
        }

        let mut seen: HashMap<(JobId, StageId, u32), &Assignment> = HashMap::new();
        let mut scheduled = 0.0;
        for a in &self.assignments {
            if seen.insert((a.job_id, a.stage_id, a.task), a).is_some() {
                return Err(RecordViolation::MissingTask {
                    job: a.job_id,
                    stage: a.stage_id,
                    task: a.task,
                });
            }
            scheduled += a.end - a.start;
        }
        let mut expected = 0.0;
        for job in &workload.jobs {
            expected += job.total_work();
            let mut finish: HashMap<StageId, f64> = HashMap::new();
            let mut first_start: HashMap<StageId, f64> = HashMap::new();
            for s in &job.stages {
                let mut done = f64::NEG_INFINITY;
                let mut begin = f64::INFINITY;
                for t in 0..s.num_tasks {
                    let Some(a) = seen.get(&(job.job_id, s.stage_id, t)) else {
                        return Err(RecordViolation::MissingTask {
                            job: job.job_id,
                            stage: s.stage_id,
                            task: t,
                        });
                    };
                    let want = s.task_duration(t);
                    if ((a.end - a.start) - want).abs() > 1e-9 * want.max(1.0) {
                        return Err(RecordViolation::WorkMismatch {
                            scheduled: a.end - a.start,
                            expected: want,
                        });
                    }
                    done = done.max(a.end);
                    begin = begin.min(a.start);
                }
                finish.insert(s.stage_id, done);
                first_start.insert(s.stage_id, begin);
            }
            for &(p, c) in &job.edges {
                if first_start[&c] < finish[&p] {
                    return Err(RecordViolation::Precedence {
                        job: job.job_id,
                        stage: c,
                        start: first_start[&c],
                        parent_done: finish[&p],
                    });
                }
            }
        }
        if (scheduled - expected).abs() > 1e-9 * expected.max(1.0) {
            return Err(RecordViolation::WorkMismatch { scheduled, expected });
        }
        Ok(())
    }
}

/// Piecewise-constant busy-executor count with change points at assignment
/// starts and ends.
pub fn busy_profile(record: &ScheduleRecord) -> Vec<BusyInterval> {
    merge_profile(record.assignments.iter().map(|a| BusyInterval {
        start: a.start,
        end: a.end,
        count: 1.0,
    }))
}
