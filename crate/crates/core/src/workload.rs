//! DAG jobs, workloads and graph utilities.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod generate;
mod templates;

pub use generate::{generate_workload, DagModel, DurationDist, GeneratorParams, TpchScale};
pub use templates::TPCH_TEMPLATES;

pub type JobId = u32;
pub type StageId = u32;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("job {job}: duplicate stage id {stage}")]
    DuplicateStage { job: JobId, stage: StageId },
    #[error("job {job}: edge {parent}->{child} references unknown stage {missing}")]
    DanglingEdge {
        job: JobId,
        parent: StageId,
        child: StageId,
        missing: StageId,
    },
    #[error("job {job}: self-loop on stage {stage}")]
    SelfLoop { job: JobId, stage: StageId },
    #[error("job {job}: duplicate edge {parent}->{child}")]
    DuplicateEdge {
        job: JobId,
        parent: StageId,
        child: StageId,
    },
    #[error("job {job}: cycle detected through stages {cycle:?}")]
    Cycle { job: JobId, cycle: Vec<StageId> },
    #[error("job {job}: stage {stage} {reason}")]
    InvalidStage { job: JobId, stage: StageId, reason: String },
    #[error("job {job}: {reason}")]
    InvalidJob { job: JobId, reason: String },
    #[error("duplicate job id {0}")]
    DuplicateJob(JobId),
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("workload schema error: {0}")]
    Schema(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A stage: a group of parallel sibling tasks.
///
/// `task_durations` holds either one duration per task or a single value
/// shared by every task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub stage_id: StageId,
    pub num_tasks: u32,
    pub task_durations: Vec<f64>,
}

impl StageSpec {
    pub fn uniform(stage_id: StageId, num_tasks: u32, duration: f64) -> Self {
        Self {
            stage_id,
            num_tasks,
            task_durations: vec![duration],
        }
    }

    pub fn task_duration(&self, task: u32) -> f64 {
        if self.task_durations.len() == 1 {
            self.task_durations[0]
        } else {
            self.task_durations[task as usize]
        }
    }

    pub fn durations(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.num_tasks).map(|i| self.task_duration(i))
    }

    /// Minimum span of the stage with unlimited executors.
    pub fn weight(&self) -> f64 {
        self.task_durations.iter().copied().fold(0.0, f64::max)
    }

    pub fn work(&self) -> f64 {
        self.durations().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobDag {
    pub job_id: JobId,
    pub arrival_time: f64,
    pub stages: Vec<StageSpec>,
    #[serde(default)]
    pub edges: Vec<(StageId, StageId)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub jobs: Vec<JobDag>,
}

/// Index-based adjacency for a validated job. Stage indices follow the order
/// of `JobDag::stages`.
#[derive(Debug, Clone)]
pub struct DagIndex {
    pub parents: Vec<Vec<usize>>,
    pub children: Vec<Vec<usize>>,
    pub topo_order: Vec<usize>,
}

impl JobDag {
    pub fn stage_index(&self) -> HashMap<StageId, usize> {
        self.stages.iter().enumerate().map(|(i, s)| (s.stage_id, i)).collect()
    }

    /// Checks every structural invariant and returns the adjacency index.
    pub fn validate(&self) -> Result<DagIndex, WorkloadError> {
        let job = self.job_id;
        if !(self.arrival_time >= 0.0 && self.arrival_time.is_finite()) {
            return Err(WorkloadError::InvalidJob {
                job,
                reason: format!("arrival time {} must be finite and >= 0", self.arrival_time),
            });
        }
        if self.stages.is_empty() {
            return Err(WorkloadError::InvalidJob {
                job,
                reason: "job has no stages".into(),
            });
        }
        let mut index = HashMap::new();
        for (i, s) in self.stages.iter().enumerate() {
            if index.insert(s.stage_id, i).is_some() {
                return Err(WorkloadError::DuplicateStage { job, stage: s.stage_id });
            }
            let bad = |reason: &str| WorkloadError::InvalidStage {
                job,
                stage: s.stage_id,
                reason: reason.to_string(),
            };
            if s.num_tasks == 0 {
                return Err(bad("has zero tasks"));
            }
            if s.task_durations.len() != 1 && s.task_durations.len() != s.num_tasks as usize {
                return Err(bad("duration list length does not match num_tasks"));
            }
            if s.task_durations.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
                return Err(bad("has a non-positive duration"));
            }
        }
        let n = self.stages.len();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        let mut seen = BTreeSet::new();
        for &(p, c) in &self.edges {
            if p == c {
                return Err(WorkloadError::SelfLoop { job, stage: p });
            }
            let pi = *index.get(&p).ok_or(WorkloadError::DanglingEdge {
                job,
                parent: p,
                child: c,
                missing: p,
            })?;
            let ci = *index.get(&c).ok_or(WorkloadError::DanglingEdge {
                job,
                parent: p,
                child: c,
                missing: c,
            })?;
            if !seen.insert((p, c)) {
                return Err(WorkloadError::DuplicateEdge {
                    job,
                    parent: p,
                    child: c,
                });
            }
            parents[ci].push(pi);
            children[pi].push(ci);
        }

        // Kahn's algorithm; lowest index first keeps the order deterministic.
        let mut indeg: Vec<usize> = parents.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut topo = Vec::with_capacity(n);
        while let Some(v) = ready.pop_first() {
            topo.push(v);
            for &c in &children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if topo.len() < n {
            let cycle = self.find_cycle(&children, &indeg);
            return Err(WorkloadError::Cycle { job, cycle });
        }
        Ok(DagIndex {
            parents,
            children,
            topo_order: topo,
        })
    }

    fn find_cycle(&self, children: &[Vec<usize>], indeg: &[usize]) -> Vec<StageId> {
        // Every node left with indegree > 0 lies on or downstream of a cycle;
        // walking backwards via remaining parents must revisit a node.
        let n = self.stages.len();
        let mut rem_parent = vec![None; n];
        for (p, cs) in children.iter().enumerate() {
            if indeg[p] == 0 {
                continue;
            }
            for &c in cs {
                if indeg[c] > 0 && rem_parent[c].is_none() {
                    rem_parent[c] = Some(p);
                }
            }
        }
        let Some(start) = (0..n).find(|&i| indeg[i] > 0) else {
            return Vec::new();
        };
        let mut pos = vec![usize::MAX; n];
        let mut path = Vec::new();
        let mut v = start;
        while pos[v] == usize::MAX {
            pos[v] = path.len();
            path.push(v);
            match rem_parent[v] {
                Some(p) => v = p,
                None => break,
            }
        }
        let mut cycle: Vec<StageId> = path[pos[v].min(path.len())..]
            .iter()
            .map(|&i| self.stages[i].stage_id)
            .collect();
        cycle.reverse();
        cycle
    }

    /// Longest path where each stage weighs its longest task.
    pub fn critical_path(&self) -> Result<f64, WorkloadError> {
        let idx = self.validate()?;
        Ok(downstream_critical_paths(self, &idx).into_iter().fold(0.0, f64::max))
    }

    /// Single-executor makespan: the sum of all task durations.
    pub fn total_work(&self) -> f64 {
        self.stages.iter().map(StageSpec::work).sum()
    }

    pub fn num_tasks(&self) -> u32 {
        self.stages.iter().map(|s| s.num_tasks).sum()
    }
}

/// For each stage, the heaviest stage-weight path from it to any sink, inclusive.
pub fn downstream_critical_paths(job: &JobDag, idx: &DagIndex) -> Vec<f64> {
    let mut cp = vec![0.0; job.stages.len()];
    for &v in idx.topo_order.iter().rev() {
        let tail = idx.children[v].iter().map(|&c| cp[c]).fold(0.0, f64::max);
        cp[v] = job.stages[v].weight() + tail;
    }
    cp
}

impl WorkloadSpec {
    /// Validates every job and sorts by arrival time (stable, ties keep file order).
    pub fn new(mut jobs: Vec<JobDag>) -> Result<Self, WorkloadError> {
        let mut ids = BTreeMap::new();
        for j in &jobs {
            j.validate()?;
            if ids.insert(j.job_id, ()).is_some() {
                return Err(WorkloadError::DuplicateJob(j.job_id));
            }
        }
        jobs.sort_by(|a, b| a.arrival_time.total_cmp(&b.arrival_time));
        Ok(Self { jobs })
    }

    pub fn total_work(&self) -> f64 {
        self.jobs.iter().map(JobDag::total_work).sum()
    }

    pub fn num_tasks(&self) -> u32 {
        self.jobs.iter().map(JobDag::num_tasks).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("workload serializes")
    }
}

pub fn load_workload<R: Read>(source: R) -> Result<WorkloadSpec, WorkloadError> {
    let raw: WorkloadSpec = serde_json::from_reader(source)?;
    WorkloadSpec::new(raw.jobs)
}

pub fn save_workload<W: Write>(spec: &WorkloadSpec, mut sink: W) -> Result<(), WorkloadError> {
    serde_json::to_writer_pretty(&mut sink, spec)?;
    sink.write_all(b"\n")?;
    Ok(())
}
