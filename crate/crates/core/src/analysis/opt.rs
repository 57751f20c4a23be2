//! Exact minimum makespan for tiny instances, by two independent searches.

use super::AnalysisError;
use crate::workload::JobDag;

pub const MAX_OPT_TASKS: usize = 10;
pub const MAX_OPT_EXECUTORS: u32 = 4;

const EPS: f64 = 1e-9;

struct Instance {
    dur: Vec<f64>,
    preds: Vec<u32>,
    release: Vec<f64>,
    /// Longest path from the task to a sink, including the task.
    tail: Vec<f64>,
    /// Tasks with the same class are interchangeable.
    class: Vec<usize>,
}

fn flatten(jobs: &[JobDag], k: u32) -> Result<Instance, AnalysisError> {
    let n: usize = jobs.iter().map(|j| j.num_tasks() as usize).sum();
    if n > MAX_OPT_TASKS || k > MAX_OPT_EXECUTORS || k == 0 {
        return Err(AnalysisError::InstanceTooLarge {
            tasks: n,
            executors: k,
            max_tasks: MAX_OPT_TASKS,
            max_executors: MAX_OPT_EXECUTORS,
        });
    }
    let mut inst = Instance {
        dur: Vec::with_capacity(n),
        preds: Vec::with_capacity(n),
        release: Vec::with_capacity(n),
        tail: vec![0.0; n],
        class: Vec::with_capacity(n),
    };
    let mut stage_tasks: Vec<Vec<Vec<usize>>> = Vec::new();
    for job in jobs {
        job.validate()?;
        let mut per_stage = Vec::new();
        for s in &job.stages {
            let ids: Vec<usize> = (0..s.num_tasks)
                .map(|t| {
                    inst.dur.push(s.task_duration(t));
                    inst.release.push(job.arrival_time);
                    inst.preds.push(0);
                    inst.dur.len() - 1
                })
                .collect();
            per_stage.push(ids);
        }
        stage_tasks.push(per_stage);
    }
    for (j, job) in jobs.iter().enumerate() {
        let idx = job.stage_index();
        for &(p, c) in &job.edges {
            let mask: u32 = stage_tasks[j][idx[&p]].iter().map(|&t| 1u32 << t).sum();
            for &t in &stage_tasks[j][idx[&c]] {
                inst.preds[t] |= mask;
            }
        }
    }
    let succs: Vec<u32> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&s| inst.preds[s] & (1 << i) != 0)
                .map(|s| 1u32 << s)
                .sum()
        })
        .collect();
    for i in 0..n {
        let twin = (0..i).find(|&h| {
            inst.dur[h] == inst.dur[i]
                && inst.preds[h] == inst.preds[i]
                && succs[h] == succs[i]
                && inst.release[h] == inst.release[i]
        });
        inst.class.push(twin.map_or(i, |h| inst.class[h]));
    }
    // n <= 10, so a fixed-point sweep is cheaper than sorting
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..n {
            let succ_max = (0..n)
                .filter(|&s| inst.preds[s] & (1 << i) != 0)
                .map(|s| inst.tail[s])
                .fold(0.0, f64::max);
            let v = inst.dur[i] + succ_max;
            if v != inst.tail[i] {
                inst.tail[i] = v;
                changed = true;
            }
        }
    }
    Ok(inst)
}

struct Search<'a> {
    inst: &'a Instance,
    k: usize,
    all: u32,
    best: f64,
}

impl Search<'_> {
    fn lower_bound(&self, t: f64, started: u32, running: &[(usize, f64)]) -> f64 {
        let inst = self.inst;
        let mut lb = t;
        let mut work = 0.0;
        for &(i, end) in running {
            lb = lb.max(end + inst.tail[i] - inst.dur[i]);
            work += end - t;
        }
        for i in 0..inst.dur.len() {
            if started & (1 << i) == 0 {
                lb = lb.max(t.max(inst.release[i]) + inst.tail[i]);
                work += inst.dur[i];
            }
        }
        lb.max(t + work / self.k as f64)
    }

    fn canonical(&self, subset: u32, eligible: u32) -> bool {
        let inst = self.inst;
        let mut rest = subset;
        while rest != 0 {
            let i = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            for h in 0..i {
                if eligible & (1 << h) != 0 && subset & (1 << h) == 0 && inst.class[h] == inst.class[i] {
                    return false;
                }
            }
        }
        true
    }

    fn dfs(&mut self, t: f64, done: u32, started: u32, running: &[(usize, f64)]) {
        if done == self.all {
            self.best = self.best.min(t);
            return;
        }
        if self.lower_bound(t, started, running) >= self.best - EPS {
            return;
        }
        let inst = self.inst;
        let n = inst.dur.len();
        let eligible: u32 = (0..n)
            .filter(|&i| started & (1 << i) == 0 && inst.preds[i] & !done == 0 && inst.release[i] <= t)
            .map(|i| 1u32 << i)
            .sum();
        let free = self.k - running.len();
        let future_release = (0..n)
            .filter(|&i| started & (1 << i) == 0 && inst.release[i] > t)
            .map(|i| inst.release[i])
            .fold(f64::INFINITY, f64::min);

        let mut subsets: Vec<u32> = Vec::new();
        let mut s = eligible;
        loop {
            if (s.count_ones() as usize) <= free && self.canonical(s, eligible) {
                subsets.push(s);
            }
            if s == 0 {
                break;
            }
            s = (s - 1) & eligible;
        }
        // larger starts first so a good incumbent turns up early
        subsets.sort_by_key(|s| std::cmp::Reverse(s.count_ones()));

        for subset in subsets {
            if subset == 0 && running.is_empty() && future_release.is_infinite() {
                continue;
            }
            let mut next_running: Vec<(usize, f64)> = running.to_vec();
            let mut rest = subset;
            while rest != 0 {
                let i = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                next_running.push((i, t + inst.dur[i]));
            }
            let next_t = next_running.iter().map(|r| r.1).fold(future_release, f64::min);
            let mut next_done = done;
            next_running.retain(|&(i, end)| {
                if end <= next_t {
                    next_done |= 1 << i;
                    false
                } else {
                    true
                }
            });
            self.dfs(next_t, next_done, started | subset, &next_running);
        }
    }
}

/// Minimum non-preemptive makespan (from time 0) of the merged task set on
/// `k` executors, by branch-and-bound over event-time start decisions.
pub fn optimal_makespan(jobs: &[JobDag], k: u32) -> Result<f64, AnalysisError> {
    let inst = flatten(jobs, k)?;
    let n = inst.dur.len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut search = Search {
        inst: &inst,
        k: k as usize,
        all: (1u32 << n) - 1,
        best: f64::INFINITY,
    };
    search.dfs(0.0, 0, 0, &[]);
    Ok(search.best)
}

fn place(placed: &[(f64, f64)], est: f64, d: f64, k: usize) -> f64 {
    let mut candidates: Vec<f64> = std::iter::once(est)
        .chain(placed.iter().map(|p| p.1).filter(|&e| e > est))
        .collect();
    candidates.sort_by(f64::total_cmp);
    let load = |p: f64| placed.iter().filter(|iv| iv.0 <= p && p < iv.1).count();
    for s in candidates {
        let fits = load(s) < k
            && placed
                .iter()
                .filter(|iv| iv.0 > s && iv.0 < s + d)
                .all(|iv| load(iv.0) < k);
        if fits {
            return s;
        }
    }
    unreachable!("the latest end always has a free executor")
}

fn orders(
    inst: &Instance,
    k: usize,
    placed_mask: u32,
    ends: &mut Vec<f64>,
    placed: &mut Vec<(f64, f64)>,
    best: &mut f64,
) {
    let n = inst.dur.len();
    if placed.len() == n {
        let makespan = placed.iter().map(|p| p.1).fold(0.0, f64::max);
        *best = best.min(makespan);
        return;
    }
    for i in 0..n {
        if placed_mask & (1 << i) != 0 || inst.preds[i] & !placed_mask != 0 {
            continue;
        }
        let est = (0..n)
            .filter(|&p| inst.preds[i] & (1 << p) != 0)
            .map(|p| ends[p])
            .fold(inst.release[i], f64::max);
        let s = place(placed, est, inst.dur[i], k);
        ends[i] = s + inst.dur[i];
        placed.push((s, ends[i]));
        orders(inst, k, placed_mask | (1 << i), ends, placed, best);
        placed.pop();
    }
}

/// Second oracle: serial schedule generation with gap insertion over every
/// precedence-feasible task order.
pub fn optimal_makespan_by_orders(jobs: &[JobDag], k: u32) -> Result<f64, AnalysisError> {
    let inst = flatten(jobs, k)?;
    let n = inst.dur.len();
    let mut best = if n == 0 { 0.0 } else { f64::INFINITY };
    let mut ends = vec![0.0; n];
    orders(&inst, k as usize, 0, &mut ends, &mut Vec::new(), &mut best);
    Ok(best)
}
