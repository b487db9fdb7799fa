//! Latency simulation of slice-parallel context decoding.
//!
//! A grouped plan becomes one chain of slice tasks per group (slices of a
//! group run serially, groups are independent) plus one task for the
//! channels outside any group. The flat baseline is a single chain. Tasks
//! are list-scheduled on `P` identical workers.

use std::fmt::Write as _;

use thiserror::Error;

use crate::grouping::GroupingPlan;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("worker count must be at least 1")]
    NoWorkers,
    #[error("invalid cost model: {0}")]
    Cost(String),
    #[error("invalid task graph: {0}")]
    Dag(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceTask {
    pub id: usize,
    pub group: usize,
    pub slice: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub base_per_slice: f64,
    pub per_channel: f64,
    /// Added once when a group finishes; occupies no worker.
    pub sync_overhead: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            base_per_slice: 1.0,
            per_channel: 0.05,
            sync_overhead: 2.0,
        }
    }
}

impl CostModel {
    /// One time unit per slice, nothing else.
    pub fn unit() -> Self {
        Self {
            base_per_slice: 1.0,
            per_channel: 0.0,
            sync_overhead: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        let all = [self.base_per_slice, self.per_channel, self.sync_overhead];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ScheduleError::Cost(format!(
                "all terms must be finite and non-negative, got {all:?}"
            )));
        }
        Ok(())
    }

    pub fn task_cost(&self, t: &SliceTask) -> f64 {
        self.base_per_slice + self.per_channel * t.channels as f64
    }
}

/// Task graph whose edges always point from lower to higher task ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dag {
    tasks: Vec<SliceTask>,
    preds: Vec<Vec<usize>>,
}

impl Dag {
    pub fn new(tasks: Vec<SliceTask>, preds: Vec<Vec<usize>>) -> Result<Self, ScheduleError> {
        if tasks.len() != preds.len() {
            return Err(ScheduleError::Dag(
                "one predecessor list per task required".into(),
            ));
        }
        for (i, (t, ps)) in tasks.iter().zip(&preds).enumerate() {
            if t.id != i {
                return Err(ScheduleError::Dag(format!("task at {i} has id {}", t.id)));
            }
            if let Some(&p) = ps.iter().find(|&&p| p >= i) {
                return Err(ScheduleError::Dag(format!(
                    "edge {p} -> {i} is not forward"
                )));
            }
        }
        Ok(Self { tasks, preds })
    }

    /// One chain per entry; `chains[g][s]` is the channel count of slice `s`.
    pub fn from_chains(chains: &[Vec<usize>]) -> Self {
        let mut tasks = Vec::new();
        let mut preds = Vec::new();
        for (g, chain) in chains.iter().enumerate() {
            for (s, &channels) in chain.iter().enumerate() {
                let id = tasks.len();
                preds.push(if s == 0 { vec![] } else { vec![id - 1] });
                tasks.push(SliceTask {
                    id,
                    group: g,
                    slice: s,
                    channels,
                });
            }
        }
        Self { tasks, preds }
    }

    pub fn tasks(&self) -> &[SliceTask] {
        &self.tasks
    }

    pub fn preds(&self, id: usize) -> &[usize] {
        &self.preds[id]
    }

    pub fn edge_count(&self) -> usize {
        self.preds.iter().map(Vec::len).sum()
    }

    pub fn group_count(&self) -> usize {
        self.tasks.iter().map(|t| t.group + 1).max().unwrap_or(0)
    }

    pub fn total_channels(&self) -> usize {
        self.tasks.iter().map(|t| t.channels).sum()
    }

    pub fn total_work(&self, cost: &CostModel) -> f64 {
        self.tasks.iter().map(|t| cost.task_cost(t)).sum()
    }

    /// Longest dependency path ending in each group, ignoring sync.
    pub fn group_critical_paths(&self, cost: &CostModel) -> Vec<f64> {
        let mut finish = vec![0.0f64; self.tasks.len()];
        let mut out = vec![0.0f64; self.group_count()];
        for t in &self.tasks {
            let ready = self.preds[t.id]
                .iter()
                .map(|&p| finish[p])
                .fold(0.0, f64::max);
            finish[t.id] = ready + cost.task_cost(t);
            out[t.group] = out[t.group].max(finish[t.id]);
        }
        out
    }

    pub fn critical_path(&self, cost: &CostModel) -> f64 {
        self.group_critical_paths(cost)
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Single chain of `slices` tasks sharing `channels` as evenly as possible.
pub fn build_dag_flat(slices: usize, channels: usize) -> Dag {
    let chain: Vec<usize> = (0..slices)
        .map(|i| channels / slices + usize::from(i < channels % slices))
        .collect();
    Dag::from_chains(&[chain])
}

/// One chain per group plus a single task for the tail channels.
pub fn build_dag_grouped(plan: &GroupingPlan) -> Dag {
    let mut chains: Vec<Vec<usize>> = plan
        .groups
        .iter()
        .map(|g| g.slices.iter().map(Vec::len).collect())
        .collect();
    if !plan.tail.is_empty() {
        chains.push(vec![plan.tail.len()]);
    }
    Dag::from_chains(&chains)
}

/// Number of tasks a grouped plan produces; the natural flat slice count.
pub fn grouped_task_count(plan: &GroupingPlan) -> usize {
    plan.groups.len() * plan.slice_count + usize::from(!plan.tail.is_empty())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub task: usize,
    pub worker: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleReport {
    pub makespan: f64,
    /// Total work divided by makespan.
    pub speedup_vs_flat_serial: f64,
    pub total_work: f64,
    pub group_critical_paths: Vec<f64>,
    /// Indexed by task id.
    pub trace: Vec<TraceEntry>,
}

/// Greedy list scheduling: whenever workers are idle, ready tasks are
/// started in `(group, slice, id)` order on the lowest-numbered idle
/// workers. Each group's completion is delayed by `sync_overhead`.
pub fn simulate(
    dag: &Dag,
    cost: &CostModel,
    workers: usize,
) -> Result<ScheduleReport, ScheduleError> {
    if workers == 0 {
        return Err(ScheduleError::NoWorkers);
    }
    cost.validate()?;
    let n = dag.tasks.len();
    if let Some(t) = dag
        .tasks
        .iter()
        .find(|t| cost.task_cost(t).is_nan() || cost.task_cost(t) <= 0.0)
    {
        return Err(ScheduleError::Cost(format!("task {} has zero cost", t.id)));
    }
    let mut remaining: Vec<usize> = dag.preds.iter().map(Vec::len).collect();
    let mut succs = vec![Vec::new(); n];
    for (i, ps) in dag.preds.iter().enumerate() {
        for &p in ps {
            succs[p].push(i);
        }
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| remaining[i] == 0).collect();
    let mut running: Vec<Option<usize>> = vec![None; workers];
    let mut trace = vec![
        TraceEntry {
            task: 0,
            worker: 0,
            start: 0.0,
            end: 0.0
        };
        n
    ];
    let mut now = 0.0f64;
    let mut done = 0;
    let key = |i: usize| (dag.tasks[i].group, dag.tasks[i].slice, i);
    while done < n {
        ready.sort_by_key(|&i| std::cmp::Reverse(key(i)));
        for (w, slot) in running.iter_mut().enumerate() {
            if slot.is_none() {
                let Some(t) = ready.pop() else { break };
                let end = now + cost.task_cost(&dag.tasks[t]);
                trace[t] = TraceEntry {
                    task: t,
                    worker: w,
                    start: now,
                    end,
                };
                *slot = Some(t);
            }
        }
        let next = running
            .iter()
            .flatten()
            .map(|&t| trace[t].end)
            .fold(f64::INFINITY, f64::min);
        if !next.is_finite() {
            return Err(ScheduleError::Dag(
                "no runnable task; graph has a cycle".into(),
            ));
        }
        now = next;
        for slot in running.iter_mut() {
            if let Some(t) = *slot {
                if trace[t].end == now {
                    *slot = None;
                    done += 1;
                    for &s in &succs[t] {
                        remaining[s] -= 1;
                        if remaining[s] == 0 {
                            ready.push(s);
                        }
                    }
                }
            }
        }
    }
    let mut group_end = vec![0.0f64; dag.group_count()];
    for t in &dag.tasks {
        group_end[t.group] = group_end[t.group].max(trace[t.id].end);
    }
    let makespan = group_end
        .iter()
        .map(|e| e + cost.sync_overhead)
        .fold(0.0, f64::max);
    let total_work = dag.total_work(cost);
    Ok(ScheduleReport {
        makespan,
        speedup_vs_flat_serial: if makespan > 0.0 {
            total_work / makespan
        } else {
            1.0
        },
        total_work,
        group_critical_paths: dag.group_critical_paths(cost),
        trace,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRow {
    pub strategy: String,
    pub groups: usize,
    pub tasks: usize,
    pub total_work: f64,
    pub makespan: f64,
    pub speedup: f64,
}

/// Simulates each named DAG. Speedups are relative to running the same
/// work serially.
pub fn compare_strategies(
    dags: &[(String, Dag)],
    cost: &CostModel,
    workers: usize,
) -> Result<Vec<StrategyRow>, ScheduleError> {
    dags.iter()
        .map(|(name, dag)| {
            let r = simulate(dag, cost, workers)?;
            Ok(StrategyRow {
                strategy: name.clone(),
                groups: dag.group_count(),
                tasks: dag.tasks.len(),
                total_work: r.total_work,
                makespan: r.makespan,
                speedup: r.speedup_vs_flat_serial,
            })
        })
        .collect()
}

pub const STRATEGY_CSV_HEADER: &str = "strategy,groups,tasks,total_work,makespan,speedup";

pub fn strategies_csv(rows: &[StrategyRow]) -> String {
    let mut out = String::from(STRATEGY_CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.strategy, r.groups, r.tasks, r.total_work, r.makespan, r.speedup
        )
        .unwrap();
    }
    out
}

pub fn trace_csv(dag: &Dag, report: &ScheduleReport) -> String {
    let mut out = String::from("task,group,slice,worker,start,end\n");
    for (t, e) in dag.tasks.iter().zip(&report.trace) {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            t.id, t.group, t.slice, e.worker, e.start, e.end
        )
        .unwrap();
    }
    out
}
