//! Generation-synchronous executor on a virtual clock.
//!
//! Each loop iteration launches one generation: up to `slots` ready tasks,
//! retries first, then the current stage of each pipeline in pipeline order.
//! A generation costs scheduler time, launch time and the longest task it
//! holds. Stage barriers are evaluated after every generation, and the
//! evaluator hook may grow or stop the pipeline that just finished a stage.

mod backend;
mod evaluator;
mod model;
mod pilot;
mod timeline;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

pub use backend::{AttemptResult, Backend, GenerationInfo, LocalBackend, SimulatedBackend};
pub use evaluator::{AlwaysContinue, AppendPlan, StageContext, StageEvaluator, StagePlan};
pub use model::{DurationModel, OverheadModel};
pub use pilot::{generation_count, slots, PilotConfig};
pub use timeline::{
    measure_overheads, measure_overheads_micros, to_micros, to_seconds, write_overhead_csv, CampaignTimeline,
    Category, Event, EventKind, GenerationRecord, Micros, Outcome, OverheadBreakdown, OverheadMicros, OverheadRow,
    Segment, TaskRecord, TimelineError, OVERHEAD_CSV_HEADER,
};

use crate::lambda::Lambda;
use crate::protocol::{Pipeline, StageKind, TaskId, TaskState, WorkflowGraph};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CampaignError {
    #[error("invalid pilot: {0}")]
    InvalidPilot(String),
    #[error("walltime of {walltime_s} s exceeded at {at_s} s")]
    WalltimeExceeded { walltime_s: f64, at_s: f64, partial: Box<CampaignTimeline> },
    #[error("task {task} failed on its retry")]
    TaskFailedTwice { task: TaskId, partial: Box<CampaignTimeline> },
    #[error("pipeline {pipeline}: rejected evaluator plan: {reason}")]
    InvalidPlan { pipeline: u32, reason: String },
    #[error(transparent)]
    Timeline(#[from] TimelineError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignOutcome {
    pub timeline: CampaignTimeline,
    pub overheads: OverheadBreakdown,
    pub overheads_us: OverheadMicros,
    /// One record per task that ran, ordered by task id.
    pub records: Vec<TaskRecord>,
    /// Final state of the workflow, including appended stages.
    pub graph: WorkflowGraph,
    /// Reason per pipeline when it was terminated early.
    pub terminations: Vec<Option<String>>,
}

impl CampaignOutcome {
    /// Summed execution time of successful simulation attempts, the window-proportional cost.
    pub fn simulation_task_time_us(&self) -> Micros {
        let kinds: BTreeMap<TaskId, StageKind> = self
            .graph
            .pipelines
            .iter()
            .flat_map(|p| p.stages.iter().flat_map(|s| s.tasks.iter().map(|t| (t.id, t.kind))))
            .collect();
        self.records
            .iter()
            .filter(|r| kinds.get(&r.task_id).is_some_and(|k| k.is_simulation()))
            .map(|r| r.duration_us)
            .sum()
    }

    pub fn peak_concurrency(&self) -> usize {
        self.timeline.peak_concurrency()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct TaskRef {
    pipeline: usize,
    stage: usize,
    index: usize,
}

struct PipelineCursor {
    stage: usize,
    pending: VecDeque<usize>,
    outstanding: usize,
    finished: bool,
}

struct Engine<'a> {
    graph: WorkflowGraph,
    pilot: &'a PilotConfig,
    overheads: &'a OverheadModel,
    clock: Micros,
    timeline: CampaignTimeline,
    records: BTreeMap<TaskId, TaskRecord>,
    cursors: Vec<PipelineCursor>,
    terminations: Vec<Option<String>>,
}

impl Engine<'_> {
    fn segment(&mut self, duration: Micros, category: Category) {
        if duration == 0 {
            return;
        }
        let start_us = self.clock;
        self.clock += duration;
        self.timeline.segments.push(Segment { start_us, end_us: self.clock, category });
    }

    fn event(&mut self, kind: EventKind, pipeline: usize, stage_label: &str, task: Option<TaskId>, generation: Option<u32>) {
        self.timeline.events.push(Event {
            time_us: self.clock,
            kind,
            task_id: task,
            pipeline_id: self.graph.pipelines[pipeline].id,
            stage_label: stage_label.to_string(),
            generation,
        });
    }

    /// Makes `stage` current for pipeline `p`, or finishes the pipeline when none is left.
    fn enter_stage(&mut self, p: usize, stage: usize) {
        let n_stages = self.graph.pipelines[p].stages.len();
        if stage >= n_stages {
            self.cursors[p].finished = true;
            self.cursors[p].stage = stage;
            self.event(EventKind::PipelineComplete, p, "", None, None);
            return;
        }
        let n_tasks = self.graph.pipelines[p].stages[stage].tasks.len();
        self.cursors[p] =
            PipelineCursor { stage, pending: (0..n_tasks).collect(), outstanding: n_tasks, finished: false };
        let submit_time = self.clock;
        for t in &self.graph.pipelines[p].stages[stage].tasks {
            self.timeline.events.push(Event {
                time_us: submit_time,
                kind: EventKind::Submit,
                task_id: Some(t.id),
                pipeline_id: self.graph.pipelines[p].id,
                stage_label: t.stage_label.clone(),
                generation: None,
            });
        }
    }

    fn partial(&self) -> Box<CampaignTimeline> {
        Box::new(self.timeline.clone())
    }

    fn validate_plan(&self, p: usize, plan: &AppendPlan) -> Result<(), CampaignError> {
        let pipeline = &self.graph.pipelines[p];
        let reject = |reason: String| CampaignError::InvalidPlan { pipeline: pipeline.id, reason };
        let known: BTreeSet<Lambda> = pipeline.lambdas.iter().copied().collect();
        let mut fresh = BTreeSet::new();
        for l in &plan.new_lambdas {
            if known.contains(l) || !fresh.insert(*l) {
                return Err(reject(format!("window {l} already exists")));
            }
        }
        if let Some(cap) = pipeline.window_cap {
            if known.len() + fresh.len() > cap {
                return Err(reject(format!(
                    "{} windows would exceed the cap of {cap}",
                    known.len() + fresh.len()
                )));
            }
        }
        for stage in &plan.stages {
            if stage.tasks.is_empty() {
                return Err(reject(format!("stage {} has no tasks", stage.label)));
            }
            for t in &stage.tasks {
                if let Some(l) = t.lambda {
                    if !known.contains(&l) && !fresh.contains(&l) {
                        return Err(reject(format!("stage {} references unknown window {l}", stage.label)));
                    }
                }
            }
        }
        Ok(())
    }

    fn next_batch(&mut self, retries: &mut VecDeque<TaskRef>, slots: usize) -> Vec<(TaskRef, u32)> {
        let mut batch = Vec::new();
        while batch.len() < slots {
            match retries.pop_front() {
                Some(r) => batch.push((r, 2)),
                None => break,
            }
        }
        for (p, cursor) in self.cursors.iter_mut().enumerate() {
            if cursor.finished {
                continue;
            }
            while batch.len() < slots {
                match cursor.pending.pop_front() {
                    Some(index) => batch.push((TaskRef { pipeline: p, stage: cursor.stage, index }, 1)),
                    None => break,
                }
            }
        }
        batch
    }

    /// Runs the evaluator for every pipeline whose current stage just drained.
    fn close_stages(&mut self, evaluator: &mut Option<&mut dyn StageEvaluator>) -> Result<(), CampaignError> {
        for p in 0..self.cursors.len() {
            while !self.cursors[p].finished && self.cursors[p].outstanding == 0 {
                let stage = self.cursors[p].stage;
                let label = self.graph.pipelines[p].stages[stage].label.clone();
                self.event(EventKind::StageComplete, p, &label, None, None);
                let plan = match evaluator.as_deref_mut() {
                    None => StagePlan::Continue,
                    Some(ev) => {
                        let stage_records: Vec<TaskRecord> = self.graph.pipelines[p].stages[stage]
                            .tasks
                            .iter()
                            .filter_map(|t| self.records.get(&t.id).cloned())
                            .collect();
                        let ctx = StageContext {
                            pipeline: &self.graph.pipelines[p],
                            stage_index: stage,
                            records: &stage_records,
                            now_us: self.clock,
                        };
                        ev.on_stage_complete(&ctx)
                    }
                };
                match plan {
                    StagePlan::Continue => self.enter_stage(p, stage + 1),
                    StagePlan::Append(append) => {
                        self.validate_plan(p, &append)?;
                        self.segment(to_micros(self.overheads.evaluator_s), Category::Framework);
                        let pipeline: &mut Pipeline = &mut self.graph.pipelines[p];
                        pipeline.lambdas.extend(append.new_lambdas.iter().copied());
                        pipeline.lambdas.sort();
                        for draft in append.stages {
                            pipeline.push_stage(draft);
                        }
                        self.event(EventKind::StagesAppended, p, &label, None, None);
                        self.enter_stage(p, stage + 1);
                    }
                    StagePlan::Terminate(reason) => {
                        self.segment(to_micros(self.overheads.evaluator_s), Category::Framework);
                        self.event(EventKind::PipelineTerminated, p, &label, None, None);
                        self.cursors[p].finished = true;
                        self.terminations[p] = Some(reason);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Executes every pipeline of `graph` on the pilot.
///
/// Deterministic whenever the backend is. Generations wider than the
/// concurrency cap let the backend inject failures; a failed task is retried
/// once, at the head of the next generation.
pub fn run_campaign(
    graph: WorkflowGraph,
    pilot: &PilotConfig,
    overheads: &OverheadModel,
    backend: &mut dyn Backend,
    mut evaluator: Option<&mut dyn StageEvaluator>,
) -> Result<CampaignOutcome, CampaignError> {
    pilot.validate().map_err(CampaignError::InvalidPilot)?;
    let slots = slots(pilot);
    let walltime = to_micros(pilot.walltime);
    let n_pipelines = graph.pipelines.len();
    let mut engine = Engine {
        graph,
        pilot,
        overheads,
        clock: 0,
        timeline: CampaignTimeline::default(),
        records: BTreeMap::new(),
        cursors: (0..n_pipelines)
            .map(|_| PipelineCursor { stage: 0, pending: VecDeque::new(), outstanding: 0, finished: false })
            .collect(),
        terminations: vec![None; n_pipelines],
    };
    engine.segment(to_micros(overheads.framework_seconds(n_pipelines)), Category::Framework);
    for p in 0..n_pipelines {
        engine.enter_stage(p, 0);
    }
    engine.close_stages(&mut evaluator)?;

    let mut retries: VecDeque<TaskRef> = VecDeque::new();
    loop {
        let batch = engine.next_batch(&mut retries, slots);
        if batch.is_empty() {
            break;
        }
        let index = engine.timeline.generations.len() as u32;
        let width = batch.len();
        let n_retries = batch.iter().filter(|(_, a)| *a == 2).count();
        let info = GenerationInfo { index, width, over_cap: width > engine.pilot.concurrency_cap };
        let gen_start = engine.clock;

        engine.segment(to_micros(engine.overheads.c3 * width as f64), Category::Runtime);
        let launch = engine.pilot.launch_delay_per_task * width as f64 + engine.pilot.retry_penalty * n_retries as f64;
        engine.segment(to_micros(launch), Category::Launch);

        let results = {
            let tasks: Vec<&crate::protocol::Task> = batch
                .iter()
                .map(|(r, _)| &engine.graph.pipelines[r.pipeline].stages[r.stage].tasks[r.index])
                .collect();
            backend.execute(&info, &tasks)
        };
        assert_eq!(results.len(), width, "backend returned a result per attempt");

        let t_start = engine.clock;
        let mut failed_events = Vec::new();
        let mut done_events = Vec::new();
        let mut failures = 0;
        let mut span = 0;
        for (&(r, attempt), result) in batch.iter().zip(&results) {
            let task = &mut engine.graph.pipelines[r.pipeline].stages[r.stage].tasks[r.index];
            let id = task.id;
            let label = task.stage_label.clone();
            engine.timeline.events.push(Event {
                time_us: t_start,
                kind: EventKind::Start,
                task_id: Some(id),
                pipeline_id: id.pipeline,
                stage_label: label.clone(),
                generation: Some(index),
            });
            let submit = engine.records.get(&id).map_or(gen_start, |rec| rec.submit_us);
            if result.failed {
                failures += 1;
                task.state = TaskState::Failed;
                failed_events.push(Event {
                    time_us: t_start,
                    kind: EventKind::Failed,
                    task_id: Some(id),
                    pipeline_id: id.pipeline,
                    stage_label: label,
                    generation: Some(index),
                });
                let outcome = if attempt >= 2 { Outcome::Error } else { Outcome::FailedThenRetried };
                engine.records.insert(
                    id,
                    TaskRecord {
                        task_id: id,
                        submit_us: submit,
                        start_us: t_start,
                        end_us: t_start,
                        attempts: attempt,
                        outcome,
                        duration_us: 0,
                    },
                );
                if attempt >= 2 {
                    engine.timeline.events.append(&mut failed_events);
                    engine.timeline.generations.push(GenerationRecord {
                        index,
                        start_us: gen_start,
                        end_us: t_start,
                        width,
                        retries: n_retries,
                        failures,
                    });
                    return Err(CampaignError::TaskFailedTwice { task: id, partial: engine.partial() });
                }
                retries.push_back(r);
            } else {
                task.state = TaskState::Done;
                span = span.max(result.duration_us);
                let end = t_start + result.duration_us;
                let outcome = if attempt >= 2 { Outcome::FailedThenRetried } else { Outcome::Done };
                engine.records.insert(
                    id,
                    TaskRecord {
                        task_id: id,
                        submit_us: submit,
                        start_us: t_start,
                        end_us: end,
                        attempts: attempt,
                        outcome,
                        duration_us: result.duration_us,
                    },
                );
                done_events.push(Event {
                    time_us: end,
                    kind: EventKind::Done,
                    task_id: Some(id),
                    pipeline_id: id.pipeline,
                    stage_label: label,
                    generation: Some(index),
                });
                engine.cursors[r.pipeline].outstanding -= 1;
            }
        }
        done_events.sort_by_key(|e| e.time_us);
        engine.timeline.events.extend(failed_events);
        engine.timeline.events.extend(done_events);
        // A generation that only replays failures is launch cost, not task execution.
        let category = if n_retries < width { Category::TaskExecution } else { Category::Launch };
        engine.segment(span, category);
        engine.timeline.generations.push(GenerationRecord {
            index,
            start_us: gen_start,
            end_us: engine.clock,
            width,
            retries: n_retries,
            failures,
        });
        if engine.clock > walltime {
            return Err(CampaignError::WalltimeExceeded {
                walltime_s: pilot.walltime,
                at_s: to_seconds(engine.clock),
                partial: engine.partial(),
            });
        }
        engine.close_stages(&mut evaluator)?;
    }

    engine.timeline.complete = true;
    let overheads_us = measure_overheads_micros(&engine.timeline)?;
    Ok(CampaignOutcome {
        overheads: overheads_us.to_seconds(),
        overheads_us,
        timeline: engine.timeline,
        records: engine.records.into_values().collect(),
        graph: engine.graph,
        terminations: engine.terminations,
    })
}

/// [`run_campaign`] on the simulated backend.
pub fn run_simulated(
    graph: WorkflowGraph,
    pilot: &PilotConfig,
    durations: &DurationModel,
    overheads: &OverheadModel,
    evaluator: Option<&mut dyn StageEvaluator>,
    seed: u64,
) -> Result<CampaignOutcome, CampaignError> {
    let mut backend = SimulatedBackend::new(durations.clone(), pilot.failure_probability_over_cap, seed);
    run_campaign(graph, pilot, overheads, &mut backend, evaluator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{compile_protocol, LambdaSchedule, ProtocolSpec, StageKind, StageSpec, TimestepMode};

    fn ties(n: usize) -> WorkflowGraph {
        let specs: Vec<_> = (0..n)
            .map(|i| {
                ProtocolSpec::ties(&format!("t{i}"), "sys", TimestepMode::Scaling, LambdaSchedule::uniform(13).unwrap())
                    .without_analysis()
            })
            .collect();
        WorkflowGraph::from_protocols(&specs).unwrap()
    }

    #[test]
    fn single_task_ttc_equals_duration() {
        let mut spec = ProtocolSpec::esmacs("e", "sys", TimestepMode::Scaling).without_analysis();
        spec.replicas_per_member = Some(1);
        spec.sim_stages = vec![StageSpec::simulation("S1", StageKind::Production, 3200)];
        let g = compile_protocol(&spec).unwrap();
        let out = run_simulated(g, &PilotConfig::ideal(32), &DurationModel::default(), &OverheadModel::ZERO, None, 1)
            .unwrap();
        assert_eq!(out.overheads.total_time_to_completion, 40.0);
        assert_eq!(out.overheads.task_execution_time, 40.0);
    }

    #[test]
    fn generations_and_peak() {
        for (cores, gens, peak) in [(4160, 16, 130), (8320, 8, 260)] {
            let out = run_simulated(ties(8), &PilotConfig::with_cores(cores), &DurationModel::default(), &OverheadModel::default(), None, 5)
                .unwrap();
            assert_eq!(out.timeline.generations.len(), gens);
            assert_eq!(out.peak_concurrency(), peak);
            assert_eq!(out.timeline.failed_attempts(), 0);
        }
    }

    #[test]
    fn over_cap_generation_fails_and_retries_once() {
        let out = run_simulated(ties(8), &PilotConfig::with_cores(16640), &DurationModel::default(), &OverheadModel::default(), None, 5)
            .unwrap();
        assert_eq!(out.peak_concurrency(), 520);
        assert!(out.timeline.failed_attempts() > 0);
        assert!(out.records.iter().all(|r| r.attempts <= 2 && r.outcome != Outcome::Error));
        let retried = out.records.iter().filter(|r| r.attempts == 2).count();
        assert_eq!(retried, out.timeline.failed_attempts());
    }

    #[test]
    fn certain_failure_is_a_campaign_error() {
        let mut pilot = PilotConfig::with_cores(64);
        pilot.concurrency_cap = 0;
        pilot.failure_probability_over_cap = 1.0;
        let err = run_simulated(ties(1), &pilot, &DurationModel::default(), &OverheadModel::ZERO, None, 1).unwrap_err();
        assert!(matches!(err, CampaignError::TaskFailedTwice { .. }));
    }

    #[test]
    fn walltime_error_carries_partial_timeline() {
        let mut pilot = PilotConfig::with_cores(4160);
        pilot.walltime = 10.0;
        match run_simulated(ties(1), &pilot, &DurationModel::default(), &OverheadModel::ZERO, None, 1) {
            Err(CampaignError::WalltimeExceeded { partial, .. }) => assert!(!partial.events.is_empty()),
            other => panic!("unexpected {other:?}"),
        }
    }

    struct Stopper;
    impl StageEvaluator for Stopper {
        fn on_stage_complete(&mut self, ctx: &StageContext<'_>) -> StagePlan {
            if ctx.stage_index == 1 {
                StagePlan::Terminate("enough".into())
            } else {
                StagePlan::Continue
            }
        }
    }

    #[test]
    fn terminate_stops_the_pipeline() {
        let mut ev = Stopper;
        let out = run_simulated(ties(1), &PilotConfig::with_cores(4160), &DurationModel::default(), &OverheadModel::ZERO, Some(&mut ev), 1)
            .unwrap();
        assert_eq!(out.timeline.generations.len(), 2);
        assert_eq!(out.terminations[0].as_deref(), Some("enough"));
    }

    struct BadAppend;
    impl StageEvaluator for BadAppend {
        fn on_stage_complete(&mut self, _ctx: &StageContext<'_>) -> StagePlan {
            StagePlan::Append(AppendPlan { new_lambdas: vec![Lambda::ZERO], stages: vec![] })
        }
    }

    #[test]
    fn plan_with_existing_window_is_rejected() {
        let mut ev = BadAppend;
        let err = run_simulated(ties(1), &PilotConfig::with_cores(4160), &DurationModel::default(), &OverheadModel::ZERO, Some(&mut ev), 1)
            .unwrap_err();
        assert!(matches!(err, CampaignError::InvalidPlan { .. }));
    }
}
