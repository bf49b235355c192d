//! Protocol descriptions and their compilation into pipelines of stages of tasks.
//!
//! A [`ProtocolSpec`] is declarative: which stages exist, how many replicas
//! each ensemble member runs, and (for alchemical protocols) which λ windows
//! are sampled. [`compile_protocol`] turns it into a [`WorkflowGraph`] holding a
//! single [`Pipeline`]; stages in a pipeline run strictly one after another,
//! tasks inside a stage have no dependencies on each other.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lambda::{Lambda, LambdaError};

/// Cores given to every MD task unless the pilot says otherwise.
pub const DEFAULT_CORES_PER_TASK: u32 = 32;
pub const DEFAULT_ESMACS_REPLICAS: u32 = 25;
pub const DEFAULT_TIES_REPLICAS: u32 = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("protocol name must not be empty")]
    EmptyName,
    #[error("protocol '{0}': TIES requires a lambda_schedule")]
    MissingLambdaSchedule(String),
    #[error("protocol '{0}': ESMACS must not carry a lambda_schedule")]
    UnexpectedLambdaSchedule(String),
    #[error("protocol '{0}': at least one simulation stage is required")]
    NoSimulationStages(String),
    #[error("protocol '{protocol}': stage {stage} is listed as a simulation stage but has kind {kind}")]
    MisplacedStage { protocol: String, stage: String, kind: StageKind },
    #[error("protocol '{protocol}': simulation stage {stage} needs a positive timestep count")]
    NonPositiveTimesteps { protocol: String, stage: String },
    #[error("protocol '{protocol}': analysis stage {stage} must have timesteps = 0")]
    AnalysisTimesteps { protocol: String, stage: String },
    #[error("protocol '{protocol}': analysis stage {stage} needs an explicit positive task_width")]
    MissingTaskWidth { protocol: String, stage: String },
    #[error("protocol '{protocol}': global analysis stage {stage} must have task_width = 1")]
    GlobalAnalysisWidth { protocol: String, stage: String },
    #[error("protocol '{protocol}': stage {stage} declares task_width {declared} but the protocol implies {derived}")]
    WidthMismatch { protocol: String, stage: String, declared: u32, derived: u32 },
    #[error("protocol '{protocol}': duplicate stage label {stage}")]
    DuplicateStageLabel { protocol: String, stage: String },
    #[error("protocol '{0}': replicas_per_member must be positive")]
    NoReplicas(String),
    #[error("invalid lambda schedule: {0}")]
    Schedule(#[from] ScheduleError),
    #[error("protocol '{protocol}': invalid adaptive config: {reason}")]
    Adaptive { protocol: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error(transparent)]
    Lambda(#[from] LambdaError),
    #[error("schedule must start at 0.0 and end at 1.0")]
    NotSpanning,
    #[error("schedule needs at least two windows")]
    TooShort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProtocolKind {
    Esmacs,
    Ties,
    Custom,
}

impl ProtocolKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolKind::Esmacs => "ESMACS",
            ProtocolKind::Ties => "TIES",
            ProtocolKind::Custom => "CUSTOM",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StageKind {
    Minimization,
    Equilibration,
    Production,
    Analysis,
    GlobalAnalysis,
}

impl StageKind {
    pub fn is_simulation(self) -> bool {
        matches!(self, StageKind::Minimization | StageKind::Equilibration | StageKind::Production)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::Minimization => "MINIMIZATION",
            StageKind::Equilibration => "EQUILIBRATION",
            StageKind::Production => "PRODUCTION",
            StageKind::Analysis => "ANALYSIS",
            StageKind::GlobalAnalysis => "GLOBAL_ANALYSIS",
        }
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub label: String,
    pub kind: StageKind,
    pub timesteps: u64,
    /// Required for analysis stages; derived from the protocol for simulation stages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_width: Option<u32>,
}

impl StageSpec {
    pub fn simulation(label: &str, kind: StageKind, timesteps: u64) -> Self {
        Self { label: label.to_string(), kind, timesteps, task_width: None }
    }

    pub fn analysis(label: &str, kind: StageKind, task_width: u32) -> Self {
        Self { label: label.to_string(), kind, timesteps: 0, task_width: Some(task_width) }
    }
}

/// Sorted, duplicate-free λ windows spanning [0, 1].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub struct LambdaSchedule {
    lambdas: Vec<Lambda>,
}

#[derive(Serialize, Deserialize)]
struct RawSchedule {
    lambdas: Vec<f64>,
}

impl TryFrom<RawSchedule> for LambdaSchedule {
    type Error = ScheduleError;
    fn try_from(raw: RawSchedule) -> Result<Self, Self::Error> {
        LambdaSchedule::new(&raw.lambdas)
    }
}

impl From<LambdaSchedule> for RawSchedule {
    fn from(s: LambdaSchedule) -> Self {
        RawSchedule { lambdas: s.lambdas.iter().map(|l| l.value()).collect() }
    }
}

impl LambdaSchedule {
    /// Canonicalizes: rounds to 3 decimals, sorts, drops duplicates.
    pub fn new(values: &[f64]) -> Result<Self, ScheduleError> {
        let set = values.iter().map(|&v| Lambda::new(v)).collect::<Result<BTreeSet<_>, _>>()?;
        Self::from_lambdas(set)
    }

    pub fn from_lambdas(lambdas: impl IntoIterator<Item = Lambda>) -> Result<Self, ScheduleError> {
        let lambdas: Vec<Lambda> =
            lambdas.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        if lambdas.len() < 2 {
            return Err(ScheduleError::TooShort);
        }
        if lambdas[0] != Lambda::ZERO || lambdas[lambdas.len() - 1] != Lambda::ONE {
            return Err(ScheduleError::NotSpanning);
        }
        Ok(Self { lambdas })
    }

    pub fn uniform(n: usize) -> Result<Self, ScheduleError> {
        Self::from_lambdas(Lambda::uniform(n))
    }

    pub fn lambdas(&self) -> &[Lambda] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

fn default_initial_lambdas() -> LambdaSchedule {
    LambdaSchedule::new(&[0.0, 0.5, 1.0]).expect("static schedule")
}
fn default_production_substages() -> u32 {
    4
}
fn default_substage_timesteps() -> u64 {
    500_000
}
fn default_termination_tau() -> f64 {
    0.5
}
fn default_termination_threshold() -> f64 {
    0.01
}
fn default_min_checkpoints() -> u32 {
    2
}
fn default_max_total_windows() -> usize {
    21
}
fn default_epsilon() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    /// Acceptable integration error of ΔG, kcal/mol.
    #[serde(default = "default_epsilon")]
    pub error_threshold_epsilon: f64,
    #[serde(default = "default_initial_lambdas")]
    pub initial_lambdas: LambdaSchedule,
    #[serde(default = "default_production_substages")]
    pub production_substages: u32,
    #[serde(default = "default_substage_timesteps")]
    pub substage_timesteps: u64,
    /// Checkpoint interval in ns of simulated time.
    #[serde(default = "default_termination_tau")]
    pub termination_tau: f64,
    /// kcal/mol
    #[serde(default = "default_termination_threshold")]
    pub termination_threshold: f64,
    #[serde(default = "default_min_checkpoints")]
    pub min_checkpoints_before_termination: u32,
    #[serde(default = "default_max_total_windows")]
    pub max_total_windows: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            error_threshold_epsilon: default_epsilon(),
            initial_lambdas: default_initial_lambdas(),
            production_substages: default_production_substages(),
            substage_timesteps: default_substage_timesteps(),
            termination_tau: default_termination_tau(),
            termination_threshold: default_termination_threshold(),
            min_checkpoints_before_termination: default_min_checkpoints(),
            max_total_windows: default_max_total_windows(),
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.error_threshold_epsilon > 0.0 && self.error_threshold_epsilon.is_finite()) {
            return Err("error_threshold_epsilon must be positive".into());
        }
        if self.production_substages < 1 {
            return Err("production_substages must be at least 1".into());
        }
        if self.substage_timesteps == 0 {
            return Err("substage_timesteps must be positive".into());
        }
        if !(self.termination_tau > 0.0 && self.termination_tau.is_finite()) {
            return Err("termination_tau must be positive".into());
        }
        if !(self.termination_threshold >= 0.0) {
            return Err("termination_threshold must be non-negative".into());
        }
        if self.max_total_windows < self.initial_lambdas.len() {
            return Err(format!(
                "max_total_windows {} is below the {} initial windows",
                self.max_total_windows,
                self.initial_lambdas.len()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub name: String,
    pub kind: ProtocolKind,
    pub physical_system: String,
    pub sim_stages: Vec<StageSpec>,
    #[serde(default)]
    pub analysis_stages: Vec<StageSpec>,
    /// ESMACS: replicas per ensemble; TIES: replicas per λ window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas_per_member: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_schedule: Option<LambdaSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adaptive: Option<AdaptiveConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TimestepMode {
    Scaling,
    Production,
}

/// Timestep counts for stages S1–S4.
pub fn default_timestep_schedule(mode: TimestepMode) -> BTreeMap<String, u64> {
    let steps: [u64; 4] = match mode {
        TimestepMode::Scaling => [1_000, 5_000, 5_000, 50_000],
        TimestepMode::Production => [3_000, 50_000, 50_000, 2_000_000],
    };
    ["S1", "S2", "S3", "S4"].iter().map(|s| s.to_string()).zip(steps).collect()
}

/// Splits a production stage into `substages` equal pieces; the remainder goes to the last one.
pub fn split_production(total_timesteps: u64, substages: u32) -> Vec<u64> {
    let n = u64::from(substages.max(1));
    let base = total_timesteps / n;
    let mut out = vec![base; n as usize];
    if let Some(last) = out.last_mut() {
        *last += total_timesteps - base * n;
    }
    out
}

fn simulation_stages(mode: TimestepMode) -> Vec<StageSpec> {
    let steps = default_timestep_schedule(mode);
    vec![
        StageSpec::simulation("S1", StageKind::Minimization, steps["S1"]),
        StageSpec::simulation("S2", StageKind::Equilibration, steps["S2"]),
        StageSpec::simulation("S3", StageKind::Equilibration, steps["S3"]),
        StageSpec::simulation("S4", StageKind::Production, steps["S4"]),
    ]
}

impl ProtocolSpec {
    /// TIES with the usual four simulation stages, 5 per-replica analysis tasks and one global task.
    pub fn ties(name: &str, physical_system: &str, mode: TimestepMode, schedule: LambdaSchedule) -> Self {
        Self {
            name: name.to_string(),
            kind: ProtocolKind::Ties,
            physical_system: physical_system.to_string(),
            sim_stages: simulation_stages(mode),
            analysis_stages: vec![
                StageSpec::analysis("S5", StageKind::Analysis, DEFAULT_TIES_REPLICAS),
                StageSpec::analysis("S6", StageKind::GlobalAnalysis, 1),
            ],
            replicas_per_member: Some(DEFAULT_TIES_REPLICAS),
            lambda_schedule: Some(schedule),
            adaptive: None,
        }
    }

    /// ESMACS as a workflow shape: four simulation stages and one aggregating analysis task.
    pub fn esmacs(name: &str, physical_system: &str, mode: TimestepMode) -> Self {
        Self {
            name: name.to_string(),
            kind: ProtocolKind::Esmacs,
            physical_system: physical_system.to_string(),
            sim_stages: simulation_stages(mode),
            analysis_stages: vec![StageSpec::analysis("S5", StageKind::Analysis, 1)],
            replicas_per_member: Some(DEFAULT_ESMACS_REPLICAS),
            lambda_schedule: None,
            adaptive: None,
        }
    }

    pub fn without_analysis(mut self) -> Self {
        self.analysis_stages.clear();
        self
    }

    pub fn replicas(&self) -> u32 {
        self.replicas_per_member.unwrap_or(match self.kind {
            ProtocolKind::Esmacs => DEFAULT_ESMACS_REPLICAS,
            ProtocolKind::Ties | ProtocolKind::Custom => DEFAULT_TIES_REPLICAS,
        })
    }

    /// Windows the first simulation stages are built from.
    pub fn active_lambdas(&self) -> Option<&LambdaSchedule> {
        match (&self.adaptive, &self.lambda_schedule) {
            (Some(a), Some(_)) => Some(&a.initial_lambdas),
            (_, s) => s.as_ref(),
        }
    }

    /// Number of concurrent tasks in each simulation stage.
    pub fn simulation_width(&self) -> u32 {
        let windows = self.active_lambdas().map_or(1, |s| s.len() as u32);
        match self.kind {
            ProtocolKind::Esmacs => self.replicas(),
            ProtocolKind::Ties | ProtocolKind::Custom => windows * self.replicas(),
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let name = &self.name;
        if name.trim().is_empty() {
            return Err(ProtocolError::EmptyName);
        }
        match (self.kind, &self.lambda_schedule) {
            (ProtocolKind::Ties, None) => return Err(ProtocolError::MissingLambdaSchedule(name.clone())),
            (ProtocolKind::Esmacs, Some(_)) => {
                return Err(ProtocolError::UnexpectedLambdaSchedule(name.clone()))
            }
            _ => {}
        }
        if self.replicas() == 0 {
            return Err(ProtocolError::NoReplicas(name.clone()));
        }
        if self.sim_stages.is_empty() {
            return Err(ProtocolError::NoSimulationStages(name.clone()));
        }
        let mut labels = BTreeSet::new();
        for stage in self.sim_stages.iter().chain(&self.analysis_stages) {
            if !labels.insert(stage.label.as_str()) {
                return Err(ProtocolError::DuplicateStageLabel {
                    protocol: name.clone(),
                    stage: stage.label.clone(),
                });
            }
        }
        let derived = self.simulation_width();
        for stage in &self.sim_stages {
            if !stage.kind.is_simulation() {
                return Err(ProtocolError::MisplacedStage {
                    protocol: name.clone(),
                    stage: stage.label.clone(),
                    kind: stage.kind,
                });
            }
            if stage.timesteps == 0 {
                return Err(ProtocolError::NonPositiveTimesteps {
                    protocol: name.clone(),
                    stage: stage.label.clone(),
                });
            }
            if let Some(declared) = stage.task_width {
                if declared != derived {
                    return Err(ProtocolError::WidthMismatch {
                        protocol: name.clone(),
                        stage: stage.label.clone(),
                        declared,
                        derived,
                    });
                }
            }
        }
        for stage in &self.analysis_stages {
            if stage.kind.is_simulation() {
                return Err(ProtocolError::MisplacedStage {
                    protocol: name.clone(),
                    stage: stage.label.clone(),
                    kind: stage.kind,
                });
            }
            if stage.timesteps != 0 {
                return Err(ProtocolError::AnalysisTimesteps {
                    protocol: name.clone(),
                    stage: stage.label.clone(),
                });
            }
            match (stage.kind, stage.task_width) {
                (_, None) | (_, Some(0)) => {
                    return Err(ProtocolError::MissingTaskWidth {
                        protocol: name.clone(),
                        stage: stage.label.clone(),
                    })
                }
                (StageKind::GlobalAnalysis, Some(w)) if w != 1 => {
                    return Err(ProtocolError::GlobalAnalysisWidth {
                        protocol: name.clone(),
                        stage: stage.label.clone(),
                    })
                }
                _ => {}
            }
        }
        if let Some(adaptive) = &self.adaptive {
            let fail = |reason: String| ProtocolError::Adaptive { protocol: name.clone(), reason };
            adaptive.validate().map_err(&fail)?;
            if self.lambda_schedule.is_none() {
                return Err(fail("adaptive protocols need a lambda schedule".into()));
            }
            if self.sim_stages.last().map(|s| s.kind) != Some(StageKind::Production) {
                return Err(fail("the last simulation stage must be PRODUCTION".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskId {
    pub pipeline: u32,
    pub stage: u32,
    pub index: u32,
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}.s{}.t{}", self.pipeline, self.stage, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskState {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub protocol_id: u32,
    pub stage_label: String,
    pub kind: StageKind,
    pub lambda: Option<Lambda>,
    pub replica_index: Option<u32>,
    pub cores: u32,
    pub timesteps: u64,
    pub state: TaskState,
}

/// Template for a task before it is placed in a pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDraft {
    pub kind: StageKind,
    pub lambda: Option<Lambda>,
    pub replica_index: Option<u32>,
    pub timesteps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageDraft {
    pub label: String,
    pub tasks: Vec<TaskDraft>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub label: String,
    pub tasks: Vec<Task>,
}

impl Stage {
    pub fn is_done(&self) -> bool {
        self.tasks.iter().all(|t| t.state == TaskState::Done)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub id: u32,
    pub protocol_id: u32,
    pub protocol_name: String,
    pub physical_system: String,
    pub stages: Vec<Stage>,
    /// Windows the pipeline samples; grows when windows are added at runtime.
    pub lambdas: Vec<Lambda>,
    pub window_cap: Option<usize>,
}

impl Pipeline {
    pub fn push_stage(&mut self, draft: StageDraft) {
        let stage_index = self.stages.len() as u32;
        let tasks = draft
            .tasks
            .into_iter()
            .enumerate()
            .map(|(i, t)| Task {
                id: TaskId { pipeline: self.id, stage: stage_index, index: i as u32 },
                protocol_id: self.protocol_id,
                stage_label: draft.label.clone(),
                kind: t.kind,
                lambda: t.lambda,
                replica_index: t.replica_index,
                cores: DEFAULT_CORES_PER_TASK,
                timesteps: t.timesteps,
                state: TaskState::Pending,
            })
            .collect();
        self.stages.push(Stage { label: draft.label, tasks });
    }

    pub fn task_count(&self) -> usize {
        self.stages.iter().map(|s| s.tasks.len()).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkflowGraph {
    pub pipelines: Vec<Pipeline>,
}

impl WorkflowGraph {
    /// Compiles each protocol into its own pipeline, numbering pipelines and protocols in order.
    pub fn from_protocols<'a>(
        specs: impl IntoIterator<Item = &'a ProtocolSpec>,
    ) -> Result<Self, ProtocolError> {
        let mut graph = WorkflowGraph::default();
        for (i, spec) in specs.into_iter().enumerate() {
            graph.pipelines.push(compile_pipeline(spec, i as u32)?);
        }
        Ok(graph)
    }

    pub fn task_count(&self) -> usize {
        self.pipelines.iter().map(Pipeline::task_count).sum()
    }

    pub fn extend(&mut self, other: WorkflowGraph) {
        for mut p in other.pipelines {
            let id = self.pipelines.len() as u32;
            p.id = id;
            p.protocol_id = id;
            for (s_idx, stage) in p.stages.iter_mut().enumerate() {
                for (t_idx, task) in stage.tasks.iter_mut().enumerate() {
                    task.id = TaskId { pipeline: id, stage: s_idx as u32, index: t_idx as u32 };
                    task.protocol_id = id;
                }
            }
            self.pipelines.push(p);
        }
    }
}

/// Drafts of one simulation stage: every (window, replica) pair, or every replica when windowless.
pub fn simulation_drafts(
    kind: StageKind,
    timesteps: u64,
    lambdas: Option<&[Lambda]>,
    replicas: u32,
) -> Vec<TaskDraft> {
    match lambdas {
        Some(ls) => ls
            .iter()
            .flat_map(|&l| {
                (0..replicas).map(move |r| TaskDraft {
                    kind,
                    lambda: Some(l),
                    replica_index: Some(r),
                    timesteps,
                })
            })
            .collect(),
        None => (0..replicas)
            .map(|r| TaskDraft { kind, lambda: None, replica_index: Some(r), timesteps })
            .collect(),
    }
}

pub fn analysis_draft(stage: &StageSpec) -> StageDraft {
    let width = stage.task_width.unwrap_or(1);
    StageDraft {
        label: stage.label.clone(),
        tasks: (0..width)
            .map(|_| TaskDraft { kind: stage.kind, lambda: None, replica_index: None, timesteps: 0 })
            .collect(),
    }
}

fn compile_pipeline(spec: &ProtocolSpec, id: u32) -> Result<Pipeline, ProtocolError> {
    spec.validate()?;
    let windowed = spec.kind != ProtocolKind::Esmacs;
    let lambdas: Vec<Lambda> = match spec.active_lambdas() {
        Some(s) if windowed => s.lambdas().to_vec(),
        _ => Vec::new(),
    };
    let lambda_slice = (!lambdas.is_empty()).then_some(lambdas.as_slice());
    let mut pipeline = Pipeline {
        id,
        protocol_id: id,
        protocol_name: spec.name.clone(),
        physical_system: spec.physical_system.clone(),
        stages: Vec::new(),
        lambdas: lambdas.clone(),
        window_cap: spec.adaptive.as_ref().map(|a| a.max_total_windows),
    };
    let replicas = spec.replicas();
    match &spec.adaptive {
        None => {
            for stage in &spec.sim_stages {
                pipeline.push_stage(StageDraft {
                    label: stage.label.clone(),
                    tasks: simulation_drafts(stage.kind, stage.timesteps, lambda_slice, replicas),
                });
            }
            for stage in &spec.analysis_stages {
                pipeline.push_stage(analysis_draft(stage));
            }
        }
        Some(adaptive) => {
            // Only the first production sub-stage is compiled; the runtime evaluator
            // appends later sub-stages, new windows and the analysis stages.
            let (production, equilibration) =
                spec.sim_stages.split_last().expect("validated non-empty");
            for stage in equilibration {
                pipeline.push_stage(StageDraft {
                    label: stage.label.clone(),
                    tasks: simulation_drafts(stage.kind, stage.timesteps, lambda_slice, replicas),
                });
            }
            pipeline.push_stage(StageDraft {
                label: format!("{}.1", production.label),
                tasks: simulation_drafts(
                    StageKind::Production,
                    adaptive.substage_timesteps,
                    lambda_slice,
                    replicas,
                ),
            });
        }
    }
    Ok(pipeline)
}

/// Compiles one protocol into a workflow graph with a single pipeline.
pub fn compile_protocol(spec: &ProtocolSpec) -> Result<WorkflowGraph, ProtocolError> {
    Ok(WorkflowGraph { pipelines: vec![compile_pipeline(spec, 0)?] })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ties13() -> ProtocolSpec {
        ProtocolSpec::ties("t", "sys", TimestepMode::Scaling, LambdaSchedule::uniform(13).unwrap())
            .without_analysis()
    }

    #[test]
    fn esmacs_four_stages_of_25() {
        let spec = ProtocolSpec::esmacs("e", "sys", TimestepMode::Scaling).without_analysis();
        let g = compile_protocol(&spec).unwrap();
        assert_eq!(g.pipelines.len(), 1);
        let p = &g.pipelines[0];
        assert_eq!(p.stages.len(), 4);
        assert!(p.stages.iter().all(|s| s.tasks.len() == 25));
        assert!(p.stages[0].tasks.iter().all(|t| t.lambda.is_none()));
    }

    #[test]
    fn ties_four_stages_of_65() {
        let g = compile_protocol(&ties13()).unwrap();
        let p = &g.pipelines[0];
        assert_eq!(p.stages.len(), 4);
        for s in &p.stages {
            assert_eq!(s.tasks.len(), 65);
            assert!(s.tasks.iter().all(|t| t.lambda.is_some() && t.replica_index.is_some()));
        }
        assert_eq!(p.stages[3].tasks[0].timesteps, 50_000);
    }

    #[test]
    fn adaptive_ties_starts_with_15() {
        let mut spec = ProtocolSpec::ties(
            "a",
            "sys",
            TimestepMode::Production,
            LambdaSchedule::uniform(13).unwrap(),
        );
        spec.adaptive = Some(AdaptiveConfig::default());
        let g = compile_protocol(&spec).unwrap();
        let p = &g.pipelines[0];
        assert_eq!(p.stages[0].tasks.len(), 15);
        let labels: Vec<_> = p.stages.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, ["S1", "S2", "S3", "S4.1"]);
        assert_eq!(p.stages[3].tasks[0].timesteps, 500_000);
        assert_eq!(p.window_cap, Some(21));
    }

    #[test]
    fn analysis_stages_follow_simulation() {
        let spec = ProtocolSpec::ties(
            "t",
            "sys",
            TimestepMode::Production,
            LambdaSchedule::uniform(13).unwrap(),
        );
        let g = compile_protocol(&spec).unwrap();
        let p = &g.pipelines[0];
        assert_eq!(p.stages.len(), 6);
        assert_eq!(p.stages[4].tasks.len(), 5);
        assert_eq!(p.stages[5].tasks.len(), 1);
        assert_eq!(p.stages[5].tasks[0].kind, StageKind::GlobalAnalysis);
    }

    #[test]
    fn ties_without_schedule_is_rejected() {
        let mut spec = ties13();
        spec.lambda_schedule = None;
        assert!(matches!(compile_protocol(&spec), Err(ProtocolError::MissingLambdaSchedule(_))));
    }

    #[test]
    fn esmacs_with_schedule_is_rejected() {
        let mut spec = ProtocolSpec::esmacs("e", "sys", TimestepMode::Scaling);
        spec.lambda_schedule = Some(LambdaSchedule::uniform(3).unwrap());
        assert!(matches!(compile_protocol(&spec), Err(ProtocolError::UnexpectedLambdaSchedule(_))));
    }

    #[test]
    fn stage_invariants_are_enforced() {
        let mut spec = ties13();
        spec.sim_stages[1].timesteps = 0;
        assert!(matches!(spec.validate(), Err(ProtocolError::NonPositiveTimesteps { .. })));

        let mut spec = ties13();
        spec.analysis_stages.push(StageSpec::analysis("S6", StageKind::GlobalAnalysis, 2));
        assert!(matches!(spec.validate(), Err(ProtocolError::GlobalAnalysisWidth { .. })));

        let mut spec = ties13();
        let mut bad = StageSpec::analysis("S5", StageKind::Analysis, 5);
        bad.timesteps = 10;
        spec.analysis_stages.push(bad);
        assert!(matches!(spec.validate(), Err(ProtocolError::AnalysisTimesteps { .. })));

        let mut spec = ties13();
        spec.sim_stages[0].task_width = Some(64);
        assert!(matches!(spec.validate(), Err(ProtocolError::WidthMismatch { derived: 65, .. })));
    }

    #[test]
    fn schedules() {
        assert_eq!(
            default_timestep_schedule(TimestepMode::Scaling).values().copied().collect::<Vec<_>>(),
            [1000, 5000, 5000, 50000]
        );
        assert_eq!(
            default_timestep_schedule(TimestepMode::Production).values().copied().collect::<Vec<_>>(),
            [3000, 50000, 50000, 2_000_000]
        );
        assert_eq!(split_production(2_000_000, 4), vec![500_000; 4]);
        assert_eq!(split_production(10, 3), vec![3, 3, 4]);
    }

    #[test]
    fn lambda_schedule_canonicalizes() {
        let s = LambdaSchedule::new(&[1.0, 0.5, 0.0, 0.50004]).unwrap();
        assert_eq!(s.len(), 3);
        assert!(matches!(LambdaSchedule::new(&[0.1, 1.0]), Err(ScheduleError::NotSpanning)));
        assert!(matches!(LambdaSchedule::new(&[0.0]), Err(ScheduleError::TooShort)));
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"lambdas":[0.0,0.5,1.0]}"#);
        assert!(serde_json::from_str::<LambdaSchedule>(r#"{"lambdas":[0.2,1.0]}"#).is_err());
    }

    #[test]
    fn graph_from_many_protocols_numbers_pipelines() {
        let specs = vec![ties13(), ties13()];
        let g = WorkflowGraph::from_protocols(&specs).unwrap();
        assert_eq!(g.pipelines[1].id, 1);
        assert_eq!(g.pipelines[1].stages[2].tasks[4].id.to_string(), "p1.s2.t4");
        assert_eq!(g.task_count(), 2 * 4 * 65);
    }
}
