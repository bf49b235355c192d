use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{CampaignConfig, CampaignMode, ConfigError};
use crate::adaptive::{production_ns_by_window, QuadratureEvaluator, TerminationEvaluator, WindowSampler};
use crate::engine::{
    run_simulated, to_seconds, write_overhead_csv, CampaignError, CampaignOutcome, OverheadRow, StageContext,
    StageEvaluator, StagePlan,
};
use crate::lambda::Lambda;
use crate::protocol::{LambdaSchedule, ProtocolError, ProtocolKind, ProtocolSpec, TimestepMode, WorkflowGraph};
use crate::stats::StatsError;

pub const NONADAPTIVE_WINDOWS: usize = 13;
pub const REFERENCE_WINDOWS: usize = 65;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("protocol error: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("campaign failed: {0}")]
    Campaign(#[from] CampaignError),
    #[error("estimation failed: {0}")]
    Stats(#[from] StatsError),
    #[error("cannot write {path}: {reason}")]
    Output { path: String, reason: String },
}

impl RunError {
    /// 2 for anything wrong with the input, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Protocol(_) => 2,
            _ => 3,
        }
    }
}

/// Outcome of one protocol instance on one synthetic system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemResult {
    pub system: String,
    pub protocol: String,
    pub mode: CampaignMode,
    /// Reported as ΔΔG in tables.
    pub delta_g: f64,
    pub stderr: f64,
    pub windows: Vec<Lambda>,
    pub n_windows: usize,
    pub replicas: usize,
    /// Production length of each window, ns.
    pub production_ns: f64,
    /// Production summed over every replica of every window, ns.
    pub simulated_ns: f64,
    /// Summed execution time of simulation tasks, s.
    pub ttx_s: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checkpoints: Vec<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminated: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub mode: CampaignMode,
    pub results: Vec<SystemResult>,
    pub outcome: CampaignOutcome,
    pub protocols: Vec<ProtocolSpec>,
}

impl RunOutput {
    pub fn overhead_row(&self, run_id: &str, total_cores: u32) -> OverheadRow {
        OverheadRow {
            run_id: run_id.to_string(),
            n_protocols: self.protocols.len(),
            total_cores,
            breakdown: self.outcome.overheads,
        }
    }
}

/// The protocol list a config stands for: explicit protocols, or one production TIES per system.
pub fn base_protocols(cfg: &CampaignConfig) -> Vec<ProtocolSpec> {
    if !cfg.protocols.is_empty() {
        return cfg.protocols.clone();
    }
    cfg.systems
        .iter()
        .map(|s| {
            ProtocolSpec::ties(
                &s.label,
                &s.label,
                TimestepMode::Production,
                LambdaSchedule::uniform(NONADAPTIVE_WINDOWS).expect("static schedule"),
            )
        })
        .collect()
}

fn termination_timesteps(cfg: &CampaignConfig) -> u64 {
    (cfg.adaptive.termination_tau / (cfg.sampling.timestep_fs * 1e-6)).round() as u64
}

/// Rewrites a windowed protocol for `mode`.
pub fn protocol_for_mode(base: &ProtocolSpec, mode: CampaignMode, cfg: &CampaignConfig) -> ProtocolSpec {
    let mut spec = base.clone();
    if spec.kind == ProtocolKind::Esmacs {
        return spec;
    }
    let uniform = |n| LambdaSchedule::uniform(n).expect("static schedule");
    spec.adaptive = None;
    match mode {
        CampaignMode::Nonadaptive => spec.lambda_schedule = Some(uniform(NONADAPTIVE_WINDOWS)),
        CampaignMode::Reference => spec.lambda_schedule = Some(uniform(REFERENCE_WINDOWS)),
        CampaignMode::AdaptiveQuadrature => {
            spec.lambda_schedule = Some(uniform(NONADAPTIVE_WINDOWS));
            spec.adaptive = Some(cfg.adaptive.clone());
        }
        CampaignMode::AdaptiveTermination => {
            spec.lambda_schedule = Some(uniform(NONADAPTIVE_WINDOWS));
            if let Some(last) = spec.sim_stages.last_mut() {
                last.label = format!("{}.1", last.label);
                last.timesteps = termination_timesteps(cfg);
            }
        }
    }
    for s in &mut spec.sim_stages {
        s.task_width = None;
    }
    spec
}

enum ModeEvaluator {
    Quadrature(QuadratureEvaluator),
    Termination(TerminationEvaluator),
}

struct PerPipeline(Vec<Option<ModeEvaluator>>);

impl StageEvaluator for PerPipeline {
    fn on_stage_complete(&mut self, ctx: &StageContext<'_>) -> StagePlan {
        match self.0.get_mut(ctx.pipeline.id as usize).and_then(Option::as_mut) {
            Some(ModeEvaluator::Quadrature(e)) => e.on_stage_complete(ctx),
            Some(ModeEvaluator::Termination(e)) => e.on_stage_complete(ctx),
            None => StagePlan::Continue,
        }
    }
}

fn sampler_for(cfg: &CampaignConfig, spec: &ProtocolSpec) -> Option<WindowSampler> {
    if spec.kind == ProtocolKind::Esmacs {
        return None;
    }
    let system = cfg.system(&spec.physical_system)?.clone();
    Some(WindowSampler::new(system, cfg.seed, spec.replicas(), cfg.sampling.clone()))
}

/// Runs every protocol of `cfg` together on one pilot in `mode`.
pub fn run_mode(cfg: &CampaignConfig, mode: CampaignMode) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    let protocols: Vec<ProtocolSpec> = base_protocols(cfg).iter().map(|p| protocol_for_mode(p, mode, cfg)).collect();
    if protocols.is_empty() {
        return Err(ConfigError::Invalid { field: "systems".into(), reason: "nothing to run".into() }.into());
    }
    for (i, p) in protocols.iter().enumerate() {
        if p.kind != ProtocolKind::Esmacs && cfg.system(&p.physical_system).is_none() {
            return Err(ConfigError::Invalid {
                field: format!("protocols[{i}].physical_system"),
                reason: format!("no system labelled {}", p.physical_system),
            }
            .into());
        }
    }
    let graph = WorkflowGraph::from_protocols(&protocols)?;
    let samplers: Vec<Option<WindowSampler>> = protocols.iter().map(|p| sampler_for(cfg, p)).collect();
    let evaluators = protocols
        .iter()
        .zip(&samplers)
        .map(|(p, s)| {
            let s = s.clone()?;
            match mode {
                CampaignMode::AdaptiveQuadrature => Some(ModeEvaluator::Quadrature(QuadratureEvaluator::new(p, s))),
                CampaignMode::AdaptiveTermination => Some(ModeEvaluator::Termination(TerminationEvaluator::new(
                    p,
                    &cfg.adaptive,
                    s,
                    cfg.termination.max_checkpoints,
                ))),
                _ => None,
            }
        })
        .collect();
    let mut hook = PerPipeline(evaluators);
    let outcome = run_simulated(graph, &cfg.pilot, &cfg.durations, &cfg.overheads, Some(&mut hook), cfg.seed)?;

    let mut results = Vec::new();
    for (i, (spec, sampler)) in protocols.iter().zip(&samplers).enumerate() {
        let Some(sampler) = sampler else { continue };
        let pipeline = &outcome.graph.pipelines[i];
        let by_window = production_ns_by_window(pipeline, &cfg.sampling);
        let windows: Vec<(Lambda, f64)> = by_window.into_iter().collect();
        let estimate = sampler.estimate(&windows)?;
        let ttx_us: u64 = outcome
            .records
            .iter()
            .filter(|r| r.task_id.pipeline == pipeline.id)
            .filter(|r| {
                let t = &pipeline.stages[r.task_id.stage as usize].tasks[r.task_id.index as usize];
                t.kind.is_simulation()
            })
            .map(|r| r.duration_us)
            .sum();
        let production_ns = windows.iter().map(|w| w.1).fold(0.0, f64::max);
        let replicas = spec.replicas() as usize;
        let checkpoints = match hook.0[i].as_ref() {
            Some(ModeEvaluator::Termination(t)) => t.history.estimates.clone(),
            _ => Vec::new(),
        };
        results.push(SystemResult {
            system: spec.physical_system.clone(),
            protocol: spec.name.clone(),
            mode,
            delta_g: estimate.delta_g,
            stderr: estimate.stderr,
            n_windows: windows.len(),
            replicas: windows.len() * replicas,
            production_ns,
            simulated_ns: windows.iter().map(|w| w.1).sum::<f64>() * replicas as f64,
            windows: windows.iter().map(|w| w.0).collect(),
            ttx_s: to_seconds(ttx_us),
            checkpoints,
            terminated: outcome.terminations[i].clone(),
        });
    }
    Ok(RunOutput { mode, results, outcome, protocols })
}

pub(crate) fn output_error(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Output { path: path.display().to_string(), reason: e.to_string() }
}

pub fn create_file(path: &Path) -> Result<fs::File, RunError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| output_error(parent, e))?;
    }
    fs::File::create(path).map_err(|e| output_error(path, e))
}

fn systems_label(out: &RunOutput) -> String {
    let mut labels: Vec<&str> = out.protocols.iter().map(|p| p.physical_system.as_str()).collect();
    labels.dedup();
    labels.join("+")
}

/// Writes `timeline.csv`, `overheads.csv` and one `result_<system>.json` per windowed protocol.
pub fn write_run_outputs(dir: &Path, out: &RunOutput, total_cores: u32) -> Result<(), RunError> {
    let system = systems_label(out);
    let mode = out.mode.as_str();
    let path = dir.join("timeline.csv");
    out.outcome
        .timeline
        .write_csv(create_file(&path)?, &[("system", &system), ("mode", mode)])
        .map_err(|e| output_error(&path, e))?;
    let path = dir.join("overheads.csv");
    let row = out.overhead_row(&format!("run-{}", mode.to_ascii_lowercase()), total_cores);
    write_overhead_csv(
        create_file(&path)?,
        &[(row, vec![("system".into(), system.clone()), ("mode".into(), mode.into())])],
    )
    .map_err(|e| output_error(&path, e))?;
    for r in &out.results {
        let path = dir.join(format!("result_{}.json", file_stem(&r.protocol)));
        let text = serde_json::to_string_pretty(r).expect("result serializes");
        fs::write(&path, text + "\n").map_err(|e| output_error(&path, e))?;
    }
    Ok(())
}

/// Lowercase, filesystem-friendly version of a label.
pub fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect::<String>()
        .split('_')
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("_")
}
