//! The two runtime-adaptive strategies, expressed as stage evaluators.
//!
//! [`QuadratureEvaluator`] bisects λ intervals whose estimated error exceeds
//! the per-interval budget after each production sub-stage.
//! [`TerminationEvaluator`] checkpoints ΔG every τ of production and stops the
//! pipeline once consecutive checkpoints agree.
//!
//! Neither evaluator sees real MD output: ∂U/∂λ samples come from the
//! synthetic kernel, regenerated on demand from (seed, window, replica).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::engine::{AppendPlan, StageContext, StageEvaluator, StagePlan};
use crate::lambda::Lambda;
use crate::protocol::{
    analysis_draft, simulation_drafts, AdaptiveConfig, Pipeline, ProtocolSpec, StageDraft, StageKind, StageSpec,
    TaskState,
};
use crate::quadrature::{integrate_with_error, propose_refinements_capped, FreeEnergyEstimate, WindowPoint};
use crate::stats::{
    bootstrap_delta_g_stderr, checkpoint_estimate, convergence_check, point_from_means, replica_means,
    CheckpointHistory, DuDlSeries, StatsError, WindowReplicas,
};
use crate::synth::{du_dl_series, SyntheticSystem};

fn default_timestep_fs() -> f64 {
    2.0
}
fn default_sample_interval_ps() -> f64 {
    1.0
}
fn default_discard() -> f64 {
    crate::stats::DEFAULT_DISCARD_FRACTION
}
fn default_resamples() -> usize {
    crate::stats::DEFAULT_BOOTSTRAP_RESAMPLES
}

/// How MD timesteps map onto synthetic samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    #[serde(default = "default_timestep_fs")]
    pub timestep_fs: f64,
    /// One ∂U/∂λ sample is recorded every this many ps.
    #[serde(default = "default_sample_interval_ps")]
    pub sample_interval_ps: f64,
    #[serde(default = "default_discard")]
    pub discard_fraction: f64,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            timestep_fs: default_timestep_fs(),
            sample_interval_ps: default_sample_interval_ps(),
            discard_fraction: default_discard(),
            bootstrap_resamples: default_resamples(),
        }
    }
}

impl SamplingConfig {
    pub fn ns_for_steps(&self, timesteps: u64) -> f64 {
        timesteps as f64 * self.timestep_fs * 1e-6
    }

    pub fn samples_for_ns(&self, ns: f64) -> usize {
        (ns * 1000.0 / self.sample_interval_ps).round() as usize
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.timestep_fs > 0.0 && self.sample_interval_ps > 0.0) {
            return Err("sampling.timestep_fs and sampling.sample_interval_ps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.discard_fraction) {
            return Err("sampling.discard_fraction must lie in [0, 1)".into());
        }
        if self.bootstrap_resamples < 100 {
            return Err("sampling.bootstrap_resamples must be at least 100".into());
        }
        Ok(())
    }
}

/// Produces replica trajectories of one synthetic system.
#[derive(Debug, Clone)]
pub struct WindowSampler {
    pub system: SyntheticSystem,
    pub seed: u64,
    pub replicas: u32,
    pub sampling: SamplingConfig,
}

impl WindowSampler {
    pub fn new(system: SyntheticSystem, seed: u64, replicas: u32, sampling: SamplingConfig) -> Self {
        Self { system, seed, replicas, sampling }
    }

    pub fn series_set(&self, lambda: Lambda, ns: f64) -> Vec<DuDlSeries> {
        let n = self.sampling.samples_for_ns(ns).max(1);
        (0..self.replicas)
            .map(|r| {
                du_dl_series(
                    &self.system.curve,
                    &self.system.noise,
                    lambda,
                    n,
                    self.sampling.sample_interval_ps,
                    self.seed,
                    r,
                )
                .expect("system validated before sampling")
            })
            .collect()
    }

    pub fn replica_means(&self, lambda: Lambda, ns: f64) -> Result<Vec<f64>, StatsError> {
        replica_means(&self.series_set(lambda, ns), self.sampling.discard_fraction)
    }

    pub fn point(&self, lambda: Lambda, ns: f64) -> Result<WindowPoint, StatsError> {
        point_from_means(lambda, &self.replica_means(lambda, ns)?)
    }

    /// ΔG with the larger of the propagated and bootstrap standard errors.
    pub fn estimate(&self, windows: &[(Lambda, f64)]) -> Result<FreeEnergyEstimate, StatsError> {
        let mut points = Vec::with_capacity(windows.len());
        let mut replicas = Vec::with_capacity(windows.len());
        for &(lambda, ns) in windows {
            let means = self.replica_means(lambda, ns)?;
            points.push(point_from_means(lambda, &means)?);
            replicas.push(WindowReplicas { lambda: lambda.value(), replica_means: means });
        }
        let boot = bootstrap_delta_g_stderr(&replicas, self.sampling.bootstrap_resamples, self.seed ^ 0xB007)?;
        Ok(integrate_with_error(&points, boot)?)
    }
}

/// Production ns each window has completed, read from replica 0's finished production tasks.
pub fn production_ns_by_window(pipeline: &Pipeline, sampling: &SamplingConfig) -> BTreeMap<Lambda, f64> {
    let mut steps: BTreeMap<Lambda, u64> = BTreeMap::new();
    for stage in &pipeline.stages {
        for t in &stage.tasks {
            if t.kind == StageKind::Production && t.state == TaskState::Done && t.replica_index == Some(0) {
                if let Some(l) = t.lambda {
                    *steps.entry(l).or_default() += t.timesteps;
                }
            }
        }
    }
    steps.into_iter().map(|(l, s)| (l, sampling.ns_for_steps(s))).collect()
}

fn completed_production_windows(ctx: &StageContext<'_>) -> Option<BTreeSet<Lambda>> {
    let stage = &ctx.pipeline.stages[ctx.stage_index];
    if stage.tasks.first().map(|t| t.kind) != Some(StageKind::Production) {
        return None;
    }
    Some(stage.tasks.iter().filter_map(|t| t.lambda).collect())
}

fn production_label(spec: &ProtocolSpec) -> String {
    spec.sim_stages.last().map_or_else(|| "S4".to_string(), |s| s.label.clone())
}

/// One refinement decision, kept for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRound {
    pub round: u32,
    pub windows: Vec<Lambda>,
    pub delta_g: f64,
    pub added: Vec<Lambda>,
}

/// Adds λ windows at runtime wherever the interval error budget is exceeded.
///
/// After each of the first `production_substages` production stages, the
/// windows sampled so far are re-estimated and failing intervals are bisected.
/// New windows run the protocol's equilibration stages and then join the
/// production sub-stages until every window has the same production length.
#[derive(Debug, Clone)]
pub struct QuadratureEvaluator {
    sampler: WindowSampler,
    config: AdaptiveConfig,
    equilibration: Vec<StageSpec>,
    analysis: Vec<StageSpec>,
    production_label: String,
    substages_done: BTreeMap<Lambda, u32>,
    next_production: u32,
    pub rounds: Vec<RefinementRound>,
}

impl QuadratureEvaluator {
    pub fn new(spec: &ProtocolSpec, sampler: WindowSampler) -> Self {
        let config = spec.adaptive.clone().unwrap_or_default();
        let equilibration = spec.sim_stages[..spec.sim_stages.len().saturating_sub(1)].to_vec();
        Self {
            substages_done: config.initial_lambdas.lambdas().iter().map(|&l| (l, 0)).collect(),
            sampler,
            config,
            equilibration,
            analysis: spec.analysis_stages.clone(),
            production_label: production_label(spec),
            next_production: 2,
            rounds: Vec::new(),
        }
    }

    fn substage_ns(&self) -> f64 {
        self.sampler.sampling.ns_for_steps(self.config.substage_timesteps)
    }

    fn refine(&mut self) -> Vec<Lambda> {
        let ns = self.substage_ns();
        let windows: Vec<(Lambda, f64)> =
            self.substages_done.iter().filter(|(_, &d)| d > 0).map(|(&l, &d)| (l, f64::from(d) * ns)).collect();
        let points: Vec<WindowPoint> = windows
            .iter()
            .map(|&(l, ns)| self.sampler.point(l, ns).expect("at least two replicas"))
            .collect();
        let added = propose_refinements_capped(
            &points,
            self.config.error_threshold_epsilon,
            Some(self.config.max_total_windows),
        )
        .expect("sampled windows span [0, 1]");
        self.rounds.push(RefinementRound {
            round: self.rounds.len() as u32 + 1,
            windows: windows.iter().map(|w| w.0).collect(),
            delta_g: crate::quadrature::trapezoid_integrate(&points).unwrap_or(f64::NAN),
            added: added.clone(),
        });
        added
    }
}

impl StageEvaluator for QuadratureEvaluator {
    fn on_stage_complete(&mut self, ctx: &StageContext<'_>) -> StagePlan {
        let Some(finished) = completed_production_windows(ctx) else {
            return StagePlan::Continue;
        };
        for l in finished {
            *self.substages_done.entry(l).or_default() += 1;
        }
        let added = if (self.rounds.len() as u32) < self.config.production_substages {
            self.refine()
        } else {
            Vec::new()
        };
        for &l in &added {
            self.substages_done.insert(l, 0);
        }

        let replicas = self.sampler.replicas;
        let mut stages = Vec::new();
        if !added.is_empty() {
            let round = self.rounds.len();
            for s in &self.equilibration {
                stages.push(StageDraft {
                    label: format!("{}.r{round}", s.label),
                    tasks: simulation_drafts(s.kind, s.timesteps, Some(&added), replicas),
                });
            }
        }
        let behind: Vec<Lambda> = self
            .substages_done
            .iter()
            .filter(|(_, &d)| d < self.config.production_substages)
            .map(|(&l, _)| l)
            .collect();
        if !behind.is_empty() {
            stages.push(StageDraft {
                label: format!("{}.{}", self.production_label, self.next_production),
                tasks: simulation_drafts(StageKind::Production, self.config.substage_timesteps, Some(&behind), replicas),
            });
            self.next_production += 1;
        } else {
            stages.extend(self.analysis.iter().map(analysis_draft));
        }
        if stages.is_empty() {
            StagePlan::Continue
        } else {
            StagePlan::Append(AppendPlan { new_lambdas: added, stages })
        }
    }
}

/// Stops production once two consecutive checkpoints agree within the threshold.
#[derive(Debug, Clone)]
pub struct TerminationEvaluator {
    sampler: WindowSampler,
    windows: Vec<Lambda>,
    tau_ns: f64,
    substage_timesteps: u64,
    max_checkpoints: u32,
    threshold: f64,
    min_checkpoints: usize,
    analysis: Vec<StageSpec>,
    production_label: String,
    cache: Vec<Vec<DuDlSeries>>,
    pub history: CheckpointHistory,
}

impl TerminationEvaluator {
    /// `spec` is the compiled termination protocol: its last simulation stage is one τ of production.
    pub fn new(spec: &ProtocolSpec, config: &AdaptiveConfig, sampler: WindowSampler, max_checkpoints: u32) -> Self {
        let windows = spec.lambda_schedule.as_ref().map(|s| s.lambdas().to_vec()).unwrap_or_default();
        let substage_timesteps = spec.sim_stages.last().map_or(0, |s| s.timesteps);
        let tau_ns = sampler.sampling.ns_for_steps(substage_timesteps);
        let full_ns = tau_ns * f64::from(max_checkpoints);
        let cache = windows.iter().map(|&l| sampler.series_set(l, full_ns)).collect();
        let label = production_label(spec);
        Self {
            sampler,
            windows,
            tau_ns,
            substage_timesteps,
            max_checkpoints,
            threshold: config.termination_threshold,
            min_checkpoints: config.min_checkpoints_before_termination as usize,
            analysis: spec.analysis_stages.clone(),
            production_label: label.split('.').next().unwrap_or("S4").to_string(),
            cache,
            history: CheckpointHistory::new(tau_ns),
        }
    }

    pub fn checkpoints(&self) -> usize {
        self.history.len()
    }

    pub fn simulated_ns(&self) -> f64 {
        self.history.estimates.last().map_or(0.0, |e| e.0)
    }
}

impl StageEvaluator for TerminationEvaluator {
    fn on_stage_complete(&mut self, ctx: &StageContext<'_>) -> StagePlan {
        if completed_production_windows(ctx).is_none() {
            return StagePlan::Continue;
        }
        let k = self.history.len() + 1;
        let time = self.tau_ns * k as f64;
        let estimate = checkpoint_estimate(&self.cache, time, self.sampler.sampling.discard_fraction)
            .expect("cached series cover every checkpoint");
        self.history.push(time, estimate).expect("checkpoints are spaced by tau");
        if convergence_check(&self.history, self.threshold, self.min_checkpoints) {
            return StagePlan::Terminate(format!("converged at {time:.1} ns"));
        }
        let stages: Vec<StageDraft> = if (k as u32) < self.max_checkpoints {
            vec![StageDraft {
                label: format!("{}.{}", self.production_label, k + 1),
                tasks: simulation_drafts(
                    StageKind::Production,
                    self.substage_timesteps,
                    Some(&self.windows),
                    self.sampler.replicas,
                ),
            }]
        } else {
            self.analysis.iter().map(analysis_draft).collect()
        };
        if stages.is_empty() {
            StagePlan::Continue
        } else {
            StagePlan::Append(AppendPlan { new_lambdas: Vec::new(), stages })
        }
    }
}
