use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::{CampaignConfig, Rung, SweepKind};
use super::run::{output_error, RunError};
use crate::engine::{run_simulated, write_overhead_csv, OverheadBreakdown, OverheadRow, PilotConfig};
use crate::protocol::{LambdaSchedule, ProtocolKind, ProtocolSpec, WorkflowGraph};

/// One rung of a scaling ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub kind: SweepKind,
    pub rung: Rung,
    pub tasks: usize,
    pub generations: usize,
    pub peak_concurrency: usize,
    pub failed_attempts: usize,
    pub breakdown: OverheadBreakdown,
}

impl SweepPoint {
    pub fn ttx(&self) -> f64 {
        self.breakdown.task_execution_time
    }

    pub fn overhead_row(&self) -> OverheadRow {
        OverheadRow {
            run_id: format!("{}-{}x{}", kind_str(self.kind).to_ascii_lowercase(), self.rung.protocols, self.rung.total_cores),
            n_protocols: self.rung.protocols,
            total_cores: self.rung.total_cores,
            breakdown: self.breakdown,
        }
    }
}

fn kind_str(kind: SweepKind) -> &'static str {
    match kind {
        SweepKind::Weak => "WEAK",
        SweepKind::Strong => "STRONG",
    }
}

/// The rungs a sweep visits, in run order.
pub fn ladder(cfg: &CampaignConfig, kind: SweepKind) -> Vec<Rung> {
    match kind {
        SweepKind::Weak => cfg.sweep.weak.clone(),
        SweepKind::Strong => cfg
            .sweep
            .strong_cores
            .iter()
            .map(|&total_cores| Rung { protocols: cfg.sweep.strong_protocols, total_cores })
            .collect(),
    }
}

/// `n` copies of the sweep protocol, without analysis stages.
pub fn sweep_protocols(cfg: &CampaignConfig, n: usize) -> Vec<ProtocolSpec> {
    (0..n)
        .map(|i| {
            let name = format!("{}-{i}", cfg.sweep.protocol.as_str().to_ascii_lowercase());
            let spec = match cfg.sweep.protocol {
                ProtocolKind::Esmacs => ProtocolSpec::esmacs(&name, &name, cfg.sweep.timesteps),
                _ => ProtocolSpec::ties(&name, &name, cfg.sweep.timesteps, LambdaSchedule::uniform(13).expect("static")),
            };
            spec.without_analysis()
        })
        .collect()
}

/// Runs each rung in order on a fresh pilot of the rung's size.
pub fn sweep(cfg: &CampaignConfig, kind: SweepKind) -> Result<Vec<SweepPoint>, RunError> {
    cfg.validate()?;
    let mut points = Vec::new();
    for rung in ladder(cfg, kind) {
        let pilot = PilotConfig { total_cores: rung.total_cores, ..cfg.pilot.clone() };
        let graph = WorkflowGraph::from_protocols(&sweep_protocols(cfg, rung.protocols))?;
        let tasks = graph.task_count();
        let outcome = run_simulated(graph, &pilot, &cfg.durations, &cfg.overheads, None, cfg.seed)?;
        points.push(SweepPoint {
            kind,
            rung,
            tasks,
            generations: outcome.timeline.generations.len(),
            peak_concurrency: outcome.peak_concurrency(),
            failed_attempts: outcome.timeline.failed_attempts(),
            breakdown: outcome.overheads,
        });
    }
    Ok(points)
}

/// Overhead CSV with `system` and `mode` columns; `system` names the protocol kind, `mode` the sweep kind.
pub fn write_sweep_csv<W: Write>(out: W, cfg: &CampaignConfig, points: &[SweepPoint]) -> Result<(), RunError> {
    let rows: Vec<_> = points
        .iter()
        .map(|p| {
            let extra = vec![
                ("system".to_string(), cfg.sweep.protocol.as_str().to_string()),
                ("mode".to_string(), kind_str(p.kind).to_string()),
            ];
            (p.overhead_row(), extra)
        })
        .collect();
    write_overhead_csv(out, &rows).map_err(|e| output_error(std::path::Path::new("sweep csv"), e))
}

/// Largest relative deviation of TTX from the ladder mean.
pub fn ttx_spread(points: &[SweepPoint]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mean = points.iter().map(SweepPoint::ttx).sum::<f64>() / points.len() as f64;
    let lo = points.iter().map(SweepPoint::ttx).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(SweepPoint::ttx).fold(f64::NEG_INFINITY, f64::max);
    if mean == 0.0 {
        0.0
    } else {
        (hi - lo) / mean
    }
}
