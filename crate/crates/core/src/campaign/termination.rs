use serde::{Deserialize, Serialize};

use super::config::{CampaignConfig, CampaignMode};
use super::run::{run_mode, RunError};
use super::table::render_table;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminationRow {
    pub system: String,
    pub nonadaptive_ns: f64,
    /// Production length when sampling stopped, a multiple of τ.
    pub adaptive_ns: f64,
    pub decrease_pct: f64,
    pub terminated_early: bool,
    /// `(time_ns, ΔG)` per checkpoint.
    pub checkpoints: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminationReport {
    pub tau_ns: f64,
    pub threshold: f64,
    pub rows: Vec<TerminationRow>,
}

pub const TERMINATION_HEADER: [&str; 4] = ["system", "nonadaptive_ns", "adaptive_ns", "decrease_pct"];

impl TerminationReport {
    pub fn mean_decrease(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.decrease_pct).sum::<f64>() / self.rows.len() as f64
    }

    pub fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.system.clone(),
                    format!("{:.1}", r.nonadaptive_ns),
                    format!("{:.1}", r.adaptive_ns),
                    format!("{:.1}", r.decrease_pct),
                ]
            })
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = render_table(&TERMINATION_HEADER, &self.cells());
        out.push_str(&format!("mean decrease {:.1}% (tau {} ns, threshold {})\n", self.mean_decrease(), self.tau_ns, self.threshold));
        out
    }
}

/// Runs every system of `cfg` with adaptive termination and compares against the fixed-length run.
pub fn termination_report(cfg: &CampaignConfig) -> Result<TerminationReport, RunError> {
    let out = run_mode(cfg, CampaignMode::AdaptiveTermination)?;
    let full = cfg.termination.nonadaptive_ns;
    let rows = out
        .results
        .into_iter()
        .map(|r| TerminationRow {
            decrease_pct: 100.0 * (1.0 - r.production_ns / full),
            system: r.system,
            nonadaptive_ns: full,
            adaptive_ns: r.production_ns,
            terminated_early: r.terminated.is_some(),
            checkpoints: r.checkpoints,
        })
        .collect();
    Ok(TerminationReport {
        tau_ns: cfg.adaptive.termination_tau,
        threshold: cfg.adaptive.termination_threshold,
        rows,
    })
}
