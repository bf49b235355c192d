use serde::{Deserialize, Serialize};

use super::config::{CampaignConfig, CampaignMode};
use super::run::{run_mode, RunError, SystemResult, NONADAPTIVE_WINDOWS};
use super::table::render_table;

/// Non-adaptive errors below this are treated as exact and not divided by.
pub const ERROR_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub system: String,
    pub reference_ddg: f64,
    pub nonadaptive_ddg: f64,
    pub nonadaptive_stderr: f64,
    pub adaptive_ddg: f64,
    pub adaptive_stderr: f64,
    pub n_lambda_windows: usize,
    /// Percent, negative when adaptive ran longer.
    pub decrease_in_ttx: f64,
    /// Percent, 0 when the non-adaptive run already hit the reference.
    pub increase_in_accuracy: f64,
    /// Set when `increase_in_accuracy` was forced to 0 by the error floor.
    pub accuracy_guarded: bool,
    pub nonadaptive_windows: usize,
    pub nonadaptive_ttx_s: f64,
    pub adaptive_ttx_s: f64,
    /// ε handed to the adaptive run.
    pub epsilon: f64,
    pub adaptive_windows: Vec<f64>,
}

impl ComparisonRow {
    pub fn nonadaptive_error(&self) -> f64 {
        (self.nonadaptive_ddg - self.reference_ddg).abs()
    }

    pub fn adaptive_error(&self) -> f64 {
        (self.adaptive_ddg - self.reference_ddg).abs()
    }

    pub fn window_decrease(&self) -> f64 {
        100.0 * (1.0 - self.n_lambda_windows as f64 / self.nonadaptive_windows as f64)
    }

    fn build(reference: &SystemResult, na: &SystemResult, ad: &SystemResult, epsilon: f64) -> Self {
        let na_err = (na.delta_g - reference.delta_g).abs();
        let ad_err = (ad.delta_g - reference.delta_g).abs();
        let guarded = na_err < ERROR_FLOOR;
        Self {
            system: na.system.clone(),
            reference_ddg: reference.delta_g,
            nonadaptive_ddg: na.delta_g,
            nonadaptive_stderr: na.stderr,
            adaptive_ddg: ad.delta_g,
            adaptive_stderr: ad.stderr,
            n_lambda_windows: ad.n_windows,
            decrease_in_ttx: 100.0 * (1.0 - ad.ttx_s / na.ttx_s),
            increase_in_accuracy: if guarded { 0.0 } else { 100.0 * (1.0 - ad_err / na_err) },
            accuracy_guarded: guarded,
            nonadaptive_windows: na.n_windows,
            nonadaptive_ttx_s: na.ttx_s,
            adaptive_ttx_s: ad.ttx_s,
            epsilon,
            adaptive_windows: ad.windows.iter().map(|l| l.value()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub reproducibility_threshold: f64,
}

pub const COMPARISON_HEADER: [&str; 7] = [
    "system",
    "ref_ddg",
    "nonadaptive_ddg",
    "adaptive_ddg",
    "n_lambda_windows",
    "decrease_in_ttx_pct",
    "increase_in_accuracy_pct",
];

/// Plot-ready columns, stderr split out.
pub const COMPARISON_CSV_HEADER: [&str; 11] = [
    "system",
    "ref_ddg",
    "nonadaptive_ddg",
    "nonadaptive_stderr",
    "adaptive_ddg",
    "adaptive_stderr",
    "n_lambda_windows",
    "decrease_in_ttx_pct",
    "increase_in_accuracy_pct",
    "accuracy_guarded",
    "epsilon",
];

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl ComparisonReport {
    pub fn mean_window_decrease(&self) -> f64 {
        mean(self.rows.iter().map(ComparisonRow::window_decrease))
    }

    pub fn mean_ttx_decrease(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.decrease_in_ttx))
    }

    pub fn mean_accuracy_increase(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.increase_in_accuracy))
    }

    /// Rows whose adaptive error is at most the non-adaptive one.
    pub fn improved(&self) -> usize {
        self.rows.iter().filter(|r| r.adaptive_error() <= r.nonadaptive_error()).count()
    }

    pub fn all_reproducible(&self) -> bool {
        self.rows.iter().all(|r| r.adaptive_error() <= self.reproducibility_threshold)
    }

    /// Cells in [`COMPARISON_HEADER`] order.
    pub fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let acc = if r.accuracy_guarded {
                    format!("{:.0}*", r.increase_in_accuracy)
                } else {
                    format!("{:.0}", r.increase_in_accuracy)
                };
                vec![
                    r.system.clone(),
                    format!("{:.3}", r.reference_ddg),
                    format!("{:.3} ± {:.3}", r.nonadaptive_ddg, r.nonadaptive_stderr),
                    format!("{:.3} ± {:.3}", r.adaptive_ddg, r.adaptive_stderr),
                    r.n_lambda_windows.to_string(),
                    format!("{:.0}", r.decrease_in_ttx),
                    acc,
                ]
            })
            .collect()
    }

    /// Rows in [`COMPARISON_CSV_HEADER`] order.
    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.system.clone(),
                    format!("{:.6}", r.reference_ddg),
                    format!("{:.6}", r.nonadaptive_ddg),
                    format!("{:.6}", r.nonadaptive_stderr),
                    format!("{:.6}", r.adaptive_ddg),
                    format!("{:.6}", r.adaptive_stderr),
                    r.n_lambda_windows.to_string(),
                    format!("{:.3}", r.decrease_in_ttx),
                    format!("{:.3}", r.increase_in_accuracy),
                    r.accuracy_guarded.to_string(),
                    format!("{:.6}", r.epsilon),
                ]
            })
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = render_table(&COMPARISON_HEADER, &self.cells());
        if self.rows.iter().any(|r| r.accuracy_guarded) {
            out.push_str("* non-adaptive run matched the reference; accuracy change reported as 0\n");
        }
        out.push_str(&format!(
            "mean window decrease {:.1}%, mean TTX decrease {:.1}%, mean accuracy increase {:.1}%\n",
            self.mean_window_decrease(),
            self.mean_ttx_decrease(),
            self.mean_accuracy_increase()
        ));
        out
    }
}

/// Runs reference, non-adaptive and adaptive quadrature for every system in `cfg`.
///
/// Each system gets its own campaigns; the adaptive ε is the non-adaptive run's
/// distance from the reference.
pub fn compare(cfg: &CampaignConfig) -> Result<ComparisonReport, RunError> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for system in &cfg.systems {
        let mut one = cfg.clone();
        one.systems = vec![system.clone()];
        one.protocols.retain(|p| p.physical_system == system.label);
        let reference = first(run_mode(&one, CampaignMode::Reference)?.results)?;
        let na = first(run_mode(&one, CampaignMode::Nonadaptive)?.results)?;
        debug_assert_eq!(na.n_windows, NONADAPTIVE_WINDOWS);
        let epsilon = (na.delta_g - reference.delta_g).abs().max(ERROR_FLOOR);
        one.adaptive.error_threshold_epsilon = epsilon;
        let ad = first(run_mode(&one, CampaignMode::AdaptiveQuadrature)?.results)?;
        rows.push(ComparisonRow::build(&reference, &na, &ad, epsilon));
    }
    Ok(ComparisonReport { rows, reproducibility_threshold: cfg.reproducibility_threshold })
}

fn first(results: Vec<SystemResult>) -> Result<SystemResult, RunError> {
    results.into_iter().next().ok_or_else(|| {
        super::config::ConfigError::Invalid { field: "protocols".into(), reason: "no windowed protocol".into() }
            .into()
    })
}
