//! Published-value comparison for the BRD4 transformations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::table::render_table;

/// A value with its error bar, keeping the decimals it was written with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub value: f64,
    pub error: f64,
    text: String,
}

impl Measurement {
    pub fn new(value: f64, error: f64) -> Self {
        Self { value, error, text: format!("{value}±{error}") }
    }

    /// True when the two intervals overlap: `|a - b| <= ea + eb`.
    pub fn agrees_with(&self, other: &Measurement) -> bool {
        (self.value - other.value).abs() <= self.error + other.error + 1e-12
    }
}

impl FromStr for Measurement {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (v, e) = s.split_once('±').or_else(|| s.split_once("+/-")).ok_or_else(|| format!("no error bar in {s}"))?;
        let norm = |x: &str| x.trim().replace('−', "-");
        let (v, e) = (norm(v), norm(e));
        let value: f64 = v.parse().map_err(|_| format!("bad value {v}"))?;
        let error: f64 = e.parse().map_err(|_| format!("bad error {e}"))?;
        if !(error >= 0.0) {
            return Err(format!("negative error {e}"));
        }
        Ok(Self { value, error, text: format!("{v}±{e}") })
    }
}

impl fmt::Display for Measurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub transformation: String,
    pub computed: Measurement,
    pub published: Measurement,
    pub experiment: Measurement,
}

impl ValidationRow {
    pub fn within_error(&self) -> bool {
        self.computed.agrees_with(&self.published)
    }
}

fn row(label: &str, computed: &str, published: &str, experiment: &str) -> ValidationRow {
    ValidationRow {
        transformation: label.into(),
        computed: computed.parse().expect("fixture"),
        published: published.parse().expect("fixture"),
        experiment: experiment.parse().expect("fixture"),
    }
}

/// ΔΔG in kcal/mol: the ensemble workflow, the published ensemble study, and experiment.
pub fn brd4_fixture() -> Vec<ValidationRow> {
    vec![
        row("BRD4 3 to 1", "0.39±0.10", "0.41±0.04", "0.3±0.09"),
        row("BRD4 3 to 4", "0.02±0.12", "0.01±0.06", "0.0±0.13"),
        row("BRD4 3 to 7", "-0.88±0.17", "-0.90±0.08", "-1.3±0.11"),
    ]
}

pub const VALIDATION_HEADER: [&str; 5] = ["transformation", "htbac", "published", "experiment", "within_error"];

pub fn validation_cells(rows: &[ValidationRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.transformation.clone(),
                r.computed.to_string(),
                r.published.to_string(),
                r.experiment.to_string(),
                r.within_error().to_string(),
            ]
        })
        .collect()
}

pub fn render_validation(rows: &[ValidationRow]) -> String {
    render_table(&VALIDATION_HEADER, &validation_cells(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_written_decimals() {
        let m: Measurement = "0.0±0.13".parse().unwrap();
        assert_eq!(m.to_string(), "0.0±0.13");
        let m: Measurement = "−0.88±0.17".parse().unwrap();
        assert_eq!(m.value, -0.88);
        assert_eq!(m.to_string(), "-0.88±0.17");
    }

    #[test]
    fn disjoint_intervals_disagree() {
        let a: Measurement = "1.0±0.01".parse().unwrap();
        let b: Measurement = "2.0±0.01".parse().unwrap();
        assert!(!a.agrees_with(&b));
    }

    #[test]
    fn rejects_missing_error() {
        assert!("0.4".parse::<Measurement>().is_err());
    }
}
