//! Config-driven campaigns and the reports built from them.

mod compare;
mod config;
mod run;
mod sweep;
mod table;
mod termination;
mod validation;

pub use compare::{compare, ComparisonReport, ComparisonRow, COMPARISON_CSV_HEADER, COMPARISON_HEADER, ERROR_FLOOR};
pub use config::{
    CampaignConfig, CampaignMode, ConfigError, Rung, SweepConfig, SweepKind, TerminationSettings,
};
pub use run::{
    base_protocols, create_file, file_stem, protocol_for_mode, run_mode, write_run_outputs, RunError, RunOutput, SystemResult,
    NONADAPTIVE_WINDOWS, REFERENCE_WINDOWS,
};
pub use sweep::{ladder, sweep, sweep_protocols, ttx_spread, write_sweep_csv, SweepPoint};
pub use table::{render_table, write_table_csv};
pub use termination::{termination_report, TerminationReport, TerminationRow, TERMINATION_HEADER};
pub use validation::{
    brd4_fixture, render_validation, validation_cells, Measurement, ValidationRow, VALIDATION_HEADER,
};
