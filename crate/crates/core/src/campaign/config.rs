use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptive::SamplingConfig;
use crate::engine::{DurationModel, OverheadModel, PilotConfig};
use crate::protocol::{AdaptiveConfig, ProtocolKind, ProtocolSpec, TimestepMode};
use crate::synth::SyntheticSystem;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config does not parse: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, reason: impl fmt::Display) -> Self {
        ConfigError::Invalid { field: field.into(), reason: reason.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CampaignMode {
    Nonadaptive,
    AdaptiveQuadrature,
    AdaptiveTermination,
    Reference,
}

impl CampaignMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CampaignMode::Nonadaptive => "NONADAPTIVE",
            CampaignMode::AdaptiveQuadrature => "ADAPTIVE_QUADRATURE",
            CampaignMode::AdaptiveTermination => "ADAPTIVE_TERMINATION",
            CampaignMode::Reference => "REFERENCE",
        }
    }
}

impl fmt::Display for CampaignMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CampaignMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "NONADAPTIVE" => Ok(CampaignMode::Nonadaptive),
            "ADAPTIVE_QUADRATURE" => Ok(CampaignMode::AdaptiveQuadrature),
            "ADAPTIVE_TERMINATION" => Ok(CampaignMode::AdaptiveTermination),
            "REFERENCE" => Ok(CampaignMode::Reference),
            other => Err(format!("unknown mode {other}")),
        }
    }
}

fn default_nonadaptive_ns() -> f64 {
    6.0
}
fn default_max_checkpoints() -> u32 {
    12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminationSettings {
    /// Fixed production length of the protocol being compared against.
    #[serde(default = "default_nonadaptive_ns")]
    pub nonadaptive_ns: f64,
    /// Production sub-stages of τ before the run stops regardless.
    #[serde(default = "default_max_checkpoints")]
    pub max_checkpoints: u32,
}

impl Default for TerminationSettings {
    fn default() -> Self {
        Self { nonadaptive_ns: default_nonadaptive_ns(), max_checkpoints: default_max_checkpoints() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SweepKind {
    Weak,
    Strong,
}

impl std::str::FromStr for SweepKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "WEAK" => Ok(SweepKind::Weak),
            "STRONG" => Ok(SweepKind::Strong),
            other => Err(format!("unknown sweep kind {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rung {
    pub protocols: usize,
    pub total_cores: u32,
}

fn default_weak() -> Vec<Rung> {
    vec![
        Rung { protocols: 2, total_cores: 4160 },
        Rung { protocols: 4, total_cores: 8320 },
        Rung { protocols: 8, total_cores: 16640 },
    ]
}
fn default_strong_protocols() -> usize {
    8
}
fn default_strong_cores() -> Vec<u32> {
    vec![16640, 8320, 4160]
}
fn default_sweep_kind() -> ProtocolKind {
    ProtocolKind::Ties
}
fn default_sweep_timesteps() -> TimestepMode {
    TimestepMode::Scaling
}

/// Scale ladders for `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default = "default_sweep_kind")]
    pub protocol: ProtocolKind,
    #[serde(default = "default_sweep_timesteps")]
    pub timesteps: TimestepMode,
    #[serde(default = "default_weak")]
    pub weak: Vec<Rung>,
    #[serde(default = "default_strong_protocols")]
    pub strong_protocols: usize,
    #[serde(default = "default_strong_cores")]
    pub strong_cores: Vec<u32>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            protocol: default_sweep_kind(),
            timesteps: default_sweep_timesteps(),
            weak: default_weak(),
            strong_protocols: default_strong_protocols(),
            strong_cores: default_strong_cores(),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_reproducibility() -> f64 {
    0.2
}
fn default_mode() -> CampaignMode {
    CampaignMode::Nonadaptive
}

/// Everything a campaign needs, read from a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: CampaignMode,
    /// Explicit protocols. When empty, one production TIES protocol is run per system.
    #[serde(default)]
    pub protocols: Vec<ProtocolSpec>,
    pub pilot: PilotConfig,
    #[serde(default)]
    pub systems: Vec<SyntheticSystem>,
    #[serde(default)]
    pub adaptive: AdaptiveConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub durations: DurationModel,
    #[serde(default)]
    pub overheads: OverheadModel,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub termination: TerminationSettings,
    #[serde(default)]
    pub sweep: SweepConfig,
    /// Adaptive errors at or below this are considered reproducible, kcal/mol.
    #[serde(default = "default_reproducibility")]
    pub reproducibility_threshold: f64,
}

impl CampaignConfig {
    pub fn new(seed: u64, pilot: PilotConfig, systems: Vec<SyntheticSystem>) -> Self {
        Self {
            seed,
            mode: default_mode(),
            protocols: Vec::new(),
            pilot,
            systems,
            adaptive: AdaptiveConfig::default(),
            output_dir: default_output_dir(),
            durations: DurationModel::default(),
            overheads: OverheadModel::default(),
            sampling: SamplingConfig::default(),
            termination: TerminationSettings::default(),
            sweep: SweepConfig::default(),
            reproducibility_threshold: default_reproducibility(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: CampaignConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn system(&self, label: &str) -> Option<&SyntheticSystem> {
        self.systems.iter().find(|s| s.label == label)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.pilot.validate().map_err(|e| ConfigError::invalid("pilot", e))?;
        self.durations.validate().map_err(|e| ConfigError::invalid("durations", e))?;
        self.overheads.validate().map_err(|e| ConfigError::invalid("overheads", e))?;
        self.sampling.validate().map_err(|e| ConfigError::invalid("sampling", e))?;
        self.adaptive.validate().map_err(|e| ConfigError::invalid("adaptive", e))?;
        for (i, s) in self.systems.iter().enumerate() {
            if s.label.trim().is_empty() {
                return Err(ConfigError::invalid(format!("systems[{i}].label"), "must not be empty"));
            }
            s.validate().map_err(|e| ConfigError::invalid(format!("systems[{i}]"), e))?;
            if self.systems[..i].iter().any(|o| o.label == s.label) {
                return Err(ConfigError::invalid(format!("systems[{i}].label"), format!("duplicate {}", s.label)));
            }
        }
        for (i, p) in self.protocols.iter().enumerate() {
            p.validate().map_err(|e| ConfigError::invalid(format!("protocols[{i}]"), e))?;
            if p.kind != ProtocolKind::Esmacs && self.system(&p.physical_system).is_none() {
                return Err(ConfigError::invalid(
                    format!("protocols[{i}].physical_system"),
                    format!("no system labelled {}", p.physical_system),
                ));
            }
        }
        if !(self.termination.nonadaptive_ns > 0.0) {
            return Err(ConfigError::invalid("termination.nonadaptive_ns", "must be positive"));
        }
        if self.termination.max_checkpoints == 0 {
            return Err(ConfigError::invalid("termination.max_checkpoints", "must be positive"));
        }
        if !(self.reproducibility_threshold > 0.0) {
            return Err(ConfigError::invalid("reproducibility_threshold", "must be positive"));
        }
        if self.sweep.weak.iter().any(|r| r.protocols == 0) || self.sweep.strong_protocols == 0 {
            return Err(ConfigError::invalid("sweep", "rungs need at least one protocol"));
        }
        Ok(())
    }
}
