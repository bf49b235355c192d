use serde::{Deserialize, Serialize};

use crate::protocol::{StageKind, Task};

/// Virtual task durations. Simulation tasks cost `timesteps × k / cores`
/// seconds, where `k` is core-seconds per timestep for the stage kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DurationModel {
    pub minimization_core_s_per_step: f64,
    pub equilibration_core_s_per_step: f64,
    pub production_core_s_per_step: f64,
    /// Seconds per analysis task.
    pub analysis_s: f64,
    pub global_analysis_s: f64,
}

impl Default for DurationModel {
    fn default() -> Self {
        Self {
            minimization_core_s_per_step: 0.2,
            equilibration_core_s_per_step: 0.4,
            production_core_s_per_step: 0.4,
            analysis_s: 60.0,
            global_analysis_s: 30.0,
        }
    }
}

impl DurationModel {
    pub fn seconds(&self, kind: StageKind, timesteps: u64, cores: u32) -> f64 {
        let per_step = match kind {
            StageKind::Minimization => self.minimization_core_s_per_step,
            StageKind::Equilibration => self.equilibration_core_s_per_step,
            StageKind::Production => self.production_core_s_per_step,
            StageKind::Analysis => return self.analysis_s,
            StageKind::GlobalAnalysis => return self.global_analysis_s,
        };
        timesteps as f64 * per_step / f64::from(cores.max(1))
    }

    pub fn task_seconds(&self, task: &Task) -> f64 {
        self.seconds(task.kind, task.timesteps, task.cores)
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = [
            self.minimization_core_s_per_step,
            self.equilibration_core_s_per_step,
            self.production_core_s_per_step,
            self.analysis_s,
            self.global_analysis_s,
        ];
        if all.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err("durations must be finite and >= 0".into())
        }
    }
}

/// Modeled middleware costs, in seconds.
///
/// Framework: `c1·P + c2·P²` for P protocol instances, plus `evaluator_s` for
/// each evaluator decision that changes a pipeline. Runtime: `c3` per task
/// attempt handed to the scheduler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverheadModel {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub evaluator_s: f64,
}

impl Default for OverheadModel {
    fn default() -> Self {
        Self { c1: 1.0, c2: 1.0, c3: 0.15, evaluator_s: 0.5 }
    }
}

impl OverheadModel {
    pub const ZERO: OverheadModel = OverheadModel { c1: 0.0, c2: 0.0, c3: 0.0, evaluator_s: 0.0 };

    pub fn framework_seconds(&self, protocols: usize) -> f64 {
        let p = protocols as f64;
        self.c1 * p + self.c2 * p * p
    }

    pub fn validate(&self) -> Result<(), String> {
        if [self.c1, self.c2, self.c3, self.evaluator_s].iter().all(|v| *v >= 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err("overhead coefficients must be finite and >= 0".into())
        }
    }
}
