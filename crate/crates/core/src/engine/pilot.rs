use serde::{Deserialize, Serialize};

use crate::protocol::DEFAULT_CORES_PER_TASK;

fn default_cores_per_task() -> u32 {
    DEFAULT_CORES_PER_TASK
}
fn default_concurrency_cap() -> usize {
    450
}
fn default_launch_delay() -> f64 {
    0.1
}
fn default_retry_penalty() -> f64 {
    1.0
}
fn default_failure_probability() -> f64 {
    0.1346
}
fn default_walltime() -> f64 {
    30.0 * 86_400.0
}

/// A block of cores acquired once and shared by every task of a campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotConfig {
    pub total_cores: u32,
    #[serde(default = "default_cores_per_task")]
    pub cores_per_task: u32,
    /// Concurrent launches above this count start failing.
    #[serde(default = "default_concurrency_cap")]
    pub concurrency_cap: usize,
    /// Seconds spent launching each task.
    #[serde(default = "default_launch_delay")]
    pub launch_delay_per_task: f64,
    /// Extra seconds spent relaunching a failed task.
    #[serde(default = "default_retry_penalty")]
    pub retry_penalty: f64,
    #[serde(default = "default_failure_probability")]
    pub failure_probability_over_cap: f64,
    /// Seconds.
    #[serde(default = "default_walltime")]
    pub walltime: f64,
}

impl PilotConfig {
    pub fn with_cores(total_cores: u32) -> Self {
        Self {
            total_cores,
            cores_per_task: default_cores_per_task(),
            concurrency_cap: default_concurrency_cap(),
            launch_delay_per_task: default_launch_delay(),
            retry_penalty: default_retry_penalty(),
            failure_probability_over_cap: default_failure_probability(),
            walltime: default_walltime(),
        }
    }

    /// No launch cost and no failures; handy for isolating task execution time.
    pub fn ideal(total_cores: u32) -> Self {
        Self {
            launch_delay_per_task: 0.0,
            retry_penalty: 0.0,
            failure_probability_over_cap: 0.0,
            ..Self::with_cores(total_cores)
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.cores_per_task == 0 {
            return Err("pilot.cores_per_task must be positive".into());
        }
        if self.total_cores < self.cores_per_task {
            return Err(format!(
                "pilot.total_cores ({}) is below cores_per_task ({})",
                self.total_cores, self.cores_per_task
            ));
        }
        if !(0.0..=1.0).contains(&self.failure_probability_over_cap) {
            return Err("pilot.failure_probability_over_cap must lie in [0, 1]".into());
        }
        for (name, v) in [
            ("launch_delay_per_task", self.launch_delay_per_task),
            ("retry_penalty", self.retry_penalty),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("pilot.{name} must be finite and >= 0"));
            }
        }
        if !(self.walltime > 0.0) {
            return Err("pilot.walltime must be positive".into());
        }
        Ok(())
    }
}

/// Tasks that can run at once.
pub fn slots(pilot: &PilotConfig) -> usize {
    (pilot.total_cores / pilot.cores_per_task) as usize
}

/// Waves needed to push `n_tasks` independent tasks through the pilot.
pub fn generation_count(n_tasks: usize, pilot: &PilotConfig) -> usize {
    n_tasks.div_ceil(slots(pilot).max(1))
}
