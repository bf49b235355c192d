//! Where task attempts actually run: on the virtual clock, or as local processes.

use std::process::{Command, Stdio};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::DurationModel;
use super::timeline::{to_micros, Micros};
use crate::protocol::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerationInfo {
    pub index: u32,
    pub width: usize,
    /// The generation launches more tasks than the pilot tolerates.
    pub over_cap: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttemptResult {
    pub duration_us: Micros,
    pub failed: bool,
}

pub trait Backend {
    /// Runs one generation of attempts and reports each one's outcome in order.
    fn execute(&mut self, generation: &GenerationInfo, batch: &[&Task]) -> Vec<AttemptResult>;
}

/// Modeled durations plus seeded failure injection for over-cap generations.
#[derive(Debug, Clone)]
pub struct SimulatedBackend {
    durations: DurationModel,
    failure_probability: f64,
    rng: ChaCha8Rng,
}

impl SimulatedBackend {
    pub fn new(durations: DurationModel, failure_probability: f64, seed: u64) -> Self {
        Self { durations, failure_probability, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Backend for SimulatedBackend {
    fn execute(&mut self, generation: &GenerationInfo, batch: &[&Task]) -> Vec<AttemptResult> {
        batch
            .iter()
            .map(|task| {
                let failed = generation.over_cap && self.rng.random::<f64>() < self.failure_probability;
                let duration_us = if failed { 0 } else { to_micros(self.durations.task_seconds(task)) };
                AttemptResult { duration_us, failed }
            })
            .collect()
    }
}

type CommandFactory = Box<dyn Fn(&Task) -> Option<Command> + Send + Sync>;

/// Runs each task as a local process. Durations are measured wall-clock time and
/// a non-zero exit status counts as a failed attempt. Tasks for which the
/// factory returns `None` complete instantly.
pub struct LocalBackend {
    factory: CommandFactory,
}

impl LocalBackend {
    pub fn new(factory: impl Fn(&Task) -> Option<Command> + Send + Sync + 'static) -> Self {
        Self { factory: Box::new(factory) }
    }

    fn run_one(&self, task: &Task) -> AttemptResult {
        let Some(mut cmd) = (self.factory)(task) else {
            return AttemptResult { duration_us: 0, failed: false };
        };
        let started = Instant::now();
        let ok = cmd
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map(|s| s.success())
            .unwrap_or(false);
        AttemptResult { duration_us: started.elapsed().as_micros() as Micros, failed: !ok }
    }
}

impl Backend for LocalBackend {
    fn execute(&mut self, _generation: &GenerationInfo, batch: &[&Task]) -> Vec<AttemptResult> {
        let this = &*self;
        std::thread::scope(|scope| {
            let handles: Vec<_> = batch.iter().map(|&task| scope.spawn(move || this.run_one(task))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or(AttemptResult { duration_us: 0, failed: true }))
                .collect()
        })
    }
}
