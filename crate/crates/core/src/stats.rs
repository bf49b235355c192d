//! Ensemble statistics over replica trajectories.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lambda::Lambda;
use crate::quadrature::{trapezoid_integrate, QuadratureError, WindowPoint};

pub const DEFAULT_DISCARD_FRACTION: f64 = 0.1;
pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 1000;

/// Slack for comparing checkpoint differences against the threshold, so that
/// values such as 5.00 and 4.99 count as exactly 0.01 apart.
const CONVERGENCE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("window at lambda {lambda} has {got} replicas, at least 2 are needed")]
    TooFewReplicas { lambda: f64, got: usize },
    #[error("discard fraction must lie in [0, 1), got {0}")]
    DiscardFraction(f64),
    #[error("series for lambda {lambda}, replica {replica} has no samples left after discarding")]
    EmptySeries { lambda: f64, replica: u32 },
    #[error("series for lambda {lambda}, replica {replica} holds {have} samples, checkpoint needs {need}")]
    SeriesTooShort { lambda: f64, replica: u32, have: usize, need: usize },
    #[error("series at one window disagree on lambda")]
    MixedLambdas,
    #[error("bootstrap needs at least 100 resamples, got {0}")]
    TooFewResamples(usize),
    #[error("checkpoint time must be positive, got {0} ns")]
    CheckpointTime(f64),
    #[error("checkpoint at {time} ns does not follow the previous one by tau = {tau} ns")]
    CheckpointSpacing { time: f64, tau: f64 },
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// One replica's ∂U/∂λ samples at a single window. `dt` is ps per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuDlSeries {
    pub lambda: Lambda,
    pub replica_index: u32,
    pub dt: f64,
    pub values: Vec<f64>,
}

impl DuDlSeries {
    /// Simulated length in ns.
    pub fn duration_ns(&self) -> f64 {
        self.values.len() as f64 * self.dt / 1000.0
    }
}

fn check_discard(discard_fraction: f64) -> Result<(), StatsError> {
    if (0.0..1.0).contains(&discard_fraction) {
        Ok(())
    } else {
        Err(StatsError::DiscardFraction(discard_fraction))
    }
}

fn burned_mean(series: &DuDlSeries, upto: usize, discard_fraction: f64) -> Result<f64, StatsError> {
    let skip = (discard_fraction * upto as f64).floor() as usize;
    let kept = &series.values[skip..upto];
    if kept.is_empty() {
        return Err(StatsError::EmptySeries { lambda: series.lambda.value(), replica: series.replica_index });
    }
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Per-replica means after dropping the first `⌊discard·n⌋` samples.
pub fn replica_means(series_set: &[DuDlSeries], discard_fraction: f64) -> Result<Vec<f64>, StatsError> {
    check_discard(discard_fraction)?;
    series_set.iter().map(|s| burned_mean(s, s.values.len(), discard_fraction)).collect()
}

/// Summarizes the replicas at one window from their replica means.
pub fn point_from_means(lambda: Lambda, means: &[f64]) -> Result<WindowPoint, StatsError> {
    if means.len() < 2 {
        return Err(StatsError::TooFewReplicas { lambda: lambda.value(), got: means.len() });
    }
    let all_equal = means.iter().all(|&m| m == means[0]);
    let sem = if all_equal { 0.0 } else { sample_std(means) / (means.len() as f64).sqrt() };
    Ok(WindowPoint::new(lambda.value(), mean(means), sem))
}

pub fn window_estimate(series_set: &[DuDlSeries], discard_fraction: f64) -> Result<WindowPoint, StatsError> {
    let lambda = series_set
        .first()
        .map(|s| s.lambda)
        .ok_or(StatsError::TooFewReplicas { lambda: f64::NAN, got: 0 })?;
    if series_set.iter().any(|s| s.lambda != lambda) {
        return Err(StatsError::MixedLambdas);
    }
    let means = replica_means(series_set, discard_fraction)?;
    point_from_means(lambda, &means)
}

/// Replica means of one window, as consumed by the bootstrap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReplicas {
    pub lambda: f64,
    pub replica_means: Vec<f64>,
}

/// Standard deviation of ΔG over `b` bootstrap resamples of the replica means.
pub fn bootstrap_delta_g_stderr(windows: &[WindowReplicas], b: usize, seed: u64) -> Result<f64, StatsError> {
    if b < 100 {
        return Err(StatsError::TooFewResamples(b));
    }
    for w in windows {
        if w.replica_means.len() < 2 {
            return Err(StatsError::TooFewReplicas { lambda: w.lambda, got: w.replica_means.len() });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<WindowPoint> = windows.iter().map(|w| WindowPoint::new(w.lambda, 0.0, 0.0)).collect();
    let mut integrals = Vec::with_capacity(b);
    for _ in 0..b {
        for (p, w) in points.iter_mut().zip(windows) {
            let r = w.replica_means.len();
            let total: f64 = (0..r).map(|_| w.replica_means[rng.random_range(0..r)]).sum();
            p.mean_dudl = total / r as f64;
        }
        integrals.push(trapezoid_integrate(&points)?);
    }
    Ok(sample_std(&integrals))
}

/// ΔG estimates taken every `tau` ns of production.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHistory {
    pub tau: f64,
    pub estimates: Vec<(f64, f64)>,
}

impl CheckpointHistory {
    pub fn new(tau: f64) -> Self {
        Self { tau, estimates: Vec::new() }
    }

    /// Builds a history from consecutive estimates at τ, 2τ, 3τ, ...
    pub fn from_values(tau: f64, values: &[f64]) -> Self {
        Self {
            tau,
            estimates: values.iter().enumerate().map(|(i, &v)| ((i + 1) as f64 * tau, v)).collect(),
        }
    }

    pub fn push(&mut self, time_ns: f64, delta_g: f64) -> Result<(), StatsError> {
        let expected = self.estimates.last().map_or(self.tau, |&(t, _)| t + self.tau);
        if (time_ns - expected).abs() > 1e-9 * expected.max(1.0) {
            return Err(StatsError::CheckpointSpacing { time: time_ns, tau: self.tau });
        }
        self.estimates.push((time_ns, delta_g));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }
}

/// ΔG using only samples with timestamp ≤ `checkpoint_time` (ns).
///
/// Sample `i` of a series is stamped at `(i + 1)·dt`.
pub fn checkpoint_estimate(
    windows: &[Vec<DuDlSeries>],
    checkpoint_time: f64,
    discard_fraction: f64,
) -> Result<f64, StatsError> {
    check_discard(discard_fraction)?;
    if !(checkpoint_time > 0.0) {
        return Err(StatsError::CheckpointTime(checkpoint_time));
    }
    let mut points = Vec::with_capacity(windows.len());
    for series_set in windows {
        let lambda = series_set
            .first()
            .map(|s| s.lambda)
            .ok_or(StatsError::TooFewReplicas { lambda: f64::NAN, got: 0 })?;
        let mut means = Vec::with_capacity(series_set.len());
        for s in series_set {
            let need = (checkpoint_time * 1000.0 / s.dt + 1e-9).floor() as usize;
            if s.values.len() < need {
                return Err(StatsError::SeriesTooShort {
                    lambda: s.lambda.value(),
                    replica: s.replica_index,
                    have: s.values.len(),
                    need,
                });
            }
            means.push(burned_mean(s, need, discard_fraction)?);
        }
        points.push(point_from_means(lambda, &means)?);
    }
    Ok(trapezoid_integrate(&points)?)
}

/// True once there are enough checkpoints and the last two differ by at most `threshold`.
///
/// A non-positive threshold never converges, which disables early termination.
pub fn convergence_check(history: &CheckpointHistory, threshold: f64, min_checkpoints: usize) -> bool {
    let n = history.estimates.len();
    if threshold <= 0.0 || n < min_checkpoints.max(2) {
        return false;
    }
    let last = history.estimates[n - 1].1;
    let prev = history.estimates[n - 2].1;
    (last - prev).abs() <= threshold + CONVERGENCE_SLACK
}
