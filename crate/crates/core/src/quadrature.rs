//! Thermodynamic integration over λ: composite trapezoid, error estimates and
//! the bisection rule that decides where new windows go.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lambda::Lambda;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadratureError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("points are not strictly increasing in lambda at index {0}")]
    Unsorted(usize),
    #[error("points must span [0, 1], got [{lo}, {hi}]")]
    NotSpanning { lo: f64, hi: f64 },
    #[error("point {index} is invalid: {reason}")]
    InvalidPoint { index: usize, reason: &'static str },
    #[error("interval index {k} out of range for {intervals} intervals")]
    IntervalOutOfRange { k: usize, intervals: usize },
}

/// Ensemble summary of ∂U/∂λ at one window, kcal/mol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPoint {
    pub lambda: f64,
    pub mean_dudl: f64,
    pub sem: f64,
}

impl WindowPoint {
    pub fn new(lambda: f64, mean_dudl: f64, sem: f64) -> Self {
        Self { lambda, mean_dudl, sem }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalError {
    pub lo: f64,
    pub hi: f64,
    pub discretization: f64,
    pub statistical: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyEstimate {
    pub delta_g: f64,
    pub stderr: f64,
    pub windows: Vec<WindowPoint>,
}

const SPAN_TOL: f64 = 1e-12;

fn check_points(points: &[WindowPoint], needed: usize) -> Result<(), QuadratureError> {
    if points.len() < needed {
        return Err(QuadratureError::TooFewPoints { needed, got: points.len() });
    }
    for (index, p) in points.iter().enumerate() {
        if !(p.lambda.is_finite() && (0.0..=1.0).contains(&p.lambda)) {
            return Err(QuadratureError::InvalidPoint { index, reason: "lambda outside [0, 1]" });
        }
        if !p.mean_dudl.is_finite() {
            return Err(QuadratureError::InvalidPoint { index, reason: "mean is not finite" });
        }
        if !(p.sem >= 0.0 && p.sem.is_finite()) {
            return Err(QuadratureError::InvalidPoint { index, reason: "sem must be finite and >= 0" });
        }
    }
    if let Some(i) = points.windows(2).position(|w| w[1].lambda <= w[0].lambda) {
        return Err(QuadratureError::Unsorted(i + 1));
    }
    let (lo, hi) = (points[0].lambda, points[points.len() - 1].lambda);
    if lo > SPAN_TOL || hi < 1.0 - SPAN_TOL {
        return Err(QuadratureError::NotSpanning { lo, hi });
    }
    Ok(())
}

/// Composite-trapezoid weight of every node.
fn trapezoid_weights(points: &[WindowPoint]) -> Vec<f64> {
    let n = points.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { points[i].lambda - points[i - 1].lambda } else { 0.0 };
            let right = if i + 1 < n { points[i + 1].lambda - points[i].lambda } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

pub fn trapezoid_integrate(points: &[WindowPoint]) -> Result<f64, QuadratureError> {
    check_points(points, 2)?;
    Ok(points
        .windows(2)
        .map(|w| (w[1].lambda - w[0].lambda) * (w[0].mean_dudl + w[1].mean_dudl) / 2.0)
        .sum())
}

/// sqrt(Σ wᵢ² semᵢ²) with the trapezoid weights wᵢ.
pub fn propagate_statistical_error(points: &[WindowPoint]) -> Result<f64, QuadratureError> {
    check_points(points, 2)?;
    let sum: f64 = trapezoid_weights(points)
        .iter()
        .zip(points)
        .map(|(w, p)| (w * p.sem).powi(2))
        .sum();
    Ok(sum.sqrt())
}

/// Error estimate for the interval `[λ_k, λ_{k+1}]`.
///
/// The discretization part compares the trapezoid with the integral of the
/// quadratic through the two endpoints and the nearest outside node (left
/// neighbour when there is one). That difference is `h³/6 · |f[a, b, c]|`.
pub fn interval_error(points: &[WindowPoint], k: usize) -> Result<IntervalError, QuadratureError> {
    check_points(points, 3)?;
    let intervals = points.len() - 1;
    if k >= intervals {
        return Err(QuadratureError::IntervalOutOfRange { k, intervals });
    }
    Ok(interval_error_unchecked(points, k))
}

fn interval_error_unchecked(points: &[WindowPoint], k: usize) -> IntervalError {
    let a = points[k];
    let b = points[k + 1];
    let c = if k > 0 { points[k - 1] } else { points[k + 2] };
    let h = b.lambda - a.lambda;
    let fab = (b.mean_dudl - a.mean_dudl) / (b.lambda - a.lambda);
    let fbc = (c.mean_dudl - b.mean_dudl) / (c.lambda - b.lambda);
    let fabc = (fbc - fab) / (c.lambda - a.lambda);
    let discretization = (h.powi(3) / 6.0 * fabc).abs();
    let statistical = h / 2.0 * a.sem.hypot(b.sem);
    IntervalError {
        lo: a.lambda,
        hi: b.lambda,
        discretization,
        statistical,
        total: discretization.hypot(statistical),
    }
}

pub fn interval_errors(points: &[WindowPoint]) -> Result<Vec<IntervalError>, QuadratureError> {
    check_points(points, 3)?;
    Ok((0..points.len() - 1).map(|k| interval_error_unchecked(points, k)).collect())
}

/// Midpoints of every interval whose total error exceeds `epsilon / N`.
pub fn propose_refinements(points: &[WindowPoint], epsilon: f64) -> Result<Vec<Lambda>, QuadratureError> {
    propose_refinements_capped(points, epsilon, None)
}

/// Like [`propose_refinements`], but never lets the window count exceed
/// `max_total_windows`. When the cap binds, the worst intervals win; equal
/// errors go to the smaller λ.
pub fn propose_refinements_capped(
    points: &[WindowPoint],
    epsilon: f64,
    max_total_windows: Option<usize>,
) -> Result<Vec<Lambda>, QuadratureError> {
    let errors = interval_errors(points)?;
    let existing: BTreeSet<Lambda> = points
        .iter()
        .map(|p| Lambda::new(p.lambda).expect("checked range"))
        .collect();
    let budget = epsilon / errors.len() as f64;

    let mut candidates: Vec<(f64, Lambda)> = Vec::new();
    for e in errors.iter().filter(|e| e.total > budget) {
        let lo = Lambda::new(e.lo).expect("checked range");
        let hi = Lambda::new(e.hi).expect("checked range");
        let mid = lo.midpoint(hi);
        if !existing.contains(&mid) && !candidates.iter().any(|&(_, l)| l == mid) {
            candidates.push((e.total, mid));
        }
    }
    candidates.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap_or(Ordering::Equal).then(x.1.cmp(&y.1)));
    if let Some(cap) = max_total_windows {
        candidates.truncate(cap.saturating_sub(existing.len()));
    }
    let mut out: Vec<Lambda> = candidates.into_iter().map(|(_, l)| l).collect();
    out.sort();
    Ok(out)
}

/// ΔG with the larger of the propagated and bootstrap standard errors.
pub fn integrate_with_error(
    points: &[WindowPoint],
    bootstrap_stderr: f64,
) -> Result<FreeEnergyEstimate, QuadratureError> {
    let delta_g = trapezoid_integrate(points)?;
    let propagated = propagate_statistical_error(points)?;
    Ok(FreeEnergyEstimate { delta_g, stderr: propagated.max(bootstrap_stderr), windows: points.to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pts(xs: &[(f64, f64)]) -> Vec<WindowPoint> {
        xs.iter().map(|&(l, y)| WindowPoint::new(l, y, 0.0)).collect()
    }

    fn square(n: usize) -> Vec<WindowPoint> {
        (0..n)
            .map(|i| {
                let l = i as f64 / (n - 1) as f64;
                WindowPoint::new(l, l * l, 0.0)
            })
            .collect()
    }

    #[test]
    fn trapezoid_examples() {
        assert_abs_diff_eq!(trapezoid_integrate(&pts(&[(0.0, 0.0), (1.0, 2.0)])).unwrap(), 1.0);
        let ones: Vec<_> = (0..13).map(|i| WindowPoint::new(i as f64 / 12.0, 1.0, 0.0)).collect();
        assert_abs_diff_eq!(trapezoid_integrate(&ones).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(trapezoid_integrate(&square(3)).unwrap(), 0.375, epsilon = 1e-15);
    }

    #[test]
    fn trapezoid_contract_errors() {
        assert!(matches!(
            trapezoid_integrate(&pts(&[(0.0, 1.0)])),
            Err(QuadratureError::TooFewPoints { .. })
        ));
        assert!(matches!(
            trapezoid_integrate(&pts(&[(0.0, 1.0), (0.6, 1.0), (0.5, 1.0), (1.0, 1.0)])),
            Err(QuadratureError::Unsorted(2))
        ));
        assert!(matches!(
            trapezoid_integrate(&pts(&[(0.0, 1.0), (0.9, 1.0)])),
            Err(QuadratureError::NotSpanning { .. })
        ));
    }

    #[test]
    fn statistical_error_examples() {
        let two = vec![WindowPoint::new(0.0, 0.0, 0.1), WindowPoint::new(1.0, 0.0, 0.1)];
        assert_abs_diff_eq!(propagate_statistical_error(&two).unwrap(), 0.070711, epsilon = 1e-6);
        let three: Vec<_> = [0.0, 0.5, 1.0].iter().map(|&l| WindowPoint::new(l, 0.0, 0.1)).collect();
        assert_abs_diff_eq!(propagate_statistical_error(&three).unwrap(), 0.061237, epsilon = 1e-6);
        assert_eq!(propagate_statistical_error(&square(5)).unwrap(), 0.0);
    }

    #[test]
    fn interval_error_examples() {
        let line = pts(&[(0.0, 0.0), (0.5, 0.5), (1.0, 1.0)]);
        for k in 0..2 {
            assert_abs_diff_eq!(interval_error(&line, k).unwrap().discretization, 0.0, epsilon = 1e-15);
        }
        let e = interval_error(&square(3), 1).unwrap();
        assert_abs_diff_eq!(e.discretization, 0.3125 - 7.0 / 24.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.discretization, 0.020833, epsilon = 1e-6);

        let flat: Vec<_> = [0.0, 0.5, 1.0].iter().map(|&l| WindowPoint::new(l, 2.0, 0.1)).collect();
        let e = interval_error(&flat, 0).unwrap();
        assert_abs_diff_eq!(e.total, 0.035355, epsilon = 1e-6);
        assert_eq!(e.total, e.statistical);

        assert!(matches!(interval_error(&flat, 2), Err(QuadratureError::IntervalOutOfRange { .. })));
        assert!(matches!(
            interval_error(&pts(&[(0.0, 0.0), (1.0, 1.0)]), 0),
            Err(QuadratureError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn refinement_examples() {
        assert!(propose_refinements(&square(3), 1e6).unwrap().is_empty());
        let mids: Vec<f64> =
            propose_refinements(&square(3), 0.001).unwrap().iter().map(|l| l.value()).collect();
        assert_eq!(mids, vec![0.25, 0.75]);
    }

    #[test]
    fn cap_keeps_worst_then_smaller_lambda() {
        // a noisy right end makes the right interval worse than the left
        let mut lopsided = square(3);
        lopsided[2].sem = 0.1;
        let m = propose_refinements_capped(&lopsided, 1e-4, Some(4)).unwrap();
        assert_eq!(m.iter().map(|l| l.milli()).collect::<Vec<_>>(), vec![750]);
        // equal errors: smaller λ first
        let m = propose_refinements_capped(&square(3), 1e-4, Some(4)).unwrap();
        assert_eq!(m.iter().map(|l| l.milli()).collect::<Vec<_>>(), vec![250]);
        assert!(propose_refinements_capped(&square(3), 1e-4, Some(3)).unwrap().is_empty());
    }

    #[test]
    fn integrate_with_error_takes_the_larger() {
        let est = integrate_with_error(&pts(&[(0.0, 0.0), (1.0, 2.0)]), 0.0).unwrap();
        assert_eq!(est.delta_g, 1.0);
        assert_eq!(est.stderr, 0.0);
        let two = vec![WindowPoint::new(0.0, 0.0, 0.1), WindowPoint::new(1.0, 0.0, 0.1)];
        assert_abs_diff_eq!(integrate_with_error(&two, 0.5).unwrap().stderr, 0.5);
        assert_abs_diff_eq!(integrate_with_error(&two, 0.01).unwrap().stderr, 0.070711, epsilon = 1e-6);
    }
}
