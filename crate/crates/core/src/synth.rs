//! Synthetic ∂U/∂λ generator standing in for an MD engine.
//!
//! A sample is `f(λ) + drift(t) + ε_t` where `f` is a ground-truth curve,
//! the drift decays exponentially (an un-equilibrated start) and `ε` is AR(1)
//! noise whose stationary standard deviation is `sigma`. Every
//! (seed, window, replica) triple owns an independent random stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lambda::Lambda;
use crate::stats::DuDlSeries;

/// Node count of the dense trapezoid used where no closed form is implemented.
pub const ORACLE_NODES: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("sigma must be finite and >= 0, got {0}")]
    Sigma(f64),
    #[error("ar1_phi must lie in [0, 1), got {0}")]
    Phi(f64),
    #[error("drift_timescale must be positive when drift_amplitude is non-zero, got {0}")]
    DriftTimescale(f64),
    #[error("drift_amplitude must be finite, got {0}")]
    DriftAmplitude(f64),
    #[error("n_samples must be at least 1")]
    NoSamples,
    #[error("dt must be positive, got {0}")]
    Dt(f64),
    #[error("curve parameter {0} is invalid")]
    Curve(&'static str),
}

/// Ground-truth ⟨∂U/∂λ⟩(λ), kcal/mol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GroundTruthCurve {
    Constant { c: f64 },
    /// `a + b·λ`
    Linear { a: f64, b: f64 },
    /// `a + b·λ + c·λ²`
    Quadratic { a: f64, b: f64, c: f64 },
    /// `amplitude·exp(−(λ−center)²/(2·width²)) + slope·λ + offset`
    GaussBump {
        #[serde(default = "half")]
        center: f64,
        width: f64,
        amplitude: f64,
        #[serde(default)]
        slope: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `scale / |λ − pole| + slope·λ + offset`, pole outside [0, 1].
    Rational {
        pole: f64,
        scale: f64,
        #[serde(default)]
        slope: f64,
        #[serde(default)]
        offset: f64,
    },
}

fn half() -> f64 {
    0.5
}

impl GroundTruthCurve {
    pub fn gauss_bump(center: f64, width: f64, amplitude: f64, slope: f64) -> Self {
        Self::GaussBump { center, width, amplitude, slope, offset: 0.0 }
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        match *self {
            Self::Constant { c } => c,
            Self::Linear { a, b } => a + b * lambda,
            Self::Quadratic { a, b, c } => a + b * lambda + c * lambda * lambda,
            Self::GaussBump { center, width, amplitude, slope, offset } => {
                let z = (lambda - center) / width;
                amplitude * (-0.5 * z * z).exp() + slope * lambda + offset
            }
            Self::Rational { pole, scale, slope, offset } => {
                scale / (lambda - pole).abs() + slope * lambda + offset
            }
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let finite = |v: f64, name| if v.is_finite() { Ok(()) } else { Err(SynthError::Curve(name)) };
        match *self {
            Self::Constant { c } => finite(c, "c"),
            Self::Linear { a, b } => finite(a, "a").and(finite(b, "b")),
            Self::Quadratic { a, b, c } => finite(a, "a").and(finite(b, "b")).and(finite(c, "c")),
            Self::GaussBump { center, width, amplitude, slope, offset } => {
                finite(center, "center")?;
                finite(amplitude, "amplitude")?;
                finite(slope, "slope")?;
                finite(offset, "offset")?;
                if !(width > 0.0 && width.is_finite()) {
                    return Err(SynthError::Curve("width"));
                }
                Ok(())
            }
            Self::Rational { pole, scale, slope, offset } => {
                finite(scale, "scale")?;
                finite(slope, "slope")?;
                finite(offset, "offset")?;
                if !pole.is_finite() || (0.0..=1.0).contains(&pole) {
                    return Err(SynthError::Curve("pole"));
                }
                Ok(())
            }
        }
    }
}

/// ∫₀¹ f(λ) dλ: closed form for the polynomial presets, a dense trapezoid otherwise.
pub fn analytic_integral(curve: &GroundTruthCurve) -> f64 {
    match *curve {
        GroundTruthCurve::Constant { c } => c,
        GroundTruthCurve::Linear { a, b } => a + b / 2.0,
        GroundTruthCurve::Quadratic { a, b, c } => a + b / 2.0 + c / 3.0,
        _ => dense_trapezoid(|l| curve.eval(l), ORACLE_NODES),
    }
}

fn dense_trapezoid(f: impl Fn(f64) -> f64, nodes: usize) -> f64 {
    let h = 1.0 / (nodes - 1) as f64;
    let interior: f64 = (1..nodes - 1).map(|i| f(i as f64 * h)).sum();
    h * (interior + 0.5 * (f(0.0) + f(1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Stationary standard deviation, kcal/mol.
    pub sigma: f64,
    pub ar1_phi: f64,
    #[serde(default)]
    pub drift_amplitude: f64,
    /// ps
    #[serde(default = "default_drift_timescale")]
    pub drift_timescale: f64,
}

fn default_drift_timescale() -> f64 {
    100.0
}

impl NoiseModel {
    pub const SILENT: NoiseModel =
        NoiseModel { sigma: 0.0, ar1_phi: 0.0, drift_amplitude: 0.0, drift_timescale: 100.0 };

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(SynthError::Sigma(self.sigma));
        }
        if !(0.0..1.0).contains(&self.ar1_phi) {
            return Err(SynthError::Phi(self.ar1_phi));
        }
        if !self.drift_amplitude.is_finite() {
            return Err(SynthError::DriftAmplitude(self.drift_amplitude));
        }
        if self.drift_amplitude != 0.0 && !(self.drift_timescale > 0.0 && self.drift_timescale.is_finite()) {
            return Err(SynthError::DriftTimescale(self.drift_timescale));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream seed for one (window, replica) pair. Independent of creation order.
pub fn stream_seed(seed: u64, lambda: Lambda, replica_index: u32) -> u64 {
    let h = splitmix64(seed);
    let h = splitmix64(h ^ u64::from(lambda.milli()));
    splitmix64(h ^ (u64::from(replica_index) << 32 | 0x5EED))
}

/// Generates one replica's ∂U/∂λ trajectory. `dt` is ps per sample.
pub fn du_dl_series(
    curve: &GroundTruthCurve,
    noise: &NoiseModel,
    lambda: Lambda,
    n_samples: usize,
    dt: f64,
    seed: u64,
    replica_index: u32,
) -> Result<DuDlSeries, SynthError> {
    noise.validate()?;
    curve.validate()?;
    if n_samples == 0 {
        return Err(SynthError::NoSamples);
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SynthError::Dt(dt));
    }
    let truth = curve.eval(lambda.value());
    let mut values = Vec::with_capacity(n_samples);
    let drift = |t: usize| {
        if noise.drift_amplitude == 0.0 {
            0.0
        } else {
            noise.drift_amplitude * (-(t as f64) * dt / noise.drift_timescale).exp()
        }
    };
    if noise.sigma == 0.0 {
        values.extend((0..n_samples).map(|t| truth + drift(t)));
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, lambda, replica_index));
        let innovation_sd = noise.sigma * (1.0 - noise.ar1_phi * noise.ar1_phi).sqrt();
        let stationary = Normal::new(0.0, noise.sigma).expect("validated sigma");
        let innovation = Normal::new(0.0, innovation_sd).expect("validated sigma");
        let mut eps = stationary.sample(&mut rng);
        for t in 0..n_samples {
            if t > 0 {
                eps = noise.ar1_phi * eps + innovation.sample(&mut rng);
            }
            values.push(truth + drift(t) + eps);
        }
    }
    Ok(DuDlSeries { lambda, replica_index, dt, values })
}

/// A synthetic stand-in for a protein-ligand system: truth curve plus noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSystem {
    pub label: String,
    pub curve: GroundTruthCurve,
    pub noise: NoiseModel,
}

impl SyntheticSystem {
    pub fn new(label: &str, curve: GroundTruthCurve, noise: NoiseModel) -> Self {
        Self { label: label.to_string(), curve, noise }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.curve.validate()?;
        self.noise.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(v: f64) -> Lambda {
        Lambda::new(v).unwrap()
    }

    #[test]
    fn constant_without_noise_is_flat() {
        let s = du_dl_series(&GroundTruthCurve::Constant { c: 3.0 }, &NoiseModel::SILENT, l(0.3), 50, 1.0, 1, 0)
            .unwrap();
        assert!(s.values.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn bump_peak_value() {
        let c = GroundTruthCurve::gauss_bump(0.5, 0.1, 5.0, 0.0);
        let s = du_dl_series(&c, &NoiseModel::SILENT, l(0.5), 10, 1.0, 1, 0).unwrap();
        assert!(s.values.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let noise = NoiseModel { sigma: 1.0, ar1_phi: 0.5, drift_amplitude: 0.0, drift_timescale: 1.0 };
        let c = GroundTruthCurve::Constant { c: 0.0 };
        let a = du_dl_series(&c, &noise, l(0.25), 100, 2.0, 9, 3).unwrap();
        let b = du_dl_series(&c, &noise, l(0.25), 100, 2.0, 9, 3).unwrap();
        assert_eq!(a, b);
        let other_replica = du_dl_series(&c, &noise, l(0.25), 100, 2.0, 9, 4).unwrap();
        let other_window = du_dl_series(&c, &noise, l(0.75), 100, 2.0, 9, 3).unwrap();
        assert_ne!(a.values, other_replica.values);
        assert_ne!(a.values, other_window.values);
    }

    #[test]
    fn drift_decays() {
        let noise = NoiseModel { sigma: 0.0, ar1_phi: 0.0, drift_amplitude: 2.0, drift_timescale: 10.0 };
        let s = du_dl_series(&GroundTruthCurve::Constant { c: 1.0 }, &noise, l(0.0), 100, 1.0, 0, 0).unwrap();
        assert_eq!(s.values[0], 3.0);
        assert!((s.values[10] - (1.0 + 2.0 * (-1.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        let c = GroundTruthCurve::Constant { c: 0.0 };
        let bad_phi = NoiseModel { ar1_phi: 1.0, ..NoiseModel::SILENT };
        assert!(matches!(du_dl_series(&c, &bad_phi, l(0.0), 5, 1.0, 0, 0), Err(SynthError::Phi(_))));
        let bad_sigma = NoiseModel { sigma: -1.0, ..NoiseModel::SILENT };
        assert!(matches!(du_dl_series(&c, &bad_sigma, l(0.0), 5, 1.0, 0, 0), Err(SynthError::Sigma(_))));
        assert!(matches!(
            du_dl_series(&c, &NoiseModel::SILENT, l(0.0), 0, 1.0, 0, 0),
            Err(SynthError::NoSamples)
        ));
        let pole_inside = GroundTruthCurve::Rational { pole: 0.5, scale: 1.0, slope: 0.0, offset: 0.0 };
        assert!(pole_inside.validate().is_err());
    }

    #[test]
    fn closed_forms() {
        assert_eq!(analytic_integral(&GroundTruthCurve::Constant { c: 3.0 }), 3.0);
        assert_eq!(analytic_integral(&GroundTruthCurve::Linear { a: 0.0, b: 2.0 }), 1.0);
        assert!((analytic_integral(&GroundTruthCurve::Quadratic { a: 0.0, b: 0.0, c: 1.0 }) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn curve_json_shape() {
        let c = GroundTruthCurve::gauss_bump(0.5, 0.1, 5.0, 0.0);
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.starts_with(r#"{"preset":"GAUSS_BUMP""#));
        let back: GroundTruthCurve = serde_json::from_str(r#"{"preset":"GAUSS_BUMP","width":0.1,"amplitude":5.0}"#).unwrap();
        assert_eq!(back, c);
    }
}
