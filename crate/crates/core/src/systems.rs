//! Named synthetic systems.
//!
//! The labels borrow familiar protein-ligand names so reports line up with the
//! usual comparison tables; the curves are synthetic and carry no chemistry.
//! Each curve was picked for how adaptive quadrature treats it: a steep rise
//! near λ = 0, steep falls near λ = 1 of different widths, and a narrow bump
//! that needs more windows than the uniform schedule.

use crate::synth::{GroundTruthCurve, NoiseModel, SyntheticSystem};

/// Thermal-noise stand-in shared by the comparison systems.
pub const COMPARISON_NOISE: NoiseModel =
    NoiseModel { sigma: 0.6, ar1_phi: 0.8, drift_amplitude: 0.0, drift_timescale: 400.0 };

fn rational(pole: f64, scale: f64) -> GroundTruthCurve {
    GroundTruthCurve::Rational { pole, scale, slope: 0.0, offset: 0.0 }
}

fn curve_for(label: &str) -> GroundTruthCurve {
    match label {
        "PTP1B L1-L2" => rational(-0.03, 0.2),
        "PTP1B L10-L12" => rational(1.02, -0.6),
        "MCL1 L32-L38" => rational(1.03, -0.7),
        "TYK2 L4-L9" => rational(1.05, -1.0),
        "TYK2 L7-L8" => GroundTruthCurve::GaussBump { center: 0.5, width: 0.015, amplitude: 6.0, slope: 1.0, offset: 0.0 },
        other => panic!("no preset named {other}"),
    }
}

pub const COMPARISON_LABELS: [&str; 5] = ["PTP1B L1-L2", "PTP1B L10-L12", "MCL1 L32-L38", "TYK2 L4-L9", "TYK2 L7-L8"];

/// The five systems used to compare adaptive and uniform window placement.
pub fn comparison_systems() -> Vec<SyntheticSystem> {
    COMPARISON_LABELS.iter().map(|l| SyntheticSystem::new(l, curve_for(l), COMPARISON_NOISE)).collect()
}

/// Systems for adaptive termination. Each relaxes from an un-equilibrated start
/// with its own drift amplitude, so they settle after different times.
pub fn termination_systems() -> Vec<SyntheticSystem> {
    [("PTP1B L10-L12", 1.3), ("TYK2 L4-L9", 1.6), ("TYK2 L7-L8", 1.0)]
        .iter()
        .map(|&(label, drift)| {
            let noise = NoiseModel { drift_amplitude: drift, ..COMPARISON_NOISE };
            SyntheticSystem::new(label, curve_for(label), noise)
        })
        .collect()
}

/// A broad bump at λ = 0.5 that adaptive quadrature resolves with few windows.
pub fn gauss_bump_demo() -> SyntheticSystem {
    SyntheticSystem::new("GAUSS_BUMP", GroundTruthCurve::gauss_bump(0.5, 0.1, 5.0, 0.0), COMPARISON_NOISE)
}
