//! Alchemical coupling parameter with a canonical three-decimal key.
//!
//! Every λ value in the system is stored as an integer count of thousandths.
//! Two windows are the same window iff their keys are equal, which keeps
//! window identity stable when midpoints are generated by repeated bisection.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Number of key units in the closed interval [0, 1].
pub const LAMBDA_RESOLUTION: u16 = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LambdaError {
    #[error("lambda value {0} is not finite")]
    NotFinite(f64),
    #[error("lambda value {0} lies outside [0, 1]")]
    OutOfRange(f64),
}

/// A λ value rounded to 3 decimal places.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Lambda(u16);

impl Lambda {
    pub const ZERO: Lambda = Lambda(0);
    pub const ONE: Lambda = Lambda(LAMBDA_RESOLUTION);

    /// Rounds `value` to the nearest thousandth (half away from zero).
    pub fn new(value: f64) -> Result<Self, LambdaError> {
        if !value.is_finite() {
            return Err(LambdaError::NotFinite(value));
        }
        let key = (value * f64::from(LAMBDA_RESOLUTION)).round();
        if !(0.0..=f64::from(LAMBDA_RESOLUTION)).contains(&key) {
            return Err(LambdaError::OutOfRange(value));
        }
        Ok(Lambda(key as u16))
    }

    pub fn from_milli(milli: u16) -> Option<Self> {
        (milli <= LAMBDA_RESOLUTION).then_some(Lambda(milli))
    }

    pub fn milli(self) -> u16 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / f64::from(LAMBDA_RESOLUTION)
    }

    /// Midpoint of two windows, rounded to the key grid.
    pub fn midpoint(self, other: Lambda) -> Lambda {
        let sum = u32::from(self.0) + u32::from(other.0);
        Lambda(sum.div_ceil(2) as u16)
    }

    /// `n` evenly spaced windows covering [0, 1], each rounded to the key grid.
    pub fn uniform(n: usize) -> Vec<Lambda> {
        match n {
            0 => Vec::new(),
            1 => vec![Lambda::ZERO],
            _ => (0..n)
                .map(|i| {
                    let milli = (i as f64 * f64::from(LAMBDA_RESOLUTION) / (n - 1) as f64).round();
                    Lambda(milli as u16)
                })
                .collect(),
        }
    }
}

impl fmt::Display for Lambda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}", self.value())
    }
}

impl Serialize for Lambda {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for Lambda {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = f64::deserialize(deserializer)?;
        Lambda::new(raw).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounds_to_three_decimals() {
        assert_eq!(Lambda::new(0.0833333).unwrap().milli(), 83);
        assert_eq!(Lambda::new(0.4375).unwrap().milli(), 438);
        assert_eq!(Lambda::new(1.0).unwrap(), Lambda::ONE);
    }

    #[test]
    fn rejects_out_of_range_and_nan() {
        assert!(matches!(Lambda::new(1.2), Err(LambdaError::OutOfRange(_))));
        assert!(matches!(Lambda::new(-0.01), Err(LambdaError::OutOfRange(_))));
        assert!(matches!(Lambda::new(f64::NAN), Err(LambdaError::NotFinite(_))));
        // rounds into range
        assert_eq!(Lambda::new(1.0004).unwrap(), Lambda::ONE);
    }

    #[test]
    fn midpoint_of_dyadic_levels() {
        let a = Lambda::new(0.375).unwrap();
        let b = Lambda::new(0.5).unwrap();
        assert_eq!(a.midpoint(b).milli(), 438);
        assert_eq!(Lambda::ZERO.midpoint(Lambda::ONE).milli(), 500);
        // adjacent keys collapse onto the upper one
        let c = Lambda::from_milli(10).unwrap();
        let d = Lambda::from_milli(11).unwrap();
        assert_eq!(c.midpoint(d), d);
    }

    #[test]
    fn uniform_thirteen() {
        let grid = Lambda::uniform(13);
        assert_eq!(grid.len(), 13);
        assert_eq!(grid[0], Lambda::ZERO);
        assert_eq!(grid[12], Lambda::ONE);
        assert_eq!(grid[1].milli(), 83);
        assert_eq!(grid[6].milli(), 500);
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn serde_as_plain_number() {
        let l = Lambda::new(0.25).unwrap();
        assert_eq!(serde_json::to_string(&l).unwrap(), "0.25");
        let back: Lambda = serde_json::from_str("0.2504").unwrap();
        assert_eq!(back, l);
        assert!(serde_json::from_str::<Lambda>("1.5").is_err());
    }
}
