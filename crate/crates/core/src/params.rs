//! The 18-dimensional tuning vector: 12 gain-factor entries followed by the
//! 6 reference-filter coefficients, and its `name = value` text format.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::cmaes::BoxBounds;
use crate::controller::{GainParams, GAIN_NAMES};
use crate::error::{Error, Result};
use crate::reference::{FilterParams, FILTER_NAMES, OMEGA_MAX, OMEGA_MIN, ZETA_MAX, ZETA_MIN};

pub const DIMENSION: usize = 18;

pub fn parameter_names() -> impl Iterator<Item = &'static str> {
    GAIN_NAMES.iter().chain(FILTER_NAMES.iter()).copied()
}

/// Gains and filter coefficients decoded from an 18-vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuningParams {
    pub gains: GainParams,
    pub filter: FilterParams,
}

impl TuningParams {
    /// Decodes and checks the box.
    pub fn from_slice(x: &[f64]) -> Result<Self> {
        if x.len() != DIMENSION {
            return Err(Error::InvalidArgument(format!(
                "expected {DIMENSION} parameters, got {}",
                x.len()
            )));
        }
        let mut gains = [0.0; 12];
        gains.copy_from_slice(&x[..12]);
        let params = Self {
            gains: GainParams(gains),
            filter: FilterParams::new(
                Vector3::new(x[12], x[13], x[14]),
                Vector3::new(x[15], x[16], x[17]),
            ),
        };
        params.check_bounds()?;
        Ok(params)
    }

    pub fn check_bounds(&self) -> Result<()> {
        self.gains.check_bounds()?;
        self.filter.check_bounds()
    }

    pub fn to_array(&self) -> [f64; DIMENSION] {
        let mut x = [0.0; DIMENSION];
        x[..12].copy_from_slice(&self.gains.0);
        x[12..15].copy_from_slice(self.filter.zeta.as_slice());
        x[15..].copy_from_slice(self.filter.omega.as_slice());
        x
    }

    /// The search box: gain-factor box followed by the filter box.
    pub fn bounds() -> BoxBounds {
        let mut lower = Vec::with_capacity(DIMENSION);
        let mut upper = Vec::with_capacity(DIMENSION);
        for i in 0..12 {
            let (lo, hi) = GainParams::bounds(i);
            lower.push(lo);
            upper.push(hi);
        }
        lower.extend([ZETA_MIN; 3]);
        upper.extend([ZETA_MAX; 3]);
        lower.extend([OMEGA_MIN; 3]);
        upper.extend([OMEGA_MAX; 3]);
        BoxBounds::new(lower, upper).expect("static search box is valid")
    }

    /// One `name = value` line per parameter, shortest round-trip decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, value) in parameter_names().zip(self.to_array()) {
            writeln!(out, "{name} = {value}").unwrap();
        }
        out
    }

    /// Parses the [`TuningParams::to_text`] format. Blank lines and `#`
    /// comments are ignored; every name must appear exactly once.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut values: [Option<f64>; DIMENSION] = [None; DIMENSION];
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (name, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `name = value`", lineno + 1)))?;
            let name = name.trim();
            let index = parameter_names()
                .position(|n| n == name)
                .ok_or_else(|| Error::Config(format!("line {}: unknown parameter `{name}`", lineno + 1)))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
            if values[index].replace(value).is_some() {
                return Err(Error::Config(format!("parameter `{name}` given twice")));
            }
        }
        let mut x = [0.0; DIMENSION];
        for (i, (slot, name)) in values.iter().zip(parameter_names()).enumerate() {
            x[i] = slot.ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
        }
        Self::from_slice(&x)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> TuningParams {
        TuningParams::from_slice(&[
            0.5, 0.1, 0.6, -0.2, 0.05, 0.7, 1.1, 0.0, 0.9, 0.3, -0.4, 1.2, 0.1, 0.08, 0.05, 1.0, 1.2, 0.9,
        ])
        .unwrap()
    }

    #[test]
    fn text_lists_all_names_in_order() {
        let text = sample().to_text();
        let names: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        assert_eq!(names, parameter_names().collect::<Vec<_>>());
    }

    #[test]
    fn text_errors() {
        let text = sample().to_text();
        let missing: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        assert!(TuningParams::from_text(&missing).is_err());
        assert!(TuningParams::from_text(&format!("{text}a11 = 1\n")).is_err());
        assert!(TuningParams::from_text(&text.replace("zeta_x = 0.1", "zeta_x = 0.5")).is_err());
        assert!(TuningParams::from_text(&format!("# header\n\n{text}")).is_ok());
    }

    #[test]
    fn bounds_match_gain_and_filter_boxes() {
        let b = TuningParams::bounds();
        assert_eq!(b.lower[0], 0.001);
        assert_eq!(b.upper[1], 10.0);
        assert_eq!(b.lower[1], -10.0);
        assert_eq!((b.lower[12], b.upper[12]), (0.01, 0.1));
        assert_eq!((b.lower[17], b.upper[17]), (0.8, 2.0));
    }

    proptest! {
        #[test]
        fn text_roundtrip_is_bit_exact(u in proptest::collection::vec(0.0f64..=1.0, DIMENSION)) {
            let b = TuningParams::bounds();
            let x: Vec<f64> = (0..DIMENSION).map(|i| (b.lower[i] + u[i] * (b.upper[i] - b.lower[i])).min(b.upper[i])).collect();
            let p = TuningParams::from_slice(&x).unwrap();
            let back = TuningParams::from_text(&p.to_text()).unwrap();
            prop_assert_eq!(back.to_array().map(f64::to_bits), p.to_array().map(f64::to_bits));
        }
    }
}
