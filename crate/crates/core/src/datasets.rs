//! Bundled datasets and CSV loaders.

use std::path::Path;

use crate::error::{Error, Result};

const GALAXY_CSV: &str = include_str!("../data/galaxy.csv");
const NILE_CSV: &str = include_str!("../data/nile.csv");

/// Parses a single-column CSV with a header line.
pub fn parse_column(text: &str) -> Result<Vec<f64>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    lines
        .next()
        .ok_or_else(|| Error::Data("empty CSV".into()))?;
    lines
        .enumerate()
        .map(|(i, line)| {
            let field = line.split(',').next().unwrap_or("").trim();
            field
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("line {}: cannot parse {field:?} as a number", i + 2)))
        })
        .collect()
}

pub fn load_column(path: &Path) -> Result<Vec<f64>> {
    parse_column(&std::fs::read_to_string(path)?)
}

/// The 82 galaxy velocities in km/s.
pub fn galaxy() -> Vec<f64> {
    parse_column(GALAXY_CSV).expect("bundled galaxy data parses")
}

/// Galaxy velocities divided by 10 000.
pub fn galaxy_scaled() -> Vec<f64> {
    galaxy().into_iter().map(|v| v / 10_000.0).collect()
}

/// Annual Nile flow at Aswan, 1871 to 1970.
pub fn nile() -> Vec<f64> {
    parse_column(NILE_CSV).expect("bundled Nile data parses")
}

/// Subtracts the mean and divides by the sample standard deviation.
pub fn standardize(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::Data("need at least two values to standardize".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if !(sd > 0.0) {
        return Err(Error::Data("constant series cannot be standardized".into()));
    }
    Ok(values.iter().map(|v| (v - mean) / sd).collect())
}
