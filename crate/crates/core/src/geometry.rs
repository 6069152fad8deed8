//! Periodic arithmetic on the unit torus `[0,1)^d`.

use crate::error::{AbpError, Result};
use serde::{Deserialize, Serialize};

/// Reduce a real number into `[0, 1)`.
#[inline]
pub fn wrap_scalar(x: f64) -> f64 {
    let r = x - x.floor();
    // x slightly below an integer can round up to exactly 1.0
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Shortest signed arc from `b` to `a`, in `[-0.5, 0.5)`.
///
/// The antipodal tie resolves to `-0.5`, so the map is antisymmetric
/// everywhere except there.
#[inline]
pub fn displacement_scalar(a: f64, b: f64) -> f64 {
    let d = a - b;
    let r = d - (d + 0.5).floor();
    if r >= 0.5 {
        r - 1.0
    } else {
        r
    }
}

/// A point on the flat torus; every coordinate lies in `[0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    coords: Vec<f64>,
}

impl TorusPoint {
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.coords
    }
}

/// A point of `R^d` with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EuclideanPoint {
    coords: Vec<f64>,
}

impl EuclideanPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        check_finite(&coords)?;
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

fn check_finite(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(AbpError::invalid("state", format!("coordinate {i} is {}", x[i]))),
        None => Ok(()),
    }
}

pub fn wrap(x: &[f64]) -> Result<TorusPoint> {
    check_finite(x)?;
    Ok(TorusPoint { coords: x.iter().map(|&v| wrap_scalar(v)).collect() })
}

pub fn periodic_displacement(a: &TorusPoint, b: &TorusPoint) -> Result<Vec<f64>> {
    if a.dim() != b.dim() {
        return Err(AbpError::Dimension { expected: a.dim(), got: b.dim() });
    }
    Ok(a.coords.iter().zip(&b.coords).map(|(&x, &y)| displacement_scalar(x, y)).collect())
}

/// Euclidean length of the shortest displacement.
pub fn torus_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| displacement_scalar(x, y).powi(2))
        .sum::<f64>()
        .sqrt()
}
