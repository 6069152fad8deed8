//! Normalization operators `n` and the projection `N(f) = f / n(f)`.
//!
//! Integrals over `T^m` are rectangle-rule means on a uniform grid with
//! respect to Lebesgue measure.

use crate::error::{AbpError, Result};
use crate::geometry::wrap_scalar;
use serde::{Deserialize, Serialize};

/// Values on the uniform grid `{k/g}^m` of `T^m`, first coordinate slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    values: Vec<f64>,
    g: usize,
    m: usize,
}

impl GridFunction {
    pub fn new(values: Vec<f64>, g: usize, m: usize) -> Result<Self> {
        if !(1..=2).contains(&m) {
            return Err(AbpError::invalid("grid function", "dimension must be 1 or 2"));
        }
        if g < 2 || values.len() != g.pow(m as u32) {
            return Err(AbpError::Dimension { expected: g.pow(m as u32), got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(AbpError::invalid("grid function", format!("entry {i} is not finite")));
        }
        Ok(Self { values, g, m })
    }

    pub fn from_fn(g: usize, m: usize, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = if m == 1 {
            (0..g).map(|k| f(&[k as f64 / g as f64])).collect()
        } else {
            let mut v = Vec::with_capacity(g * g);
            for i in 0..g {
                for j in 0..g {
                    v.push(f(&[i as f64 / g as f64, j as f64 / g as f64]));
                }
            }
            v
        };
        Self::new(values, g, m)
    }

    pub fn constant(c: f64, g: usize, m: usize) -> Result<Self> {
        Self::new(vec![c; g.pow(m as u32)], g, m)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid_size(&self) -> usize {
        self.g
    }

    pub fn cv_dim(&self) -> usize {
        self.m
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.g as f64
    }

    /// Coordinates of node `i`.
    pub fn node(&self, i: usize) -> Vec<f64> {
        if self.m == 1 {
            vec![i as f64 / self.g as f64]
        } else {
            vec![(i / self.g) as f64 / self.g as f64, (i % self.g) as f64 / self.g as f64]
        }
    }

    pub fn mean(&self) -> f64 {
        shifted_mean(&self.values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.values.iter().map(|&v| f(v)).collect(), self.g, self.m)
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Periodic (bi)linear interpolation.
    pub fn interp(&self, z: &[f64]) -> f64 {
        interp_periodic(&self.values, self.g, self.m, z)
    }
}

/// Mean computed relative to the first entry, exact for constant vectors.
#[inline]
pub fn shifted_mean(v: &[f64]) -> f64 {
    let f0 = v[0];
    f0 + v.iter().map(|&x| x - f0).sum::<f64>() / v.len() as f64
}

#[inline]
pub(crate) fn cell(z: f64, g: usize) -> (usize, usize, f64) {
    let s = wrap_scalar(z) * g as f64;
    let i = (s.floor() as usize).min(g - 1);
    let t = s - i as f64;
    (i, if i + 1 == g { 0 } else { i + 1 }, t)
}

/// `a + t (b - a)`; exact when `a == b`.
#[inline]
pub fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Periodic (bi)linear interpolation of grid values.
#[inline]
pub fn interp_periodic(v: &[f64], g: usize, m: usize, z: &[f64]) -> f64 {
    if m == 1 {
        let (i, j, t) = cell(z[0], g);
        lerp(v[i], v[j], t)
    } else {
        let (i0, i1, s) = cell(z[0], g);
        let (j0, j1, t) = cell(z[1], g);
        let a = lerp(v[i0 * g + j0], v[i0 * g + j1], t);
        let b = lerp(v[i1 * g + j0], v[i1 * g + j1], t);
        lerp(a, b, s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NormalizationKind {
    L1,
    Lq { q: f64 },
    PointEval { z0: Vec<f64> },
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub kind: NormalizationKind,
    /// Smooth approximation index `k` for `Min`/`Max`.
    pub smoothing: Option<u32>,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self { kind: NormalizationKind::L1, smoothing: None }
    }
}

fn lq_mean(v: &[f64], q: f64) -> f64 {
    if q == 1.0 {
        return shifted_mean(v);
    }
    let top = v.iter().cloned().fold(0.0, f64::max);
    let s = if q == 2.0 {
        v.iter().map(|&x| (x / top) * (x / top)).sum::<f64>()
    } else {
        v.iter().map(|&x| (x / top).powf(q)).sum::<f64>()
    };
    top * (s / v.len() as f64).powf(1.0 / q)
}

impl NormalizationSpec {
    pub fn l1() -> Self {
        Self::default()
    }

    pub fn new(kind: NormalizationKind, smoothing: Option<u32>) -> Result<Self> {
        let s = Self { kind, smoothing };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            NormalizationKind::Lq { q } if !(*q >= 1.0 && q.is_finite()) => {
                Err(AbpError::invalid("normalization", "q must be a finite real >= 1"))
            }
            NormalizationKind::PointEval { z0 } if z0.is_empty() || z0.iter().any(|v| !v.is_finite()) => {
                Err(AbpError::invalid("normalization", "point evaluation needs a finite z0"))
            }
            NormalizationKind::Min | NormalizationKind::Max => match self.smoothing {
                Some(0) => Err(AbpError::invalid("normalization", "smoothing index must be positive")),
                _ => Ok(()),
            },
            _ if self.smoothing.is_some() => {
                Err(AbpError::invalid("normalization", "smoothing index only applies to min and max"))
            }
            _ => Ok(()),
        }
    }

    pub fn is_l1(&self) -> bool {
        matches!(self.kind, NormalizationKind::L1)
    }

    /// `n(f)` on raw grid values; assumes positive entries.
    pub fn eval_raw(&self, v: &[f64], g: usize, m: usize) -> f64 {
        match (&self.kind, self.smoothing) {
            (NormalizationKind::L1, _) => shifted_mean(v),
            (NormalizationKind::Lq { q }, _) => lq_mean(v, *q),
            (NormalizationKind::PointEval { z0 }, _) => interp_periodic(v, g, m, z0),
            (NormalizationKind::Max, None) => v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            (NormalizationKind::Min, None) => v.iter().cloned().fold(f64::INFINITY, f64::min),
            (NormalizationKind::Max, Some(k)) => lq_mean(v, k as f64),
            (NormalizationKind::Min, Some(k)) => {
                let inv: Vec<f64> = v.iter().map(|x| 1.0 / x).collect();
                1.0 / lq_mean(&inv, k as f64)
            }
        }
    }

    /// `n(f)`.
    pub fn n_value(&self, f: &GridFunction) -> Result<f64> {
        check_positive(f)?;
        if let NormalizationKind::PointEval { z0 } = &self.kind {
            if z0.len() != f.m {
                return Err(AbpError::Dimension { expected: f.m, got: z0.len() });
            }
        }
        Ok(self.eval_raw(&f.values, f.g, f.m))
    }

    /// `N(f) = f / n(f)`.
    pub fn normalize(&self, f: &GridFunction) -> Result<GridFunction> {
        let n = self.n_value(f)?;
        f.map(|v| v / n)
    }
}

fn check_positive(f: &GridFunction) -> Result<()> {
    match f.values.iter().position(|&v| !(v > 0.0)) {
        Some(index) => Err(AbpError::NonPositive { index, value: f.values[index] }),
        None => Ok(()),
    }
}

/// `f / mean(f)`.
pub fn prob_density(f: &GridFunction) -> Result<GridFunction> {
    check_positive(f)?;
    let mean = f.mean();
    f.map(|v| v / mean)
}
