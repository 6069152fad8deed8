//! Regularization kernels on `T^m x T^m`.
//!
//! The bump family is `K(z, zeta) = alpha * w_eps(z - zeta) + (1 - alpha)`
//! with `w_eps` a wrapped Gaussian. Rows evaluated on a grid are renormalized
//! so their rectangle-rule mean is exactly one.

use crate::error::{AbpError, Result};
use crate::geometry::{displacement_scalar, wrap_scalar};
use serde::{Deserialize, Serialize};
use libm::erf;
use std::f64::consts::PI;

/// Sub-cell resolution of the precomputed deposit rows.
pub const TABLE_SUBDIVISIONS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelFamily {
    WrappedGaussian,
    /// `K = 1`: the kernel does not depend on `zeta`.
    Flat,
    /// Bumps of different widths blended by a raised-cosine partition of
    /// unity in `zeta`, centred at `n / N` (one dimension only).
    Mixture { epsilons: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub epsilon: f64,
    pub alpha: f64,
    pub wraps: usize,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self { family: KernelFamily::WrappedGaussian, epsilon: 0.05, alpha: 0.9, wraps: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelBounds {
    /// `m(K)`
    pub min: f64,
    /// `M0(K)`
    pub max: f64,
    /// `M1(K)`, the largest `|d_z K|`.
    pub max_grad: f64,
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(AbpError::invalid("kernel", format!("epsilon must lie in (0,1), got {eps}")))
    }
}

impl KernelSpec {
    pub fn new(family: KernelFamily, epsilon: f64, alpha: f64, wraps: usize) -> Result<Self> {
        let spec = Self { family, epsilon, alpha, wraps };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gaussian(epsilon: f64, alpha: f64) -> Result<Self> {
        Self::new(KernelFamily::WrappedGaussian, epsilon, alpha, 5)
    }

    pub fn flat() -> Self {
        Self { family: KernelFamily::Flat, epsilon: 0.05, alpha: 1.0, wraps: 5 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(AbpError::invalid("kernel", "alpha must lie in (0,1]"));
        }
        if self.wraps < 3 {
            return Err(AbpError::invalid("kernel", "wraps must be at least 3"));
        }
        match &self.family {
            KernelFamily::WrappedGaussian => check_eps(self.epsilon),
            KernelFamily::Flat => Ok(()),
            KernelFamily::Mixture { epsilons } => {
                if epsilons.len() < 2 {
                    return Err(AbpError::invalid("kernel", "a mixture needs at least two components"));
                }
                epsilons.iter().try_for_each(|&e| check_eps(e))
            }
        }
    }

    /// Widths of the bump components, empty for the flat kernel.
    fn widths(&self) -> Vec<f64> {
        match &self.family {
            KernelFamily::WrappedGaussian => vec![self.epsilon],
            KernelFamily::Flat => vec![],
            KernelFamily::Mixture { epsilons } => epsilons.clone(),
        }
    }
}

/// Wrapped Gaussian density on `T^1`, normalized so its exact integral is one.
pub fn wrapped_gaussian(delta: f64, eps: f64, wraps: usize) -> f64 {
    let w = wraps as i64;
    let norm = erf((w as f64 + 0.5) / (eps * std::f64::consts::SQRT_2));
    let c = 1.0 / (eps * (2.0 * PI).sqrt());
    (-w..=w).map(|k| (-(delta + k as f64).powi(2) / (2.0 * eps * eps)).exp()).sum::<f64>() * c / norm
}

/// Derivative of [`wrapped_gaussian`] in `delta`.
pub fn wrapped_gaussian_deriv(delta: f64, eps: f64, wraps: usize) -> f64 {
    let w = wraps as i64;
    let norm = erf((w as f64 + 0.5) / (eps * std::f64::consts::SQRT_2));
    let c = 1.0 / (eps * (2.0 * PI).sqrt());
    (-w..=w)
        .map(|k| {
            let u = delta + k as f64;
            -u / (eps * eps) * (-u * u / (2.0 * eps * eps)).exp()
        })
        .sum::<f64>()
        * c
        / norm
}

/// Raised-cosine partition of unity: weight of component `n` out of `count` at `zeta`.
pub fn partition_weight(n: usize, count: usize, zeta: f64) -> f64 {
    let d = displacement_scalar(zeta, n as f64 / count as f64) * count as f64;
    if count == 1 {
        1.0
    } else if d.abs() < 1.0 {
        (0.5 * PI * d).cos().powi(2)
    } else {
        0.0
    }
}

fn partition_weight_deriv(n: usize, count: usize, zeta: f64) -> f64 {
    let d = displacement_scalar(zeta, n as f64 / count as f64) * count as f64;
    if count == 1 || d.abs() >= 1.0 {
        0.0
    } else {
        -0.5 * PI * count as f64 * (PI * d).sin()
    }
}

/// `K(z, zeta)` for points of `T^m` with the continuous normalization.
pub fn kernel_eval(spec: &KernelSpec, z: &[f64], zeta: &[f64]) -> f64 {
    match &spec.family {
        KernelFamily::Flat => 1.0,
        KernelFamily::WrappedGaussian => {
            let w: f64 = z
                .iter()
                .zip(zeta)
                .map(|(&a, &b)| wrapped_gaussian(displacement_scalar(a, b), spec.epsilon, spec.wraps))
                .product();
            spec.alpha * w + 1.0 - spec.alpha
        }
        KernelFamily::Mixture { epsilons } => {
            let n = epsilons.len();
            let delta = displacement_scalar(z[0], zeta[0]);
            let w: f64 = epsilons
                .iter()
                .enumerate()
                .map(|(i, &e)| partition_weight(i, n, zeta[0]) * wrapped_gaussian(delta, e, spec.wraps))
                .sum();
            spec.alpha * w + 1.0 - spec.alpha
        }
    }
}

/// Gradient of `K` in its first argument.
pub fn kernel_grad_z(spec: &KernelSpec, z: &[f64], zeta: &[f64], out: &mut [f64]) {
    match &spec.family {
        KernelFamily::Flat => out.iter_mut().for_each(|g| *g = 0.0),
        KernelFamily::WrappedGaussian => {
            let m = z.len();
            let deltas: Vec<f64> = z.iter().zip(zeta).map(|(&a, &b)| displacement_scalar(a, b)).collect();
            for i in 0..m {
                let mut g = spec.alpha;
                for (j, &d) in deltas.iter().enumerate() {
                    g *= if i == j {
                        wrapped_gaussian_deriv(d, spec.epsilon, spec.wraps)
                    } else {
                        wrapped_gaussian(d, spec.epsilon, spec.wraps)
                    };
                }
                out[i] = g;
            }
        }
        KernelFamily::Mixture { epsilons } => {
            let n = epsilons.len();
            let delta = displacement_scalar(z[0], zeta[0]);
            out[0] = spec.alpha
                * epsilons
                    .iter()
                    .enumerate()
                    .map(|(i, &e)| partition_weight(i, n, zeta[0]) * wrapped_gaussian_deriv(delta, e, spec.wraps))
                    .sum::<f64>();
        }
    }
}

/// Largest `|d K / d zeta|`, used to check Lipschitz continuity in `zeta`.
fn mixture_zeta_lipschitz(spec: &KernelSpec, epsilons: &[f64], samples: usize) -> f64 {
    let n = epsilons.len();
    let mut best: f64 = 0.0;
    for a in 0..samples {
        let zeta = a as f64 / samples as f64;
        for b in 0..samples {
            let z = b as f64 / samples as f64;
            let delta = displacement_scalar(z, zeta);
            let d: f64 = epsilons
                .iter()
                .enumerate()
                .map(|(i, &e)| {
                    partition_weight_deriv(i, n, zeta) * wrapped_gaussian(delta, e, spec.wraps)
                        - partition_weight(i, n, zeta) * wrapped_gaussian_deriv(delta, e, spec.wraps)
                })
                .sum();
            best = best.max(spec.alpha * d.abs());
        }
    }
    best
}

/// Discretely normalized wrapped-Gaussian row on `g` nodes: `out[k] ~ w(k/g - zeta)`
/// with mean exactly one.
fn normalized_bump_row(eps: f64, wraps: usize, zeta: f64, out: &mut [f64]) {
    let g = out.len();
    for (k, o) in out.iter_mut().enumerate() {
        *o = wrapped_gaussian(displacement_scalar(k as f64 / g as f64, zeta), eps, wraps);
    }
    let mean = out.iter().sum::<f64>() / g as f64;
    out.iter_mut().for_each(|o| *o /= mean);
}

/// Row `K(z_g, zeta)` on a uniform grid with `g` nodes per dimension
/// (`g^m` entries, first coordinate slowest). The rectangle-rule mean is one.
pub fn kernel_row(spec: &KernelSpec, g: usize, zeta: &[f64]) -> Vec<f64> {
    let m = zeta.len();
    let alpha = spec.alpha;
    match &spec.family {
        KernelFamily::Flat => vec![1.0; g.pow(m as u32)],
        KernelFamily::WrappedGaussian => {
            let mut rows = vec![vec![0.0; g]; m];
            for (r, &zc) in rows.iter_mut().zip(zeta) {
                normalized_bump_row(spec.epsilon, spec.wraps, wrap_scalar(zc), r);
            }
            if m == 1 {
                rows[0].iter().map(|&w| alpha * w + 1.0 - alpha).collect()
            } else {
                let mut out = Vec::with_capacity(g * g);
                for &a in &rows[0] {
                    for &b in &rows[1] {
                        out.push(alpha * a * b + 1.0 - alpha);
                    }
                }
                out
            }
        }
        KernelFamily::Mixture { epsilons } => {
            let n = epsilons.len();
            let mut acc = vec![0.0; g];
            let mut r = vec![0.0; g];
            for (i, &e) in epsilons.iter().enumerate() {
                let th = partition_weight(i, n, zeta[0]);
                if th > 0.0 {
                    normalized_bump_row(e, spec.wraps, wrap_scalar(zeta[0]), &mut r);
                    acc.iter_mut().zip(&r).for_each(|(a, &v)| *a += th * v);
                }
            }
            acc.iter().map(|&w| alpha * w + 1.0 - alpha).collect()
        }
    }
}

/// `m(K)`, `M0(K)` and `M1(K)` over grid nodes and sub-cell kernel centres.
pub fn kernel_min_max(spec: &KernelSpec, grid_size: usize) -> Result<KernelBounds> {
    if grid_size < 16 {
        return Err(AbpError::invalid("grid", "grid size must be at least 16"));
    }
    spec.validate()?;
    let alpha = spec.alpha;
    let g = grid_size;
    let (mut wmin, mut wmax, mut dmax) = (f64::INFINITY, 0.0f64, 0.0f64);
    match &spec.family {
        KernelFamily::Flat => return Ok(KernelBounds { min: 1.0, max: 1.0, max_grad: 0.0 }),
        KernelFamily::WrappedGaussian => {
            let table = BumpTable::new(spec.epsilon, spec.wraps, g, TABLE_SUBDIVISIONS);
            wmin = table.min;
            wmax = table.max;
            // the row is discretely renormalized, so take the derivative of the same row
            for q in 0..=TABLE_SUBDIVISIONS {
                let zeta = q as f64 / (TABLE_SUBDIVISIONS * g) as f64;
                let mean: f64 = (0..g)
                    .map(|k| wrapped_gaussian(displacement_scalar(k as f64 / g as f64, zeta), spec.epsilon, spec.wraps))
                    .sum::<f64>()
                    / g as f64;
                for k in 0..g {
                    let d = wrapped_gaussian_deriv(displacement_scalar(k as f64 / g as f64, zeta), spec.epsilon, spec.wraps);
                    dmax = dmax.max(d.abs() / mean);
                }
            }
        }
        KernelFamily::Mixture { .. } => {
            let samples = 4 * g;
            for a in 0..samples {
                let zeta = a as f64 / samples as f64;
                let row = kernel_row(spec, g, &[zeta]);
                for (k, &v) in row.iter().enumerate() {
                    let w = (v - 1.0 + alpha) / alpha;
                    wmin = wmin.min(w);
                    wmax = wmax.max(w);
                    let mut d = [0.0];
                    kernel_grad_z(spec, &[k as f64 / g as f64], &[zeta], &mut d);
                    dmax = dmax.max(d[0].abs() / alpha);
                }
            }
        }
    }
    Ok(KernelBounds { min: alpha * wmin + 1.0 - alpha, max: alpha * wmax + 1.0 - alpha, max_grad: alpha * dmax })
}

/// Bounds for the product kernel on `T^2`.
pub fn kernel_min_max_2d(spec: &KernelSpec, grid_size: usize) -> Result<KernelBounds> {
    let b = kernel_min_max(spec, grid_size)?;
    if matches!(spec.family, KernelFamily::Flat) {
        return Ok(b);
    }
    let a = spec.alpha;
    let wmin = (b.min - 1.0 + a) / a;
    let wmax = (b.max - 1.0 + a) / a;
    Ok(KernelBounds {
        min: a * wmin * wmin + 1.0 - a,
        max: a * wmax * wmax + 1.0 - a,
        max_grad: b.max_grad * wmax,
    })
}

/// Lipschitz constant of `zeta -> K(z, zeta)` estimated on a dense sample.
pub fn zeta_lipschitz(spec: &KernelSpec, samples: usize) -> f64 {
    match &spec.family {
        KernelFamily::Flat => 0.0,
        KernelFamily::WrappedGaussian => (0..samples)
            .map(|k| spec.alpha * wrapped_gaussian_deriv(k as f64 / samples as f64 - 0.5, spec.epsilon, spec.wraps).abs())
            .fold(0.0, f64::max),
        KernelFamily::Mixture { epsilons } => mixture_zeta_lipschitz(spec, epsilons, samples),
    }
}

/// Normalized bump rows at `q / (Q g)` sub-cell offsets, stored twice over so a
/// rotation by `j` nodes is the contiguous slice `[g - j, 2g - j)`.
#[derive(Debug, Clone)]
struct BumpTable {
    g: usize,
    subdivisions: usize,
    rows: Vec<f64>,
    min: f64,
    max: f64,
    max_diff: f64,
}

impl BumpTable {
    fn new(eps: f64, wraps: usize, g: usize, subdivisions: usize) -> Self {
        let mut rows = Vec::with_capacity((subdivisions + 1) * 2 * g);
        let mut r = vec![0.0; g];
        let (mut min, mut max, mut max_diff) = (f64::INFINITY, 0.0f64, 0.0f64);
        let spacing = 1.0 / g as f64;
        for q in 0..=subdivisions {
            normalized_bump_row(eps, wraps, q as f64 / (subdivisions * g) as f64, &mut r);
            for k in 0..g {
                min = min.min(r[k]);
                max = max.max(r[k]);
                let d = (r[(k + 1) % g] - r[(k + g - 1) % g]) / (2.0 * spacing);
                max_diff = max_diff.max(d.abs());
            }
            rows.extend_from_slice(&r);
            rows.extend_from_slice(&r);
        }
        Self { g, subdivisions, rows, min, max, max_diff }
    }

    /// The two table rows bracketing `zeta` (already rotated) and the weight
    /// on the second one.
    #[inline]
    fn lookup(&self, zeta: f64) -> (&[f64], &[f64], f64) {
        let g = self.g;
        let s = wrap_scalar(zeta) * g as f64;
        let j = (s.floor() as usize).min(g - 1);
        let pos = (s - j as f64) * self.subdivisions as f64;
        let q = (pos.floor() as usize).min(self.subdivisions - 1);
        let lam = pos - q as f64;
        let stride = 2 * g;
        let a = &self.rows[q * stride + g - j..q * stride + 2 * g - j];
        let b = &self.rows[(q + 1) * stride + g - j..(q + 1) * stride + 2 * g - j];
        (a, b, lam)
    }

    #[inline]
    fn fill(&self, zeta: f64, out: &mut [f64]) {
        let (a, b, lam) = self.lookup(zeta);
        let l0 = 1.0 - lam;
        for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
            *o = l0 * x + lam * y;
        }
    }
}

/// Fast deposit rows for a fixed kernel and grid.
///
/// Rows between tabulated sub-cell offsets are linear blends of two
/// normalized rows, so every row produced here has mean exactly one and
/// lies within the tabulated min/max.
#[derive(Debug, Clone)]
pub struct RowTable {
    spec: KernelSpec,
    g: usize,
    m: usize,
    tables: Vec<BumpTable>,
    scratch: Vec<f64>,
}

impl RowTable {
    pub fn new(spec: &KernelSpec, g: usize, m: usize) -> Result<Self> {
        spec.validate()?;
        if !(1..=2).contains(&m) {
            return Err(AbpError::invalid("grid", "collective-variable dimension must be 1 or 2"));
        }
        if g < 16 {
            return Err(AbpError::invalid("grid", "grid size must be at least 16"));
        }
        if m == 2 && matches!(spec.family, KernelFamily::Mixture { .. }) {
            return Err(AbpError::Unsupported("mixture kernels in two dimensions".into()));
        }
        let tables = spec.widths().iter().map(|&e| BumpTable::new(e, spec.wraps, g, TABLE_SUBDIVISIONS)).collect();
        Ok(Self { spec: spec.clone(), g, m, tables, scratch: vec![0.0; 2 * g] })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn grid_size(&self) -> usize {
        self.g
    }

    pub fn cv_dim(&self) -> usize {
        self.m
    }

    /// `(m(K), M0(K), max |D row|)` over every row this table can produce,
    /// with `D` the centred difference on the grid.
    pub fn bounds(&self) -> (f64, f64, f64) {
        let a = self.spec.alpha;
        if self.tables.is_empty() {
            return (1.0, 1.0, 0.0);
        }
        let wmin = self.tables.iter().map(|t| t.min).fold(f64::INFINITY, f64::min);
        let wmax = self.tables.iter().map(|t| t.max).fold(0.0, f64::max);
        let dmax = self.tables.iter().map(|t| t.max_diff).fold(0.0, f64::max);
        if self.m == 1 {
            (a * wmin + 1.0 - a, a * wmax + 1.0 - a, a * dmax)
        } else {
            (a * wmin * wmin + 1.0 - a, a * wmax * wmax + 1.0 - a, a * dmax * wmax)
        }
    }

    /// Bump part of the 1-D row at `zeta` (mean one) written into `out`.
    fn bump_row(&self, zeta: f64, out: &mut [f64]) {
        match &self.spec.family {
            KernelFamily::Mixture { epsilons } => {
                let n = epsilons.len();
                out.iter_mut().for_each(|o| *o = 0.0);
                for (i, t) in self.tables.iter().enumerate() {
                    let th = partition_weight(i, n, zeta);
                    if th > 0.0 {
                        let (a, b, lam) = t.lookup(zeta);
                        for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
                            *o += th * ((1.0 - lam) * x + lam * y);
                        }
                    }
                }
            }
            _ => self.tables[0].fill(zeta, out),
        }
    }

    /// The kernel row `K(z_g, zeta)` (`g^m` entries).
    pub fn row(&mut self, zeta: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.g.pow(self.m as u32)];
        self.accumulate(zeta, 1.0, &mut h);
        h
    }

    /// `h += c * K(., zeta)`.
    pub fn accumulate(&mut self, zeta: &[f64], c: f64, h: &mut [f64]) {
        let g = self.g;
        let alpha = self.spec.alpha;
        if self.tables.is_empty() {
            h.iter_mut().for_each(|v| *v += c);
            return;
        }
        let floor = c * (1.0 - alpha);
        if self.m == 1 {
            if let KernelFamily::WrappedGaussian = self.spec.family {
                let (a, b, lam) = self.tables[0].lookup(zeta[0]);
                let ca = c * alpha * (1.0 - lam);
                let cb = c * alpha * lam;
                for ((v, &x), &y) in h.iter_mut().zip(a).zip(b) {
                    *v += ca * x + cb * y + floor;
                }
            } else {
                let mut s = std::mem::take(&mut self.scratch);
                self.bump_row(zeta[0], &mut s[..g]);
                let ca = c * alpha;
                for (v, &x) in h.iter_mut().zip(&s[..g]) {
                    *v += ca * x + floor;
                }
                self.scratch = s;
            }
        } else {
            let mut s = std::mem::take(&mut self.scratch);
            let (r1, r2) = s.split_at_mut(g);
            self.tables[0].fill(zeta[0], r1);
            self.tables[0].fill(zeta[1], r2);
            let ca = c * alpha;
            for (hrow, &x) in h.chunks_exact_mut(g).zip(r1.iter()) {
                let cx = ca * x;
                for (v, &y) in hrow.iter_mut().zip(r2.iter()) {
                    *v += cx * y + floor;
                }
            }
            self.scratch = s;
        }
    }

    /// `dh += c * D K(., zeta)` with `D` the centred difference (one dimension).
    pub fn accumulate_diff(&mut self, zeta: f64, c: f64, dh: &mut [f64]) {
        if self.tables.is_empty() {
            return;
        }
        let g = self.g;
        let mut s = std::mem::take(&mut self.scratch);
        self.bump_row(zeta, &mut s[..g]);
        let scale = c * self.spec.alpha * g as f64 / 2.0;
        for k in 0..g {
            dh[k] += scale * (s[(k + 1) % g] - s[(k + g - 1) % g]);
        }
        self.scratch = s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_like_kernel() {
        let spec = KernelSpec::gaussian(0.05, 1e-9).unwrap();
        for (z, zeta) in [(0.1, 0.1), (0.3, 0.9), (0.5, 0.0)] {
            assert!((kernel_eval(&spec, &[z], &[zeta]) - 1.0).abs() <= 1e-6);
        }
        let b = kernel_min_max(&spec, 64).unwrap();
        assert!((b.min - 1.0).abs() < 1e-6 && (b.max - 1.0).abs() < 1e-6 && b.max_grad < 1e-6);
        let row = kernel_row(&spec, 4, &[0.3]);
        assert!(row.iter().all(|v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn gaussian_peak_and_integral() {
        let spec = KernelSpec::gaussian(0.05, 1.0).unwrap();
        let peak = 1.0 / (0.05 * (2.0 * PI).sqrt());
        assert!((kernel_eval(&spec, &[0.3], &[0.3]) - peak).abs() < 1e-3);
        let n = 4096;
        let integral: f64 = (0..n).map(|k| kernel_eval(&spec, &[k as f64 / n as f64], &[0.37])).sum::<f64>() / n as f64;
        assert!((integral - 1.0).abs() < 1e-12);
        let b = kernel_min_max(&spec, 256).unwrap();
        assert!((b.max - 7.979).abs() < 1e-3, "{}", b.max);
    }

    #[test]
    fn wide_kernel_integrates_to_one_despite_wrapping() {
        let spec = KernelSpec::new(KernelFamily::WrappedGaussian, 0.6, 1.0, 3).unwrap();
        let n = 4096;
        let integral: f64 = (0..n).map(|k| kernel_eval(&spec, &[k as f64 / n as f64], &[0.1])).sum::<f64>() / n as f64;
        assert!((integral - 1.0).abs() < 1e-12, "{integral}");
    }

    #[test]
    fn floor_bound() {
        let b = kernel_min_max(&KernelSpec::gaussian(0.05, 0.9).unwrap(), 256).unwrap();
        assert!(b.min >= 1.0 - 0.9);
    }

    #[test]
    fn symmetric_and_positive() {
        let spec = KernelSpec::gaussian(0.07, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (a, b): (f64, f64) = (rng.random(), rng.random());
            let k1 = kernel_eval(&spec, &[a], &[b]);
            assert!(k1 > 0.0);
            assert!((k1 - kernel_eval(&spec, &[b], &[a])).abs() < 1e-12);
        }
    }

    #[test]
    fn row_normalization_and_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = KernelSpec::gaussian(0.05, 0.9).unwrap();
        let g = 128;
        for _ in 0..64 {
            let zeta: f64 = rng.random();
            let row = kernel_row(&spec, g, &[zeta]);
            let mean = row.iter().sum::<f64>() / g as f64;
            assert!((mean - 1.0).abs() < 1e-12);
            let arg = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            let nearest = ((zeta * g as f64).round() as usize) % g;
            assert_eq!(arg, nearest);
        }
    }

    #[test]
    fn lipschitz_in_zeta() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for spec in [
            KernelSpec::gaussian(0.05, 0.9).unwrap(),
            KernelSpec::new(KernelFamily::Mixture { epsilons: vec![0.05, 0.1, 0.08] }, 0.05, 0.9, 5).unwrap(),
        ] {
            let m1 = kernel_min_max(&spec, 256).unwrap().max_grad.max(zeta_lipschitz(&spec, 256));
            for _ in 0..500 {
                let z: f64 = rng.random();
                let a: f64 = rng.random();
                let b = wrap_scalar(a + rng.random_range(-0.02..0.02));
                let diff = (kernel_eval(&spec, &[z], &[a]) - kernel_eval(&spec, &[z], &[b])).abs();
                let dist = displacement_scalar(a, b).abs();
                assert!(diff <= 1.1 * m1 * dist + 1e-14, "diff {diff} dist {dist} m1 {m1}");
            }
        }
    }

    #[test]
    fn mixture_partition_and_normalization() {
        for n in 2..6 {
            for k in 0..200 {
                let z = k as f64 / 200.0;
                let s: f64 = (0..n).map(|i| partition_weight(i, n, z)).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        let spec = KernelSpec::new(KernelFamily::Mixture { epsilons: vec![0.04, 0.1] }, 0.05, 0.9, 5).unwrap();
        let row = kernel_row(&spec, 128, &[0.3]);
        assert!((row.iter().sum::<f64>() / 128.0 - 1.0).abs() < 1e-12);
        let n = 2048;
        let integral: f64 = (0..n).map(|k| kernel_eval(&spec, &[k as f64 / n as f64], &[0.61])).sum::<f64>() / n as f64;
        assert!((integral - 1.0).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(KernelSpec::gaussian(0.05, 1.5).is_err());
        assert!(KernelSpec::gaussian(0.05, 0.0).is_err());
        assert!(KernelSpec::gaussian(1.5, 0.5).is_err());
        assert!(KernelSpec::new(KernelFamily::WrappedGaussian, 0.05, 0.5, 2).is_err());
        assert!(kernel_min_max(&KernelSpec::default(), 8).is_err());
        let err = KernelSpec::gaussian(0.05, 1.5).unwrap_err().to_string();
        assert!(err.contains("alpha must lie in (0,1]"));
    }

    #[test]
    fn table_rows_match_exact_rows() {
        let spec = KernelSpec::gaussian(0.05, 0.9).unwrap();
        let mut t = RowTable::new(&spec, 256, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let zeta: f64 = rng.random();
            let exact = kernel_row(&spec, 256, &[zeta]);
            let approx = t.row(&[zeta]);
            let err = exact.iter().zip(&approx).map(|(a, b)| (a - b).abs() / a).fold(0.0, f64::max);
            assert!(err < 1e-6, "{err}");
            assert!((approx.iter().sum::<f64>() / 256.0 - 1.0).abs() < 1e-12);
        }
        let mut t2 = RowTable::new(&spec, 32, 2).unwrap();
        // coarse grid: one cell is 0.6 kernel widths, so the blend error is larger
        let exact = kernel_row(&spec, 32, &[0.31, 0.77]);
        let approx = t2.row(&[0.31, 0.77]);
        let err = exact.iter().zip(&approx).map(|(a, b)| (a - b).abs() / a).fold(0.0, f64::max);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn table_bounds_cover_rows() {
        let spec = KernelSpec::gaussian(0.05, 0.9).unwrap();
        let mut t = RowTable::new(&spec, 64, 2).unwrap();
        let (lo, hi, _) = t.bounds();
        let b2 = kernel_min_max_2d(&spec, 64).unwrap();
        assert!((lo - b2.min).abs() < 1e-12 && (hi - b2.max).abs() < 1e-12);
        let row = t.row(&[0.123, 0.999]);
        assert!(row.iter().all(|&v| v >= lo && v <= hi));
    }

    #[test]
    fn diff_row_is_centred_difference_of_row() {
        let spec = KernelSpec::gaussian(0.1, 0.7).unwrap();
        let mut t = RowTable::new(&spec, 64, 1).unwrap();
        let row = t.row(&[0.4]);
        let mut dh = vec![0.0; 64];
        t.accumulate_diff(0.4, 1.0, &mut dh);
        for k in 0..64 {
            let want = (row[(k + 1) % 64] - row[(k + 63) % 64]) * 32.0;
            assert!((dh[k] - want).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn rows_positive_and_mean_one(eps in 0.02f64..0.3, alpha in 0.01f64..1.0, zeta in 0f64..1.0) {
            let spec = KernelSpec::gaussian(eps, alpha).unwrap();
            let mut t = RowTable::new(&spec, 64, 1).unwrap();
            let row = t.row(&[zeta]);
            prop_assert!(row.iter().all(|&v| v > 0.0));
            prop_assert!((row.iter().sum::<f64>() / 64.0 - 1.0).abs() < 1e-12);
        }
    }
}
