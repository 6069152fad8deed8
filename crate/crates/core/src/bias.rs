//! The bias grid: the kernel accumulation `h_t`, its normalized version
//! `F_t = h_t / n(h_t)`, the bias `A_t = -log(h_t / mean(h_t))` and `grad A_t`.
//!
//! `h` is the only stored state. Queries read it directly, which is the same
//! as refreshing `F`, `A` and `grad A` after every deposit. With a refresh
//! stride `s > 1`, queries read a copy of `h` taken every `s` deposits.

use crate::error::{AbpError, Result};
use crate::kernel::{KernelSpec, RowTable};
use crate::model::BiasFunction;
use crate::normalization::{cell, interp_periodic, lerp, shifted_mean, GridFunction, NormalizationSpec};
use serde::{Deserialize, Serialize};

/// Relative slack allowed when checking the a-priori bounds, for rounding.
pub const BOUND_SLACK: f64 = 1e-12;

/// Initial measure pushed forward to the collective variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CvMeasure {
    /// Weighted points of `T^m`; weights are renormalized to sum to one.
    Atoms(Vec<(f64, Vec<f64>)>),
    /// Lebesgue measure.
    Uniform,
}

/// Constants of the a-priori estimate: `bound_m <= F_t <= bound_m0` and
/// `|D F_t| <= bound_m1` for all times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AprioriBounds {
    pub bound_m: f64,
    pub bound_m0: f64,
    pub bound_m1: f64,
}

#[derive(Debug, Clone)]
struct View {
    h: Vec<f64>,
    n: f64,
    mean: f64,
}

#[derive(Debug, Clone)]
pub struct BiasGrid {
    g: usize,
    m: usize,
    norm: NormalizationSpec,
    table: Option<RowTable>,
    h: Vec<f64>,
    dh: Option<Vec<f64>>,
    n: f64,
    mean: f64,
    theta: f64,
    bounds: AprioriBounds,
    refresh_stride: usize,
    since_refresh: usize,
    frozen: Option<View>,
    deposits: u64,
    checks: u64,
    violations: u64,
}

/// Grid arrays for export: `F`, `A` and `grad A` at every node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSnapshot {
    pub grid_size: usize,
    pub cv_dim: usize,
    pub theta: f64,
    pub h: Vec<f64>,
    pub f: Vec<f64>,
    pub a: Vec<f64>,
    /// One vector per collective-variable component.
    pub da: Vec<Vec<f64>>,
}

impl BiasSnapshot {
    pub fn free_energy(&self) -> GridFunction {
        GridFunction::new(self.a.clone(), self.grid_size, self.cv_dim).expect("snapshot arrays are consistent")
    }
}

impl BiasGrid {
    /// `h_0 = K(mu0)`, with bounds computed from `h_0` and the kernel constants.
    pub fn new(kernel: &KernelSpec, norm: &NormalizationSpec, mu0: &CvMeasure, g: usize, m: usize) -> Result<Self> {
        norm.validate()?;
        let mut table = RowTable::new(kernel, g, m)?;
        let len = g.pow(m as u32);
        let mut h = vec![0.0; len];
        match mu0 {
            CvMeasure::Uniform => h.iter_mut().for_each(|v| *v = 1.0),
            CvMeasure::Atoms(atoms) => {
                if atoms.is_empty() {
                    return Err(AbpError::invalid("initial measure", "no atoms"));
                }
                let total: f64 = atoms.iter().map(|a| a.0).sum();
                if !(total > 0.0) || atoms.iter().any(|a| !(a.0 >= 0.0)) {
                    return Err(AbpError::invalid("initial measure", "weights must be nonnegative with positive sum"));
                }
                for (w, z) in atoms {
                    if z.len() != m {
                        return Err(AbpError::Dimension { expected: m, got: z.len() });
                    }
                    if *w > 0.0 {
                        table.accumulate(z, w / total, &mut h);
                    }
                }
            }
        }
        let (kmin, kmax, kdiff) = table.bounds();
        let (hmin, hmax) = min_max(&h);
        let hdiff = max_centered_diff(&h, g, m);
        let lo = hmin.min(kmin);
        let hi = hmax.max(kmax);
        let bounds = AprioriBounds { bound_m: lo / hi, bound_m0: hi / lo, bound_m1: hdiff.max(kdiff) / lo };
        let mut grid = Self {
            g,
            m,
            norm: norm.clone(),
            table: Some(table),
            h,
            dh: None,
            n: 1.0,
            mean: 1.0,
            theta: 0.0,
            bounds,
            refresh_stride: 1,
            since_refresh: 0,
            frozen: None,
            deposits: 0,
            checks: 0,
            violations: 0,
        };
        grid.update_stats();
        Ok(grid)
    }

    /// A grid holding `h = exp(-A)` that never receives deposits.
    pub fn fixed(a: &GridFunction, norm: &NormalizationSpec) -> Result<Self> {
        norm.validate()?;
        let h: Vec<f64> = a.values().iter().map(|&v| (-v).exp()).collect();
        let (lo, hi) = min_max(&h);
        let n = norm.eval_raw(&h, a.grid_size(), a.cv_dim());
        let bounds = AprioriBounds {
            bound_m: lo / n,
            bound_m0: hi / n,
            bound_m1: max_centered_diff(&h, a.grid_size(), a.cv_dim()) / n,
        };
        let mut grid = Self {
            g: a.grid_size(),
            m: a.cv_dim(),
            norm: norm.clone(),
            table: None,
            h,
            dh: None,
            n: 1.0,
            mean: 1.0,
            theta: 0.0,
            bounds,
            refresh_stride: 1,
            since_refresh: 0,
            frozen: None,
            deposits: 0,
            checks: 0,
            violations: 0,
        };
        grid.update_stats();
        Ok(grid)
    }

    /// Read queries from a copy of `h` refreshed every `stride` deposits.
    pub fn with_refresh_stride(mut self, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(AbpError::invalid("grid", "refresh stride must be positive"));
        }
        self.refresh_stride = stride;
        self.frozen = (stride > 1).then(|| View { h: self.h.clone(), n: self.n, mean: self.mean });
        Ok(self)
    }

    /// Maintain the accumulation of `d_z K` rows needed by [`BiasGrid::mean_force`].
    pub fn with_mean_force(mut self) -> Result<Self> {
        if self.m != 1 {
            return Err(AbpError::Unsupported("mean force needs a one-dimensional collective variable".into()));
        }
        let g = self.g;
        let spacing = 1.0 / g as f64;
        // D h_0, so that dh stays equal to D h after any deposit stream
        self.dh = Some((0..g).map(|k| (self.h[(k + 1) % g] - self.h[(k + g - 1) % g]) / (2.0 * spacing)).collect());
        Ok(self)
    }

    pub fn grid_size(&self) -> usize {
        self.g
    }

    pub fn cv_dim(&self) -> usize {
        self.m
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn bounds(&self) -> AprioriBounds {
        self.bounds
    }

    pub fn deposits(&self) -> u64 {
        self.deposits
    }

    /// Number of bound checks performed and how many failed.
    pub fn bound_checks(&self) -> (u64, u64) {
        (self.checks, self.violations)
    }

    pub fn is_fixed(&self) -> bool {
        self.table.is_none()
    }

    pub fn kernel(&self) -> Option<&KernelSpec> {
        self.table.as_ref().map(|t| t.spec())
    }

    pub fn normalization(&self) -> &NormalizationSpec {
        &self.norm
    }

    /// Raw accumulation `h`.
    pub fn h(&self) -> &[f64] {
        &self.h
    }

    /// Current normalizer `n(h)`.
    pub fn normalizer(&self) -> f64 {
        self.n
    }

    fn update_stats(&mut self) {
        self.mean = shifted_mean(&self.h);
        self.n = if self.norm.is_l1() { self.mean } else { self.norm.eval_raw(&self.h, self.g, self.m) };
    }

    /// `h += w dt K(., z)`, `theta += w dt`, then checks the a-priori bounds.
    pub fn deposit(&mut self, z: &[f64], w: f64, dt: f64) -> Result<()> {
        if !(w > 0.0 && w.is_finite()) || !(dt > 0.0 && dt.is_finite()) {
            return Err(AbpError::invalid("deposit", format!("weight and time step must be positive (w={w}, dt={dt})")));
        }
        debug_assert!(
            w >= self.bounds.bound_m * (1.0 - 1e-9) && w <= self.bounds.bound_m0 * (1.0 + 1e-9),
            "deposit weight {w} outside the a-priori bounds"
        );
        let table = self.table.as_mut().ok_or(AbpError::Disabled("deposits into a fixed bias"))?;
        let c = w * dt;
        table.accumulate(z, c, &mut self.h);
        if let Some(dh) = self.dh.as_mut() {
            table.accumulate_diff(z[0], c, dh);
        }
        self.theta += c;
        self.deposits += 1;
        self.update_stats();
        self.check_bounds();
        if self.refresh_stride > 1 {
            self.since_refresh += 1;
            if self.since_refresh >= self.refresh_stride {
                self.since_refresh = 0;
                self.frozen = Some(View { h: self.h.clone(), n: self.n, mean: self.mean });
            }
        }
        Ok(())
    }

    fn check_bounds(&mut self) {
        let (lo, hi) = min_max(&self.h);
        self.checks += 1;
        let ok = lo / self.n >= self.bounds.bound_m * (1.0 - BOUND_SLACK)
            && hi / self.n <= self.bounds.bound_m0 * (1.0 + BOUND_SLACK);
        if !ok {
            self.violations += 1;
        }
    }

    /// Checks `|D F| <= bound_m1` at every node; returns whether it holds.
    pub fn check_gradient_bound(&self) -> bool {
        max_centered_diff(&self.h, self.g, self.m) / self.n <= self.bounds.bound_m1 * (1.0 + BOUND_SLACK)
    }

    #[inline]
    fn view(&self) -> (&[f64], f64, f64) {
        match &self.frozen {
            Some(v) => (&v.h, v.n, v.mean),
            None => (&self.h, self.n, self.mean),
        }
    }

    /// `F_t(z)`: interpolated `h` over `n(h)`.
    #[inline]
    pub fn weight(&self, z: &[f64]) -> f64 {
        let (h, n, _) = self.view();
        interp_periodic(h, self.g, self.m, z) / n
    }

    /// `A_t(z)` by linear interpolation of the node values.
    pub fn bias_value(&self, z: &[f64]) -> f64 {
        let (h, _, mean) = self.view();
        let a = |i: usize| -(h[i] / mean).ln();
        let g = self.g;
        if self.m == 1 {
            let (i, j, t) = cell(z[0], g);
            if t == 0.0 {
                a(i)
            } else {
                lerp(a(i), a(j), t)
            }
        } else {
            let (i0, i1, s) = cell(z[0], g);
            let (j0, j1, t) = cell(z[1], g);
            let lo = lerp(a(i0 * g + j0), a(i0 * g + j1), t);
            let hi = lerp(a(i1 * g + j0), a(i1 * g + j1), t);
            lerp(lo, hi, s)
        }
    }

    #[inline]
    fn node_grad_1d(h: &[f64], g: usize, i: usize) -> f64 {
        let up = h[if i + 1 == g { 0 } else { i + 1 }];
        let down = h[if i == 0 { g - 1 } else { i - 1 }];
        -(up - down) * (g as f64 * 0.5) / h[i]
    }

    fn node_grad_2d(h: &[f64], g: usize, i: usize, j: usize, out: &mut [f64; 2]) {
        let ip = if i + 1 == g { 0 } else { i + 1 };
        let im = if i == 0 { g - 1 } else { i - 1 };
        let jp = if j + 1 == g { 0 } else { j + 1 };
        let jm = if j == 0 { g - 1 } else { j - 1 };
        let c = h[i * g + j];
        let half = g as f64 * 0.5;
        out[0] = -(h[ip * g + j] - h[im * g + j]) * half / c;
        out[1] = -(h[i * g + jp] - h[i * g + jm]) * half / c;
    }

    /// `grad A_t(z)`: centred differences `-(D h)/h` at the nodes, linearly interpolated.
    #[inline]
    pub fn bias_gradient(&self, z: &[f64], out: &mut [f64]) {
        let (h, _, _) = self.view();
        let g = self.g;
        if self.m == 1 {
            let (i, j, t) = cell(z[0], g);
            let gi = Self::node_grad_1d(h, g, i);
            out[0] = if t == 0.0 { gi } else { lerp(gi, Self::node_grad_1d(h, g, j), t) };
        } else {
            let (i0, i1, s) = cell(z[0], g);
            let (j0, j1, t) = cell(z[1], g);
            let mut acc = [0.0; 2];
            let mut tmp = [0.0; 2];
            for (i, wi) in [(i0, 1.0 - s), (i1, s)] {
                for (j, wj) in [(j0, 1.0 - t), (j1, t)] {
                    let w = wi * wj;
                    if w != 0.0 {
                        Self::node_grad_2d(h, g, i, j, &mut tmp);
                        acc[0] += w * tmp[0];
                        acc[1] += w * tmp[1];
                    }
                }
            }
            out[..2].copy_from_slice(&acc);
        }
    }

    /// Mean-force estimate `-(int d_z K(z, .) dmu) / (int K(z, .) dmu)`, from the
    /// parallel accumulation of differentiated kernel rows.
    pub fn mean_force(&self, z: f64) -> Result<f64> {
        let dh = self.dh.as_ref().ok_or(AbpError::Disabled("mean force accumulation was not enabled"))?;
        let (i, j, t) = cell(z, self.g);
        let node = |k: usize| -dh[k] / self.h[k];
        Ok(lerp(node(i), node(j), t))
    }

    /// `F = h / n(h)` on the grid (live state).
    pub fn normalized(&self) -> GridFunction {
        GridFunction::new(self.h.iter().map(|v| v / self.n).collect(), self.g, self.m).expect("h is finite")
    }

    /// `A_t` on the grid (live state).
    pub fn free_energy(&self) -> GridFunction {
        GridFunction::new(self.h.iter().map(|v| -(v / self.mean).ln()).collect(), self.g, self.m)
            .expect("h is positive")
    }

    pub fn snapshot(&self) -> BiasSnapshot {
        let g = self.g;
        let len = self.h.len();
        let mut da = vec![vec![0.0; len]; self.m];
        for k in 0..len {
            if self.m == 1 {
                da[0][k] = Self::node_grad_1d(&self.h, g, k);
            } else {
                let mut tmp = [0.0; 2];
                Self::node_grad_2d(&self.h, g, k / g, k % g, &mut tmp);
                da[0][k] = tmp[0];
                da[1][k] = tmp[1];
            }
        }
        BiasSnapshot {
            grid_size: g,
            cv_dim: self.m,
            theta: self.theta,
            h: self.h.clone(),
            f: self.h.iter().map(|v| v / self.n).collect(),
            a: self.h.iter().map(|v| -(v / self.mean).ln()).collect(),
            da,
        }
    }
}

impl BiasFunction for BiasGrid {
    fn cv_dim(&self) -> usize {
        self.m
    }
    fn value(&self, z: &[f64]) -> f64 {
        self.bias_value(z)
    }
    #[inline]
    fn gradient(&self, z: &[f64], out: &mut [f64]) {
        self.bias_gradient(z, out)
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

fn max_centered_diff(h: &[f64], g: usize, m: usize) -> f64 {
    let half = g as f64 * 0.5;
    let mut best: f64 = 0.0;
    if m == 1 {
        for k in 0..g {
            best = best.max((h[(k + 1) % g] - h[(k + g - 1) % g]).abs() * half);
        }
    } else {
        for i in 0..g {
            for j in 0..g {
                let di = h[((i + 1) % g) * g + j] - h[((i + g - 1) % g) * g + j];
                let dj = h[i * g + (j + 1) % g] - h[i * g + (j + g - 1) % g];
                best = best.max(di.abs() * half).max(dj.abs() * half);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelFamily;
    use crate::normalization::NormalizationKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn atom(z: f64) -> CvMeasure {
        CvMeasure::Atoms(vec![(1.0, vec![z])])
    }

    fn default_grid(g: usize) -> BiasGrid {
        BiasGrid::new(&KernelSpec::default(), &NormalizationSpec::l1(), &atom(0.5), g, 1).unwrap()
    }

    #[test]
    fn constant_kernel_is_inert() {
        let mut grid = BiasGrid::new(&KernelSpec::flat(), &NormalizationSpec::l1(), &atom(0.2), 64, 1).unwrap();
        assert!(grid.free_energy().values().iter().all(|&a| a == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let z: f64 = rng.random();
            let w = grid.weight(&[z]);
            grid.deposit(&[z], w, 0.01).unwrap();
        }
        assert!(grid.free_energy().values().iter().all(|&a| a == 0.0));
        let mut g = [1.0];
        grid.bias_gradient(&[0.37], &mut g);
        assert_eq!(g[0], 0.0);
        assert_eq!(grid.weight(&[0.9]), 1.0);
    }

    #[test]
    fn uniform_start_is_flat() {
        let grid = BiasGrid::new(&KernelSpec::default(), &NormalizationSpec::l1(), &CvMeasure::Uniform, 128, 1).unwrap();
        assert!(grid.free_energy().values().iter().all(|a| a.abs() < 1e-10));
    }

    #[test]
    fn single_atom_minimum_at_atom() {
        let grid = default_grid(256);
        let a = grid.free_energy();
        let arg = a.values().iter().enumerate().min_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
        assert_eq!(arg, 128);
        assert!((grid.normalized().mean() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn repeated_deposits_concentrate() {
        let mut grid =
            BiasGrid::new(&KernelSpec::default(), &NormalizationSpec::l1(), &CvMeasure::Uniform, 128, 1).unwrap();
        let mut prev = 0.0;
        for _ in 0..10 {
            grid.deposit(&[0.5], 1.0, 1.0).unwrap();
            let f = grid.normalized().values()[64];
            assert!(f > prev);
            prev = f;
        }
    }

    #[test]
    fn theta_is_additive() {
        let mut grid = default_grid(64);
        for (w, dt) in [(1.0, 0.5), (0.5, 0.5), (0.25, 1.0)] {
            grid.deposit(&[0.1], w, dt).unwrap();
        }
        assert_eq!(grid.theta(), 1.0);
        assert!(grid.deposit(&[0.1], 0.0, 1.0).is_err());
        assert!(grid.deposit(&[0.1], 1.0, -1.0).is_err());
    }

    #[test]
    fn bias_value_interpolation() {
        let a = GridFunction::constant(0.0, 32, 1).unwrap().map(|_| 0.0).unwrap();
        let grid = BiasGrid::fixed(&a, &NormalizationSpec::l1()).unwrap();
        assert_eq!(grid.bias_value(&[0.123]), 0.0);
        let vals: Vec<f64> = (0..32).map(|k| (k as f64 * 0.37).sin()).collect();
        let af = GridFunction::new(vals.clone(), 32, 1).unwrap();
        let grid = BiasGrid::fixed(&af, &NormalizationSpec::l1()).unwrap();
        // A is recovered up to the additive constant fixed by mean(exp(-A)) = 1
        let shift = grid.bias_value(&[0.0]) - vals[0];
        for k in 0..32 {
            assert!((grid.bias_value(&[k as f64 / 32.0]) - vals[k] - shift).abs() < 1e-12);
        }
        let mid = grid.bias_value(&[(3.0 + 0.5) / 32.0]) - shift;
        assert!((mid - 0.5 * (vals[3] + vals[4])).abs() < 1e-15);
    }

    #[test]
    fn bias_gradient_of_sine() {
        let af = GridFunction::from_fn(256, 1, |z| (2.0 * PI * z[0]).sin()).unwrap();
        let grid = BiasGrid::fixed(&af, &NormalizationSpec::l1()).unwrap();
        let mut g = [0.0];
        grid.bias_gradient(&[0.0], &mut g);
        assert!((g[0] - 2.0 * PI).abs() < 1e-3, "{}", g[0]);
    }

    #[test]
    fn gradient_matches_mean_force() {
        let mut grid = default_grid(256).with_mean_force().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let z: f64 = rng.random();
            let w = grid.weight(&[z]);
            grid.deposit(&[z], w, 0.01).unwrap();
        }
        for k in 0..256 {
            let z = k as f64 / 256.0;
            let mut g = [0.0];
            grid.bias_gradient(&[z], &mut g);
            assert!((g[0] - grid.mean_force(z).unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn mean_force_examples() {
        let mut flat = BiasGrid::new(&KernelSpec::flat(), &NormalizationSpec::l1(), &atom(0.3), 64, 1)
            .unwrap()
            .with_mean_force()
            .unwrap();
        flat.deposit(&[0.7], 1.0, 0.1).unwrap();
        assert_eq!(flat.mean_force(0.41).unwrap(), 0.0);
        let mut one = BiasGrid::new(&KernelSpec::default(), &NormalizationSpec::l1(), &CvMeasure::Uniform, 64, 1)
            .unwrap()
            .with_mean_force()
            .unwrap();
        one.deposit(&[0.5], 1.0, 1.0).unwrap();
        assert!(one.mean_force(0.5).unwrap().abs() < 1e-12);
        assert!(default_grid(64).mean_force(0.5).is_err());
    }

    #[test]
    fn mean_force_matches_difference_of_bias_value() {
        // wide kernel and fine grid, so the centred difference of A and -(Dh)/h agree
        let spec = KernelSpec::gaussian(0.2, 0.9).unwrap();
        let g = 8192;
        let mut grid = BiasGrid::new(&spec, &NormalizationSpec::l1(), &atom(0.5), g, 1).unwrap().with_mean_force().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..200 {
            let z: f64 = rng.random();
            let w = grid.weight(&[z]);
            grid.deposit(&[z], w, 0.05).unwrap();
        }
        let dz = 1.0 / g as f64;
        for k in (0..g).step_by(64) {
            let z = k as f64 * dz;
            let fd = (grid.bias_value(&[z + dz]) - grid.bias_value(&[z - dz])) / (2.0 * dz);
            assert!((fd - grid.mean_force(z).unwrap()).abs() < 1e-6, "z={z}: {fd}");
        }
    }

    #[test]
    fn weighted_measure_update_is_exact() {
        // K(mu_bar) = h / (1 + theta) moves by (w dt / (1 + theta')) (row - K(mu_bar))
        let mut grid = default_grid(128);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut table = RowTable::new(&KernelSpec::default(), 128, 1).unwrap();
        for _ in 0..100 {
            let z: f64 = rng.random();
            let w = grid.weight(&[z]);
            let dt = 0.01;
            let before: Vec<f64> = grid.h().iter().map(|v| v / (1.0 + grid.theta())).collect();
            grid.deposit(&[z], w, dt).unwrap();
            let after: Vec<f64> = grid.h().iter().map(|v| v / (1.0 + grid.theta())).collect();
            let row = table.row(&[z]);
            let step = w * dt / (1.0 + grid.theta());
            for k in 0..128 {
                let predicted = before[k] + step * (row[k] - before[k]);
                assert!((after[k] - predicted).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bounds_hold_for_every_normalization() {
        let kinds = [
            NormalizationKind::L1,
            NormalizationKind::Lq { q: 2.0 },
            NormalizationKind::PointEval { z0: vec![0.25] },
            NormalizationKind::Min,
            NormalizationKind::Max,
        ];
        for kind in kinds {
            let norm = NormalizationSpec::new(kind, None).unwrap();
            let mut grid = BiasGrid::new(&KernelSpec::default(), &norm, &atom(0.1), 128, 1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            for _ in 0..2000 {
                let z: f64 = rng.random_range(0.0..0.3);
                let w = grid.weight(&[z]);
                grid.deposit(&[z], w, 0.05).unwrap();
            }
            assert_eq!(grid.bound_checks(), (2000, 0));
            assert!(grid.check_gradient_bound());
            let f = grid.normalized();
            assert!((norm.n_value(&f).unwrap() - 1.0).abs() < 1e-10);
            let b = grid.bounds();
            let amax = grid.free_energy().values().iter().map(|a| a.abs()).fold(0.0, f64::max);
            assert!(amax <= (b.bound_m0 / b.bound_m).ln());
        }
    }

    #[test]
    fn two_dimensional_grid() {
        let mut grid = BiasGrid::new(
            &KernelSpec::default(),
            &NormalizationSpec::l1(),
            &CvMeasure::Atoms(vec![(1.0, vec![0.5, 0.25])]),
            32,
            2,
        )
        .unwrap();
        let a = grid.free_energy();
        let arg = a.values().iter().enumerate().min_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
        assert_eq!(arg, 16 * 32 + 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let z = [rng.random::<f64>(), rng.random::<f64>()];
            let w = grid.weight(&z);
            grid.deposit(&z, w, 0.01).unwrap();
        }
        assert_eq!(grid.bound_checks().1, 0);
        assert!((grid.snapshot().f.iter().sum::<f64>() / 1024.0 - 1.0).abs() < 1e-12);
        let mut g = [0.0; 2];
        grid.bias_gradient(&[0.3, 0.6], &mut g);
        let dz = 1e-6;
        // between nodes the interpolated gradient tracks the slope of the interpolated A only roughly
        let fd = (grid.bias_value(&[0.3 + dz, 0.6]) - grid.bias_value(&[0.3 - dz, 0.6])) / (2.0 * dz);
        assert!((g[0] - fd).abs() < 0.5 * (1.0 + fd.abs()));
    }

    #[test]
    fn refresh_stride_lags_queries() {
        let grid = default_grid(64).with_refresh_stride(3).unwrap();
        let mut grid = grid;
        let w0 = grid.weight(&[0.2]);
        grid.deposit(&[0.2], 1.0, 1.0).unwrap();
        grid.deposit(&[0.2], 1.0, 1.0).unwrap();
        assert_eq!(grid.weight(&[0.2]), w0);
        grid.deposit(&[0.2], 1.0, 1.0).unwrap();
        assert!(grid.weight(&[0.2]) > w0);
        assert!(default_grid(64).with_refresh_stride(0).is_err());
    }

    #[test]
    fn mixture_kernel_grid() {
        let spec = KernelSpec::new(KernelFamily::Mixture { epsilons: vec![0.04, 0.08, 0.06] }, 0.05, 0.9, 5).unwrap();
        let mut grid = BiasGrid::new(&spec, &NormalizationSpec::l1(), &atom(0.5), 128, 1).unwrap();
        for k in 0..300 {
            let z = (k as f64 * 0.618).fract();
            let w = grid.weight(&[z]);
            grid.deposit(&[z], w, 0.05).unwrap();
        }
        assert_eq!(grid.bound_checks().1, 0);
    }

    #[test]
    fn fixed_grid_rejects_deposits() {
        let a = GridFunction::constant(0.0, 16, 1).unwrap();
        let mut grid = BiasGrid::fixed(&a, &NormalizationSpec::l1()).unwrap();
        assert!(grid.deposit(&[0.1], 1.0, 0.1).is_err());
        assert_eq!(grid.weight(&[0.3]), 1.0);
    }

    proptest! {
        #[test]
        fn bounds_hold_on_random_streams(seed in 0u64..1000, eps in 0.03f64..0.3, alpha in 0.05f64..1.0) {
            let spec = KernelSpec::gaussian(eps, alpha).unwrap();
            let mut grid = BiasGrid::new(&spec, &NormalizationSpec::l1(), &atom(0.3), 64, 1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..200 {
                let z: f64 = rng.random();
                let w = grid.weight(&[z]);
                grid.deposit(&[z], w, rng.random_range(0.001..0.5)).unwrap();
            }
            prop_assert_eq!(grid.bound_checks().1, 0);
            prop_assert!(grid.check_gradient_bound());
            prop_assert!((grid.normalized().mean() - 1.0).abs() < 1e-10);
        }
    }
}
