//! The coupled adaptive loop, the fixed-bias baseline, and replica ensembles.

use crate::bias::{BiasGrid, BiasSnapshot, CvMeasure};
use crate::error::{AbpError, Result};
use crate::geometry::wrap_scalar;
use crate::integrators::{RngStream, Stepper};
use crate::kernel::KernelSpec;
use crate::model::{DynamicsSpec, Family, Space, State};
use crate::normalization::{GridFunction, NormalizationSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::time::Instant;

/// Default cap on the number of steps of a single run.
pub const DEFAULT_STEP_CAP: u64 = 100_000_000;

/// Named observables. Coordinates index the configuration `x` (or `q`);
/// `MomentumSquared` reads the Langevin momenta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Observable {
    Constant { value: f64 },
    /// `cos(2 pi k x_i)`
    Cos { coord: usize, k: i32 },
    /// `sin(2 pi k x_i)`
    Sin { coord: usize, k: i32 },
    /// `prod_i cos(2 pi k_i x_i)`
    CosProduct { freqs: Vec<i32> },
    /// Periodic bump `exp((cos(2 pi (x_i - center)) - 1) / (2 pi width)^2)`.
    Bump { coord: usize, center: f64, width: f64 },
    /// `x_i^2`
    Square { coord: usize },
    /// `p_i^2`
    MomentumSquared { coord: usize },
}

impl Observable {
    pub fn name(&self) -> String {
        match self {
            Observable::Constant { value } => format!("const({value})"),
            Observable::Cos { coord, k } => format!("cos({k}x{coord})"),
            Observable::Sin { coord, k } => format!("sin({k}x{coord})"),
            Observable::CosProduct { freqs } => format!("cosprod({freqs:?})"),
            Observable::Bump { coord, center, width } => format!("bump(x{coord},{center},{width})"),
            Observable::Square { coord } => format!("x{coord}^2"),
            Observable::MomentumSquared { coord } => format!("p{coord}^2"),
        }
    }

    pub fn uses_momentum(&self) -> bool {
        matches!(self, Observable::MomentumSquared { .. })
    }

    /// Value on the configuration alone; momentum observables give `None`.
    pub fn eval_config(&self, x: &[f64]) -> Option<f64> {
        Some(match self {
            Observable::Constant { value } => *value,
            Observable::Cos { coord, k } => (2.0 * PI * *k as f64 * x[*coord]).cos(),
            Observable::Sin { coord, k } => (2.0 * PI * *k as f64 * x[*coord]).sin(),
            Observable::CosProduct { freqs } => {
                freqs.iter().zip(x).map(|(&k, &xi)| (2.0 * PI * k as f64 * xi).cos()).product()
            }
            Observable::Bump { coord, center, width } => {
                let w = 2.0 * PI * width;
                (((2.0 * PI * (x[*coord] - center)).cos() - 1.0) / (w * w)).exp()
            }
            Observable::Square { coord } => x[*coord] * x[*coord],
            Observable::MomentumSquared { .. } => return None,
        })
    }

    #[inline]
    pub fn eval(&self, s: &State) -> f64 {
        match self {
            Observable::MomentumSquared { coord } => s.aux[*coord] * s.aux[*coord],
            _ => self.eval_config(&s.x).unwrap_or(f64::NAN),
        }
    }

    pub fn check(&self, dynamics: &DynamicsSpec) -> Result<()> {
        let d = dynamics.dim();
        let bad = |c: usize| c >= d;
        let ok = match self {
            Observable::Cos { coord, .. }
            | Observable::Sin { coord, .. }
            | Observable::Bump { coord, .. }
            | Observable::Square { coord } => !bad(*coord),
            Observable::CosProduct { freqs } => freqs.len() == d,
            Observable::MomentumSquared { coord } => {
                matches!(dynamics.family, Family::Langevin { .. }) && !bad(*coord)
            }
            Observable::Constant { .. } => true,
        };
        if ok {
            Ok(())
        } else {
            Err(AbpError::invalid("observable", format!("{} does not fit the dynamics", self.name())))
        }
    }
}

/// Initial measure of the weighted estimator and of the bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialMeasure {
    /// Dirac mass at the initial state.
    Atom,
    /// Lebesgue measure on the state torus.
    Uniform,
}

/// A trajectory that the adaptive loop can drive.
pub trait Process {
    type State: Clone;

    fn cv_dim(&self) -> usize;
    fn n_observables(&self) -> usize;
    fn observable_names(&self) -> Vec<String>;
    /// `xi_S(s)`
    fn xi(&self, s: &Self::State, z: &mut [f64]);
    fn observe(&self, s: &Self::State, out: &mut [f64]);
    /// Advance by one step with the drift of `bias`.
    fn step(&mut self, bias: &BiasGrid, s: &mut Self::State, noise: &mut RngStream) -> Result<()>;
    /// Flattened state for reports.
    fn flatten(&self, s: &Self::State) -> Vec<f64>;
    /// `mu0(phi)` for each observable, and the image of `mu0` under `xi_S`.
    fn initial(&self, s0: &Self::State, mu0: InitialMeasure) -> Result<(Vec<f64>, CvMeasure)>;
}

/// Finite-dimensional Brownian, Langevin or extended dynamics.
#[derive(Debug, Clone)]
pub struct DiffusionProcess {
    pub dynamics: DynamicsSpec,
    pub observables: Vec<Observable>,
    stepper: Stepper,
}

impl DiffusionProcess {
    pub fn new(dynamics: DynamicsSpec, observables: Vec<Observable>, dt: f64) -> Result<Self> {
        for o in &observables {
            o.check(&dynamics)?;
        }
        let stepper = Stepper::new(&dynamics, dt)?;
        Ok(Self { dynamics, observables, stepper })
    }
}

/// Rectangle-rule average over `T^d` with `n` nodes per axis, `d <= 2`.
fn torus_average(d: usize, n: usize, f: impl Fn(&[f64]) -> f64) -> Result<f64> {
    match d {
        1 => Ok((0..n).map(|i| f(&[i as f64 / n as f64])).sum::<f64>() / n as f64),
        2 => {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += f(&[i as f64 / n as f64, j as f64 / n as f64]);
                }
            }
            Ok(s / (n * n) as f64)
        }
        _ => Err(AbpError::Unsupported("uniform initial measure beyond two dimensions".into())),
    }
}

impl Process for DiffusionProcess {
    type State = State;

    fn cv_dim(&self) -> usize {
        self.dynamics.cv_dim()
    }

    fn n_observables(&self) -> usize {
        self.observables.len()
    }

    fn observable_names(&self) -> Vec<String> {
        self.observables.iter().map(|o| o.name()).collect()
    }

    #[inline]
    fn xi(&self, s: &State, z: &mut [f64]) {
        self.dynamics.xi_state(s, z)
    }

    #[inline]
    fn observe(&self, s: &State, out: &mut [f64]) {
        for (o, obs) in out.iter_mut().zip(&self.observables) {
            *o = obs.eval(s);
        }
    }

    #[inline]
    fn step(&mut self, bias: &BiasGrid, s: &mut State, noise: &mut RngStream) -> Result<()> {
        self.stepper.step(&self.dynamics, bias, s, noise)
    }

    fn flatten(&self, s: &State) -> Vec<f64> {
        s.x.iter().chain(&s.aux).copied().collect()
    }

    fn initial(&self, s0: &State, mu0: InitialMeasure) -> Result<(Vec<f64>, CvMeasure)> {
        self.dynamics.check_state(s0)?;
        match mu0 {
            InitialMeasure::Atom => {
                let mut phi = vec![0.0; self.observables.len()];
                self.observe(s0, &mut phi);
                let mut z = vec![0.0; self.cv_dim()];
                self.xi(s0, &mut z);
                Ok((phi, CvMeasure::Atoms(vec![(1.0, z)])))
            }
            InitialMeasure::Uniform => {
                if self.dynamics.potential.space() != Space::Torus
                    || matches!(self.dynamics.family, Family::Langevin { .. })
                {
                    return Err(AbpError::Unsupported("uniform initial measure needs a torus without momenta".into()));
                }
                let d = self.dynamics.dim();
                let n = if d == 1 { 512 } else { 128 };
                let phi = self
                    .observables
                    .iter()
                    .map(|o| torus_average(d, n, |x| o.eval_config(x).unwrap_or(f64::NAN)))
                    .collect::<Result<Vec<_>>>()?;
                Ok((phi, CvMeasure::Uniform))
            }
        }
    }
}

/// Running sums of the estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorAccumulators {
    pub s_w: f64,
    pub s_wphi: Vec<f64>,
    pub s_phi: Vec<f64>,
    pub mu0_phi: Vec<f64>,
    /// Running sum of the time steps, `S_phi` for `phi = 1`.
    pub s_t: f64,
    pub steps: u64,
    pub dt: f64,
    pub histogram: Histogram,
}

/// Step counts of `xi_S` in `bins^m` cells of `T^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: usize,
    pub cv_dim: usize,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(bins: usize, cv_dim: usize) -> Self {
        Self { bins, cv_dim, counts: vec![0; bins.pow(cv_dim as u32)] }
    }

    #[inline]
    pub fn add(&mut self, z: &[f64]) {
        let b = self.bins;
        let idx = |v: f64| ((wrap_scalar(v) * b as f64) as usize).min(b - 1);
        let k = if self.cv_dim == 1 { idx(z[0]) } else { idx(z[0]) * b + idx(z[1]) };
        self.counts[k] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Largest over smallest bin count (infinite if a bin is empty).
    pub fn max_min_ratio(&self) -> f64 {
        let lo = *self.counts.iter().min().unwrap_or(&0);
        let hi = *self.counts.iter().max().unwrap_or(&0);
        if lo == 0 {
            f64::INFINITY
        } else {
            hi as f64 / lo as f64
        }
    }

    /// Counts of the first collective variable, summed over the others.
    pub fn marginal(&self) -> Vec<u64> {
        if self.cv_dim == 1 {
            return self.counts.clone();
        }
        self.counts.chunks(self.bins).map(|c| c.iter().sum()).collect()
    }
}

impl EstimatorAccumulators {
    pub fn new(mu0_phi: Vec<f64>, dt: f64, bins: usize, cv_dim: usize) -> Self {
        let n = mu0_phi.len();
        Self { s_w: 0.0, s_wphi: vec![0.0; n], s_phi: vec![0.0; n], mu0_phi, s_t: 0.0, steps: 0, dt, histogram: Histogram::new(bins, cv_dim) }
    }

    /// Adds one left-point quadrature slice of length `dt`.
    #[inline]
    pub fn record(&mut self, w: f64, phi: &[f64], z: &[f64]) {
        let dt = self.dt;
        self.s_w += w * dt;
        for ((swp, sp), &p) in self.s_wphi.iter_mut().zip(self.s_phi.iter_mut()).zip(phi) {
            *swp += w * p * dt;
            *sp += p * dt;
        }
        self.s_t += dt;
        self.steps += 1;
        self.histogram.add(z);
    }

    pub fn elapsed(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    /// `(mu0(phi) + S_wphi) / (1 + S_w)`
    pub fn mu_bar(&self) -> Vec<f64> {
        self.mu0_phi.iter().zip(&self.s_wphi).map(|(m, s)| (m + s) / (1.0 + self.s_w)).collect()
    }

    /// `(mu0(phi) + S_phi) / (1 + t)`
    pub fn rho_bar(&self) -> Vec<f64> {
        self.mu0_phi.iter().zip(&self.s_phi).map(|(m, s)| (m + s) / (1.0 + self.s_t)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub t: f64,
    pub mu_bar: Vec<f64>,
    pub rho_bar: Vec<f64>,
    pub theta: f64,
    /// `max_z |A_t - A_ref|` on the grid when a reference bias is attached.
    pub a_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub observables: Vec<String>,
    pub mu_bar: Vec<f64>,
    pub rho_bar: Vec<f64>,
    pub accumulators: EstimatorAccumulators,
    pub bias_final: BiasSnapshot,
    pub series: Vec<CheckpointRow>,
    pub final_state: Vec<f64>,
    pub seed: u64,
    pub stream: u64,
    pub adaptive: bool,
    pub bound_checks: u64,
    pub bound_violations: u64,
    pub gradient_bound_holds: bool,
    pub wall_seconds: f64,
}

impl RunReport {
    /// Equality of everything except wall-clock time.
    pub fn same_outcome(&self, other: &RunReport) -> bool {
        let mut a = self.clone();
        a.wall_seconds = other.wall_seconds;
        a == *other
    }
}

/// Time grid and bookkeeping of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub dt: f64,
    pub t_final: f64,
    pub checkpoints: Vec<f64>,
    pub seed: u64,
    pub stream: u64,
    pub histogram_bins: usize,
    pub step_cap: u64,
}

impl RunSettings {
    pub fn new(dt: f64, t_final: f64, seed: u64) -> Self {
        Self { dt, t_final, checkpoints: vec![], seed, stream: 0, histogram_bins: 50, step_cap: DEFAULT_STEP_CAP }
    }

    fn step_count(&self, t: f64) -> Result<u64> {
        if !(self.dt > 0.0) || !(t >= 0.0) || !t.is_finite() {
            return Err(AbpError::invalid("run", "dt must be positive and times nonnegative"));
        }
        let n = (t / self.dt).round();
        if n > self.step_cap as f64 {
            return Err(AbpError::invalid("run", format!("{n} steps exceed the cap of {}", self.step_cap)));
        }
        Ok(n as u64)
    }
}

/// A trajectory, its bias and its accumulators.
pub struct AbpState<P: Process> {
    pub process: P,
    pub state: P::State,
    pub bias: BiasGrid,
    pub acc: EstimatorAccumulators,
    pub noise: RngStream,
    pub adaptive: bool,
    z: Vec<f64>,
    phi: Vec<f64>,
}

impl<P: Process> AbpState<P> {
    pub fn new(
        process: P,
        state: P::State,
        bias: BiasGrid,
        mu0_phi: Vec<f64>,
        adaptive: bool,
        settings: &RunSettings,
    ) -> Result<Self> {
        if bias.cv_dim() != process.cv_dim() {
            return Err(AbpError::Dimension { expected: process.cv_dim(), got: bias.cv_dim() });
        }
        if mu0_phi.len() != process.n_observables() {
            return Err(AbpError::Dimension { expected: process.n_observables(), got: mu0_phi.len() });
        }
        let m = process.cv_dim();
        let n = process.n_observables();
        Ok(Self {
            acc: EstimatorAccumulators::new(mu0_phi, settings.dt, settings.histogram_bins, m),
            noise: RngStream::new(settings.seed, settings.stream),
            process,
            state,
            bias,
            adaptive,
            z: vec![0.0; m],
            phi: vec![0.0; n],
        })
    }

    /// One step: weight, accumulate, move with the current bias, deposit.
    #[inline]
    pub fn abp_step(&mut self) -> Result<()> {
        self.process.xi(&self.state, &mut self.z);
        let w = self.bias.weight(&self.z);
        self.process.observe(&self.state, &mut self.phi);
        self.acc.record(w, &self.phi, &self.z);
        let step = self.acc.steps;
        let dt = self.acc.dt;
        self.process.step(&self.bias, &mut self.state, &mut self.noise).map_err(|e| match e {
            AbpError::Blowup { detail, .. } => AbpError::Blowup { step, time: step as f64 * dt, detail },
            other => other,
        })?;
        if self.adaptive {
            self.bias.deposit(&self.z, w, dt)?;
        }
        Ok(())
    }

    fn checkpoint(&self, reference: Option<&GridFunction>) -> CheckpointRow {
        CheckpointRow {
            t: self.acc.elapsed(),
            mu_bar: self.acc.mu_bar(),
            rho_bar: self.acc.rho_bar(),
            theta: self.acc.s_w,
            a_error: reference.map(|r| self.bias.free_energy().max_abs_diff(r)),
        }
    }

    /// Runs to `t_final`, recording a row at every checkpoint.
    pub fn run(mut self, settings: &RunSettings, reference: Option<&GridFunction>) -> Result<RunReport> {
        let start = Instant::now();
        let total = settings.step_count(settings.t_final)?;
        let mut marks = settings
            .checkpoints
            .iter()
            .map(|&t| settings.step_count(t))
            .collect::<Result<Vec<_>>>()?;
        marks.retain(|&k| k <= total);
        marks.sort_unstable();
        marks.dedup();
        if let Some(r) = reference {
            if r.grid_size() != self.bias.grid_size() || r.cv_dim() != self.bias.cv_dim() {
                return Err(AbpError::invalid("reference bias", "grid differs from the bias grid"));
            }
        }
        let mut series = Vec::with_capacity(marks.len());
        let mut next = marks.iter().peekable();
        while next.peek() == Some(&&0) {
            series.push(self.checkpoint(reference));
            next.next();
        }
        for k in 1..=total {
            self.abp_step()?;
            while next.peek() == Some(&&k) {
                series.push(self.checkpoint(reference));
                next.next();
            }
        }
        let (checks, violations) = self.bias.bound_checks();
        Ok(RunReport {
            observables: self.process.observable_names(),
            mu_bar: self.acc.mu_bar(),
            rho_bar: self.acc.rho_bar(),
            bias_final: self.bias.snapshot(),
            final_state: self.process.flatten(&self.state),
            series,
            seed: settings.seed,
            stream: settings.stream,
            adaptive: self.adaptive,
            bound_checks: checks,
            bound_violations: violations,
            gradient_bound_holds: self.bias.is_fixed() || self.bias.check_gradient_bound(),
            accumulators: self.acc,
            wall_seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Everything needed for one finite-dimensional run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub dynamics: DynamicsSpec,
    pub kernel: KernelSpec,
    pub norm: NormalizationSpec,
    pub grid_size: usize,
    pub refresh_stride: usize,
    pub mean_force: bool,
    pub observables: Vec<Observable>,
    pub x0: State,
    pub mu0: InitialMeasure,
    pub settings: RunSettings,
    /// Reference `A` on the bias grid for the error column.
    pub reference_bias: Option<GridFunction>,
}

impl RunConfig {
    pub fn new(dynamics: DynamicsSpec, x0: State, observables: Vec<Observable>, settings: RunSettings) -> Self {
        let m = dynamics.cv_dim();
        Self {
            dynamics,
            kernel: KernelSpec::default(),
            norm: NormalizationSpec::l1(),
            grid_size: if m == 1 { 256 } else { 64 },
            refresh_stride: 1,
            mean_force: false,
            observables,
            x0,
            mu0: InitialMeasure::Atom,
            settings,
            reference_bias: None,
        }
    }

    fn with_stream(&self, stream: u64) -> Self {
        let mut c = self.clone();
        c.settings.stream = stream;
        c
    }
}

fn prepare(cfg: &RunConfig) -> Result<(DiffusionProcess, Vec<f64>, CvMeasure, State)> {
    let process = DiffusionProcess::new(cfg.dynamics.clone(), cfg.observables.clone(), cfg.settings.dt)?;
    let mut x0 = cfg.x0.clone();
    cfg.dynamics.check_state(&x0)?;
    cfg.dynamics.wrap_state(&mut x0);
    let (mu0_phi, cv0) = process.initial(&x0, cfg.mu0)?;
    Ok((process, mu0_phi, cv0, x0))
}

/// The adaptive biasing potential run.
pub fn run_abp(cfg: &RunConfig) -> Result<RunReport> {
    let (process, mu0_phi, cv0, x0) = prepare(cfg)?;
    let mut bias = BiasGrid::new(&cfg.kernel, &cfg.norm, &cv0, cfg.grid_size, cfg.dynamics.cv_dim())?
        .with_refresh_stride(cfg.refresh_stride)?;
    if cfg.mean_force {
        bias = bias.with_mean_force()?;
    }
    AbpState::new(process, x0, bias, mu0_phi, true, &cfg.settings)?.run(&cfg.settings, cfg.reference_bias.as_ref())
}

/// Biased dynamics with the frozen weight `F = N(exp(-A_fixed))`.
pub fn run_fixed_bias(cfg: &RunConfig, a_fixed: &GridFunction) -> Result<RunReport> {
    if a_fixed.cv_dim() != cfg.dynamics.cv_dim() {
        return Err(AbpError::Dimension { expected: cfg.dynamics.cv_dim(), got: a_fixed.cv_dim() });
    }
    let (process, mu0_phi, _, x0) = prepare(cfg)?;
    let bias = BiasGrid::fixed(a_fixed, &cfg.norm)?;
    let reference = cfg.reference_bias.as_ref().filter(|r| r.grid_size() == a_fixed.grid_size());
    AbpState::new(process, x0, bias, mu0_phi, false, &cfg.settings)?.run(&cfg.settings, reference)
}

/// Runs `replicas` independent copies on streams `stream, stream + 1, ...`.
/// With `fixed`, every copy uses that frozen bias.
pub fn run_ensemble(cfg: &RunConfig, replicas: usize, fixed: Option<&GridFunction>) -> Vec<Result<RunReport>> {
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let c = cfg.with_stream(cfg.settings.stream + r);
            match fixed {
                Some(a) => run_fixed_bias(&c, a),
                None => run_abp(&c),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub t: f64,
    pub mean: f64,
    pub variance: f64,
    pub scaled_variance: f64,
    /// 95% interval for `t Var`.
    pub ci_low: f64,
    pub ci_high: f64,
    /// `mean - target` when a target is supplied.
    pub bias: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceTable {
    pub observable: String,
    pub replicas: usize,
    pub survivors: usize,
    pub failures: Vec<(usize, String)>,
    pub rows: Vec<VarianceRow>,
}

impl VarianceTable {
    /// Mean of `t Var` over checkpoints with `t >= from`.
    pub fn plateau(&self, from: f64) -> f64 {
        let tail: Vec<f64> = self.rows.iter().filter(|r| r.t >= from).map(|r| r.scaled_variance).collect();
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// Upper-tail chi-square quantile (Wilson-Hilferty).
fn chi2_quantile(k: f64, z: f64) -> f64 {
    let a = 2.0 / (9.0 * k);
    k * (1.0 - a + z * a.sqrt()).powi(3)
}

/// Sample mean and unbiased variance.
pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = if x.len() > 1 { x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var)
}

/// Replica statistics of `mu_bar_t(phi)` for observable `index` at the
/// configured checkpoints.
pub fn variance_table(
    reports: &[Result<RunReport>],
    index: usize,
    target: Option<f64>,
) -> Result<VarianceTable> {
    let ok: Vec<&RunReport> = reports.iter().filter_map(|r| r.as_ref().ok()).collect();
    let failures = reports
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().err().map(|e| (i, e.to_string())))
        .collect();
    if ok.len() < 2 {
        return Err(AbpError::invalid("ensemble", "fewer than two surviving replicas"));
    }
    let n_rows = ok[0].series.len();
    let mut rows = Vec::with_capacity(n_rows);
    for k in 0..n_rows {
        let t = ok[0].series[k].t;
        let vals: Vec<f64> = ok.iter().map(|r| r.series[k].mu_bar[index]).collect();
        let (mean, variance) = mean_var(&vals);
        let dof = (vals.len() - 1) as f64;
        let sv = t * variance;
        rows.push(VarianceRow {
            t,
            mean,
            variance,
            scaled_variance: sv,
            ci_low: sv * dof / chi2_quantile(dof, 1.959964),
            ci_high: sv * dof / chi2_quantile(dof, -1.959964),
            bias: target.map(|m| mean - m),
        });
    }
    Ok(VarianceTable {
        observable: ok[0].observables.get(index).cloned().unwrap_or_default(),
        replicas: reports.len(),
        survivors: ok.len(),
        failures,
        rows,
    })
}

/// `t Var(mu_bar_t(phi))` over `replicas` independent runs.
pub fn replica_variance(
    cfg: &RunConfig,
    replicas: usize,
    checkpoints: &[f64],
    fixed: Option<&GridFunction>,
    index: usize,
    target: Option<f64>,
) -> Result<VarianceTable> {
    if replicas < 8 {
        return Err(AbpError::invalid("ensemble", "at least 8 replicas are needed"));
    }
    let mut c = cfg.clone();
    c.settings.checkpoints = checkpoints.to_vec();
    let reports = run_ensemble(&c, replicas, fixed);
    variance_table(&reports, index, target)
}

/// `A'(z)` from the accumulated kernel derivatives.
pub fn mean_force(grid: &BiasGrid, z: f64) -> Result<f64> {
    grid.mean_force(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PotentialSpec, ReactionCoordinate};

    fn flat_config(seed: u64) -> RunConfig {
        let dynm = DynamicsSpec::new(Family::Brownian, PotentialSpec::preset("flat", 1.0).unwrap(), ReactionCoordinate::projection(1)).unwrap();
        let mut s = RunSettings::new(1e-3, 2.0, seed);
        s.checkpoints = vec![0.0, 1.0, 2.0];
        RunConfig::new(dynm, State { x: vec![0.3], aux: vec![] }, vec![Observable::Cos { coord: 0, k: 1 }, Observable::Constant { value: 1.0 }], s)
    }

    #[test]
    fn hand_case_accumulation() {
        let mut acc = EstimatorAccumulators::new(vec![0.0], 0.5, 10, 1);
        acc.record(1.0, &[2.0], &[0.1]);
        acc.record(1.0, &[4.0], &[0.1]);
        assert_eq!(acc.mu_bar(), vec![1.5]);
        assert_eq!(acc.histogram.total(), 2);
        assert_eq!(acc.elapsed(), 1.0);
    }

    #[test]
    fn first_weight_is_exp_minus_a() {
        let mut cfg = flat_config(1);
        cfg.x0.x[0] = 0.25;
        let (process, mu0_phi, cv0, x0) = prepare(&cfg).unwrap();
        let bias = BiasGrid::new(&cfg.kernel, &cfg.norm, &cv0, cfg.grid_size, 1).unwrap();
        let a0 = bias.bias_value(&[0.25]);
        let w0 = bias.weight(&[0.25]);
        assert!((w0 - (-a0).exp()).abs() < 1e-12 * w0);
        let mut st = AbpState::new(process, x0, bias, mu0_phi, true, &cfg.settings).unwrap();
        st.abp_step().unwrap();
        assert!((st.acc.s_w - w0 * 1e-3).abs() < 1e-15);
    }

    #[test]
    fn constant_observable_and_identities() {
        let r = run_abp(&flat_config(2)).unwrap();
        for row in &r.series {
            assert_eq!(row.mu_bar[1], 1.0);
            assert_eq!(row.rho_bar[1], 1.0);
        }
        let acc = &r.accumulators;
        let mu = (acc.mu0_phi[0] + acc.s_wphi[0]) / (1.0 + acc.s_w);
        assert!((mu - r.mu_bar[0]).abs() < 1e-12);
        assert_eq!(acc.histogram.total(), acc.steps);
        assert_eq!(acc.steps, 2000);
        assert_eq!(r.series.len(), 3);
        assert_eq!(r.bound_violations, 0);
    }

    #[test]
    fn seed_determinism() {
        let a = run_abp(&flat_config(5)).unwrap();
        let b = run_abp(&flat_config(5)).unwrap();
        assert!(a.same_outcome(&b));
        let c = run_abp(&flat_config(6)).unwrap();
        assert!(!a.same_outcome(&c));
    }

    #[test]
    fn constant_kernel_matches_unbiased_run_bitwise() {
        let mut cfg = flat_config(9);
        cfg.dynamics = DynamicsSpec::new(Family::Brownian, PotentialSpec::preset("double-well-1d", 1.0).unwrap(), ReactionCoordinate::projection(1)).unwrap();
        cfg.kernel = KernelSpec::flat();
        let adaptive = run_abp(&cfg).unwrap();
        let zero = GridFunction::constant(0.0, cfg.grid_size, 1).unwrap();
        let fixed = run_fixed_bias(&cfg, &zero).unwrap();
        assert_eq!(adaptive.final_state, fixed.final_state);
        assert_eq!(adaptive.mu_bar, fixed.mu_bar);
        assert!(adaptive.bias_final.a.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn ensemble_uses_distinct_streams() {
        let reports = run_ensemble(&flat_config(3), 3, None);
        let a = reports[0].as_ref().unwrap();
        let b = reports[1].as_ref().unwrap();
        assert_eq!((a.stream, b.stream), (0, 1));
        assert_ne!(a.final_state, b.final_state);
    }

    #[test]
    fn constant_observable_has_zero_variance() {
        let mut cfg = flat_config(4);
        cfg.settings.t_final = 0.5;
        let table = replica_variance(&cfg, 8, &[0.25, 0.5], None, 1, Some(1.0)).unwrap();
        assert!(table.rows.iter().all(|r| r.variance == 0.0 && r.bias == Some(0.0)));
        assert!(replica_variance(&cfg, 4, &[0.5], None, 1, None).is_err());
    }

    #[test]
    fn blowup_is_reported_with_step() {
        let dynm = DynamicsSpec::new(
            Family::Brownian,
            PotentialSpec::new(crate::model::PotentialKind::QuadraticCosine { dim: 1, stiffness: 1e3, terms: vec![] }, 1.0).unwrap(),
            ReactionCoordinate::projection(1),
        )
        .unwrap();
        let cfg = RunConfig::new(dynm, State { x: vec![1.0], aux: vec![] }, vec![], RunSettings::new(0.01, 100.0, 1));
        match run_abp(&cfg) {
            Err(AbpError::Blowup { step, .. }) => assert!(step > 0),
            other => panic!("expected blowup, got {other:?}"),
        }
    }

    #[test]
    fn step_cap_enforced() {
        let mut cfg = flat_config(1);
        cfg.settings.step_cap = 100;
        assert!(run_abp(&cfg).is_err());
    }

    #[test]
    fn uniform_prior_on_torus() {
        let mut cfg = flat_config(1);
        cfg.mu0 = InitialMeasure::Uniform;
        let (_, phi, cv, _) = prepare(&cfg).unwrap();
        assert!(phi[0].abs() < 1e-12 && phi[1] == 1.0);
        assert_eq!(cv, CvMeasure::Uniform);
    }
}
