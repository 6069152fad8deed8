//! Spectral-Galerkin ABP for `du = (d^2/dx^2) u - V'(u) + sqrt(2) dW` on `(0,1)`
//! with Dirichlet boundary conditions, in the sine basis `e_n = sqrt(2) sin(n pi x)`.

use crate::bias::{BiasGrid, CvMeasure};
use crate::engine::{AbpState, InitialMeasure, Process, RunReport, RunSettings};
use crate::error::{AbpError, Result};
use crate::integrators::{NoiseSource, RngStream};
use crate::kernel::{kernel_eval, KernelSpec};
use crate::normalization::{GridFunction, NormalizationSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

pub const DEFAULT_MODES: usize = 32;
pub const DEFAULT_GRID: usize = 128;

/// Pointwise potential `V(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Nonlinearity {
    None,
    /// `c cos(x)`, requires `|c| < pi^2`.
    Cosine { c: f64 },
    /// `x^4/4 - x^2/2`; `V''` is unbounded.
    AllenCahn,
}

impl Nonlinearity {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Self::None => 0.0,
            Self::Cosine { c } => c * x.cos(),
            Self::AllenCahn => x.powi(4) / 4.0 - x * x / 2.0,
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match *self {
            Self::None => 0.0,
            Self::Cosine { c } => -c * x.sin(),
            Self::AllenCahn => x * x * x - x,
        }
    }

    /// Whether `sup |V''| < pi^2`.
    pub fn satisfies_spectral_gap(&self) -> bool {
        match *self {
            Self::None => true,
            Self::Cosine { c } => c.abs() < PI * PI,
            Self::AllenCahn => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdeModel {
    pub nonlinearity: Nonlinearity,
    pub modes: usize,
    pub grid: usize,
}

impl SpdeModel {
    /// Rejects cosine models with `|c| >= pi^2`, and Allen-Cahn unless `allow_allen_cahn`.
    pub fn new(nonlinearity: Nonlinearity, modes: usize, grid: usize, allow_allen_cahn: bool) -> Result<Self> {
        if modes == 0 {
            return Err(AbpError::invalid("spde.modes", "need at least one mode"));
        }
        if grid < 4 * modes {
            return Err(AbpError::invalid("spde.grid", format!("need grid >= 4 * modes = {}", 4 * modes)));
        }
        match nonlinearity {
            Nonlinearity::Cosine { c } if !c.is_finite() || c.abs() >= PI * PI => {
                return Err(AbpError::invalid(
                    "spde.c",
                    format!("|c| = {c} violates sup|V''| < pi^2 = {:.6}", PI * PI),
                ))
            }
            Nonlinearity::AllenCahn if !allow_allen_cahn => {
                return Err(AbpError::invalid(
                    "spde.nonlinearity",
                    "allen-cahn violates sup|V''| < pi^2; set spde.allow_allen_cahn to run it anyway",
                ))
            }
            _ => {}
        }
        Ok(Self { nonlinearity, modes, grid })
    }

    pub fn cosine(c: f64) -> Result<Self> {
        Self::new(Nonlinearity::Cosine { c }, DEFAULT_MODES, DEFAULT_GRID, false)
    }

    pub fn gaussian() -> Self {
        Self { nonlinearity: Nonlinearity::None, modes: DEFAULT_MODES, grid: DEFAULT_GRID }
    }
}

/// `lambda_n = n^2 pi^2` for `n >= 1`.
pub fn eigenvalue(n: usize) -> f64 {
    let n = n as f64;
    n * n * PI * PI
}

/// `<e_n, 1>` for `n >= 1`.
pub fn mean_coefficient(n: usize) -> f64 {
    if n % 2 == 1 {
        2.0 * SQRT_2 / (n as f64 * PI)
    } else {
        0.0
    }
}

/// `int_0^1 u` for modes `u_1..u_N`.
pub fn spatial_mean(modes: &[f64]) -> f64 {
    modes.iter().enumerate().map(|(i, u)| u * mean_coefficient(i + 1)).sum()
}

/// `1/2 + arctan(m/2)/pi`.
pub fn xi_from_mean(mean: f64) -> f64 {
    let z = 0.5 + (mean / 2.0).atan() / PI;
    // the largest double below 1
    z.clamp(0.0, 1.0 - f64::EPSILON / 2.0)
}

/// Reaction coordinate of a spectral state.
pub fn xi_spde(modes: &[f64]) -> f64 {
    xi_from_mean(spatial_mean(modes))
}

/// `d xi / d mean`
pub fn xi_derivative(mean: f64) -> f64 {
    1.0 / (2.0 * PI * (1.0 + mean * mean / 4.0))
}

/// `Var(int u)` under the Gaussian reference measure truncated to `modes` modes.
pub fn gaussian_mean_variance(modes: usize) -> f64 {
    (1..=modes).map(|n| mean_coefficient(n).powi(2) / eigenvalue(n)).sum()
}

/// Sine transform between modes and the midpoint grid `x_j = (j + 1/2)/P`.
#[derive(Debug, Clone)]
pub struct SineBasis {
    modes: usize,
    grid: usize,
    /// `e_n(x_j)`, row-major in `n`.
    table: Vec<f64>,
}

impl SineBasis {
    pub fn new(modes: usize, grid: usize) -> Self {
        let mut table = Vec::with_capacity(modes * grid);
        for n in 1..=modes {
            for j in 0..grid {
                let x = (j as f64 + 0.5) / grid as f64;
                table.push(SQRT_2 * (n as f64 * PI * x).sin());
            }
        }
        Self { modes, grid, table }
    }

    pub fn to_grid(&self, modes: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (u, row) in modes.iter().zip(self.table.chunks(self.grid)) {
            for (o, e) in out.iter_mut().zip(row) {
                *o += u * e;
            }
        }
    }

    pub fn from_grid(&self, values: &[f64], out: &mut [f64]) {
        let p = self.grid as f64;
        for (o, row) in out.iter_mut().zip(self.table.chunks(self.grid)) {
            *o = row.iter().zip(values).map(|(e, v)| e * v).sum::<f64>() / p;
        }
    }

    pub fn modes(&self) -> usize {
        self.modes
    }
}

/// Quantities recorded along an SPDE trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SpdeObservable {
    Constant { value: f64 },
    Mode { n: usize },
    ModeSquared { n: usize },
    /// `int u`
    Mean,
    MeanSquared,
    /// `||u||^2`
    NormSquared,
    /// `cos(2 pi k xi(u))`
    CosXi { k: u32 },
}

impl SpdeObservable {
    pub fn name(&self) -> String {
        match self {
            Self::Constant { value } => format!("const({value})"),
            Self::Mode { n } => format!("u{n}"),
            Self::ModeSquared { n } => format!("u{n}^2"),
            Self::Mean => "mean".into(),
            Self::MeanSquared => "mean^2".into(),
            Self::NormSquared => "norm^2".into(),
            Self::CosXi { k } => format!("cos(2pi*{k}*xi)"),
        }
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        match *self {
            Self::Constant { value } => value,
            Self::Mode { n } => u[n - 1],
            Self::ModeSquared { n } => u[n - 1] * u[n - 1],
            Self::Mean => spatial_mean(u),
            Self::MeanSquared => spatial_mean(u).powi(2),
            Self::NormSquared => u.iter().map(|v| v * v).sum(),
            Self::CosXi { k } => (2.0 * PI * f64::from(k) * xi_spde(u)).cos(),
        }
    }

    fn check(&self, modes: usize) -> Result<()> {
        match *self {
            Self::Mode { n } | Self::ModeSquared { n } if n == 0 || n > modes => {
                Err(AbpError::invalid("observable", format!("mode {n} outside 1..={modes}")))
            }
            _ => Ok(()),
        }
    }
}

/// Semi-implicit Euler stepper with a pseudo-spectral nonlinearity.
#[derive(Debug, Clone)]
pub struct SpdeProcess {
    pub model: SpdeModel,
    pub observables: Vec<SpdeObservable>,
    dt: f64,
    basis: SineBasis,
    denom: Vec<f64>,
    coef: Vec<f64>,
    grid_buf: Vec<f64>,
    force: Vec<f64>,
}

impl SpdeProcess {
    pub fn new(model: SpdeModel, observables: Vec<SpdeObservable>, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(AbpError::invalid("dt", format!("must be positive, got {dt}")));
        }
        for o in &observables {
            o.check(model.modes)?;
        }
        let n = model.modes;
        Ok(Self {
            basis: SineBasis::new(n, model.grid),
            denom: (1..=n).map(|k| 1.0 / (1.0 + dt * eigenvalue(k))).collect(),
            coef: (1..=n).map(mean_coefficient).collect(),
            grid_buf: vec![0.0; model.grid],
            force: vec![0.0; n],
            model,
            observables,
            dt,
        })
    }

    /// `int (V(u(x)) - V(0)) dx` on the evaluation grid.
    pub fn energy(&self, u: &[f64]) -> f64 {
        let mut g = vec![0.0; self.model.grid];
        self.basis.to_grid(u, &mut g);
        let v0 = self.model.nonlinearity.value(0.0);
        g.iter().map(|x| self.model.nonlinearity.value(*x) - v0).sum::<f64>() / g.len() as f64
    }

    /// One step with bias gradient `da` at the current `xi`.
    pub fn step_with(&mut self, u: &mut [f64], da: f64, noise: &mut impl NoiseSource) -> Result<()> {
        if u.len() != self.model.modes {
            return Err(AbpError::Dimension { expected: self.model.modes, got: u.len() });
        }
        if matches!(self.model.nonlinearity, Nonlinearity::None) {
            self.force.iter_mut().for_each(|f| *f = 0.0);
        } else {
            self.basis.to_grid(u, &mut self.grid_buf);
            let nl = self.model.nonlinearity;
            self.grid_buf.iter_mut().for_each(|x| *x = -nl.deriv(*x));
            self.basis.from_grid(&self.grid_buf, &mut self.force);
        }
        let mean = spatial_mean(u);
        let push = da * xi_derivative(mean);
        let s = (2.0 * self.dt).sqrt();
        for k in 0..u.len() {
            let f = self.force[k] + push * self.coef[k];
            u[k] = (u[k] + self.dt * f + s * noise.normal()) * self.denom[k];
        }
        if let Some(i) = u.iter().position(|v| !v.is_finite()) {
            return Err(AbpError::Blowup { step: 0, time: 0.0, detail: format!("mode u{} = {}", i + 1, u[i]) });
        }
        Ok(())
    }
}

impl Process for SpdeProcess {
    type State = Vec<f64>;

    fn cv_dim(&self) -> usize {
        1
    }

    fn n_observables(&self) -> usize {
        self.observables.len()
    }

    fn observable_names(&self) -> Vec<String> {
        self.observables.iter().map(|o| o.name()).collect()
    }

    fn xi(&self, s: &Vec<f64>, z: &mut [f64]) {
        z[0] = xi_spde(s);
    }

    fn observe(&self, s: &Vec<f64>, out: &mut [f64]) {
        for (o, obs) in out.iter_mut().zip(&self.observables) {
            *o = obs.eval(s);
        }
    }

    fn step(&mut self, bias: &BiasGrid, s: &mut Vec<f64>, noise: &mut RngStream) -> Result<()> {
        let mut da = [0.0];
        bias.bias_gradient(&[xi_spde(s)], &mut da);
        self.step_with(s, da[0], noise)
    }

    fn flatten(&self, s: &Vec<f64>) -> Vec<f64> {
        s.clone()
    }

    fn initial(&self, s0: &Vec<f64>, mu0: InitialMeasure) -> Result<(Vec<f64>, CvMeasure)> {
        if s0.len() != self.model.modes {
            return Err(AbpError::Dimension { expected: self.model.modes, got: s0.len() });
        }
        match mu0 {
            InitialMeasure::Atom => {
                let mut phi = vec![0.0; self.observables.len()];
                self.observe(s0, &mut phi);
                Ok((phi, CvMeasure::Atoms(vec![(1.0, vec![xi_spde(s0)])])))
            }
            InitialMeasure::Uniform => Err(AbpError::Unsupported("uniform initial measure for the SPDE".into())),
        }
    }
}

/// One SPDE run; the normalization is always `L1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpdeRunConfig {
    pub model: SpdeModel,
    pub kernel: KernelSpec,
    pub grid_size: usize,
    pub observables: Vec<SpdeObservable>,
    pub u0: Vec<f64>,
    pub settings: RunSettings,
    pub reference_bias: Option<GridFunction>,
}

impl SpdeRunConfig {
    pub fn new(model: SpdeModel, observables: Vec<SpdeObservable>, settings: RunSettings) -> Self {
        let n = model.modes;
        Self {
            model,
            kernel: KernelSpec::default(),
            grid_size: 256,
            observables,
            u0: vec![0.0; n],
            settings,
            reference_bias: None,
        }
    }
}

fn prepare(cfg: &SpdeRunConfig) -> Result<(SpdeProcess, Vec<f64>, CvMeasure)> {
    let p = SpdeProcess::new(cfg.model.clone(), cfg.observables.clone(), cfg.settings.dt)?;
    let (phi, cv) = p.initial(&cfg.u0, InitialMeasure::Atom)?;
    Ok((p, phi, cv))
}

pub fn run_spde_abp(cfg: &SpdeRunConfig) -> Result<RunReport> {
    let (p, phi, cv) = prepare(cfg)?;
    let bias = BiasGrid::new(&cfg.kernel, &NormalizationSpec::l1(), &cv, cfg.grid_size, 1)?;
    AbpState::new(p, cfg.u0.clone(), bias, phi, true, &cfg.settings)?.run(&cfg.settings, cfg.reference_bias.as_ref())
}

pub fn run_spde_fixed_bias(cfg: &SpdeRunConfig, a: &GridFunction) -> Result<RunReport> {
    let (p, phi, _) = prepare(cfg)?;
    let bias = BiasGrid::fixed(a, &NormalizationSpec::l1())?;
    let reference = cfg.reference_bias.as_ref().filter(|r| r.grid_size() == a.grid_size());
    AbpState::new(p, cfg.u0.clone(), bias, phi, false, &cfg.settings)?.run(&cfg.settings, reference)
}

/// Independent copies on streams `stream, stream + 1, ...`.
pub fn run_spde_ensemble(cfg: &SpdeRunConfig, replicas: usize, fixed: Option<&GridFunction>) -> Vec<Result<RunReport>> {
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut c = cfg.clone();
            c.settings.stream += r;
            match fixed {
                Some(a) => run_spde_fixed_bias(&c, a),
                None => run_spde_abp(&c),
            }
        })
        .collect()
}

/// `A*`, the negative log-density of `xi` on `T` when `int u ~ N(0, var)`, at the nodes `k/r`.
pub fn gaussian_free_energy(var: f64, resolution: usize) -> Result<GridFunction> {
    GridFunction::from_fn(resolution, 1, |z| {
        let t = PI * (z[0] - 0.5);
        let m = 2.0 * t.tan();
        let dens = (-m * m / (2.0 * var)).exp() / (2.0 * PI * var).sqrt() * 2.0 * PI / t.cos().powi(2);
        -dens.max(f64::MIN_POSITIVE).ln()
    })
}

/// `A_inf(z) = -log E[K(z, xi)]` with `int u ~ N(0, var)`, by quadrature in the standardized mean.
pub fn gaussian_a_infinity(kernel: &KernelSpec, var: f64, resolution: usize) -> Result<GridFunction> {
    kernel.validate()?;
    let nodes = 4001;
    let span = 12.0;
    let h = 2.0 * span / (nodes - 1) as f64;
    let pts: Vec<(f64, f64)> = (0..nodes)
        .map(|i| {
            let s = -span + i as f64 * h;
            (xi_from_mean(s * var.sqrt()), h * (-s * s / 2.0).exp() / (2.0 * PI).sqrt())
        })
        .collect();
    let vals = (0..resolution)
        .map(|k| {
            let z = k as f64 / resolution as f64;
            -pts.iter().map(|(x, w)| w * kernel_eval(kernel, &[z], &[*x])).sum::<f64>().ln()
        })
        .collect();
    GridFunction::new(vals, resolution, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::ZeroNoise;

    #[test]
    fn xi_examples() {
        assert_eq!(xi_spde(&[0.0; 4]), 0.5);
        let mut u = vec![0.0; 4];
        u[0] = 1.0;
        assert!((spatial_mean(&u) - 0.900316).abs() < 1e-6);
        assert!((xi_spde(&u) - 0.634640).abs() < 1e-6);
        assert!((xi_spde(&u) - (0.5 + (0.450158f64).atan() / PI)).abs() < 1e-6);
        assert!(xi_from_mean(1e300) < 1.0);
        assert!(xi_from_mean(1e300) > 0.999);
        // <e_1, 1> by midpoint quadrature
        let q = (0..10000).map(|j| SQRT_2 * (PI * (j as f64 + 0.5) / 1e4).sin()).sum::<f64>() / 1e4;
        assert!((q - mean_coefficient(1)).abs() < 1e-8);
    }

    #[test]
    fn xi_derivative_matches_difference() {
        for m in [-3.0, -0.2, 0.0, 0.7, 5.0] {
            let h = 1e-6;
            let fd = (xi_from_mean(m + h) - xi_from_mean(m - h)) / (2.0 * h);
            assert!((fd - xi_derivative(m)).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_decay_is_exact() {
        let mut p = SpdeProcess::new(SpdeModel::gaussian(), vec![], 1e-3).unwrap();
        let mut u = vec![0.0; DEFAULT_MODES];
        u[0] = 1.0;
        u[3] = 2.0;
        p.step_with(&mut u, 0.0, &mut ZeroNoise).unwrap();
        assert_eq!(u[0], 1.0 / (1.0 + 1e-3 * PI * PI));
        assert_eq!(u[3], 2.0 / (1.0 + 1e-3 * eigenvalue(4)));
        assert!(u[1] == 0.0 && u[2] == 0.0);
    }

    #[test]
    fn parseval_round_trip() {
        let b = SineBasis::new(32, 128);
        let u: Vec<f64> = (0..32).map(|k| ((k * 7 + 3) % 11) as f64 - 5.0).collect();
        let mut g = vec![0.0; 128];
        let mut back = vec![0.0; 32];
        b.to_grid(&u, &mut g);
        b.from_grid(&g, &mut back);
        for (a, c) in u.iter().zip(&back) {
            assert!((a - c).abs() < 1e-10);
        }
        let l2 = g.iter().map(|x| x * x).sum::<f64>() / 128.0;
        assert!((l2 - u.iter().map(|x| x * x).sum::<f64>()).abs() < 1e-9);
    }

    #[test]
    fn model_gates() {
        assert!(SpdeModel::cosine(1.0).is_ok());
        let e = SpdeModel::cosine(10.0).unwrap_err().to_string();
        assert!(e.contains("pi^2"), "{e}");
        assert!(SpdeModel::cosine(PI * PI).is_err());
        assert!(SpdeModel::new(Nonlinearity::AllenCahn, 32, 128, false).is_err());
        let ac = SpdeModel::new(Nonlinearity::AllenCahn, 32, 128, true).unwrap();
        assert!(!ac.nonlinearity.satisfies_spectral_gap());
        assert!(SpdeModel::new(Nonlinearity::None, 32, 100, false).is_err());
    }

    #[test]
    fn pseudo_spectral_force() {
        // -V'(u) = c sin(u); for small u the projection is close to c u
        let mut p = SpdeProcess::new(SpdeModel::cosine(1.0).unwrap(), vec![], 1e-3).unwrap();
        let mut u = vec![0.0; DEFAULT_MODES];
        u[1] = 1e-4;
        let mut v = u.clone();
        p.step_with(&mut v, 0.0, &mut ZeroNoise).unwrap();
        let expect = (1e-4 + 1e-3 * 1e-4) / (1.0 + 1e-3 * eigenvalue(2));
        assert!((v[1] - expect).abs() < 1e-15);
    }

    #[test]
    fn mean_variance_series() {
        assert!((gaussian_mean_variance(2001) - 1.0 / 12.0).abs() < 1e-10);
        assert!((gaussian_mean_variance(DEFAULT_MODES) - 1.0 / 12.0).abs() < 1e-5);
    }

    #[test]
    fn gaussian_oracles_agree() {
        let var = 1.0 / 12.0;
        let astar = gaussian_free_energy(var, 512).unwrap();
        let e = astar.map(|a| (-a).exp()).unwrap();
        assert!((e.mean() - 1.0).abs() < 1e-8);
        let k = KernelSpec::default();
        let via_density = crate::oracle::kernel_smooth(&k, &e).unwrap().map(|f| -f.ln()).unwrap();
        let direct = gaussian_a_infinity(&k, var, 512).unwrap();
        assert!(via_density.max_abs_diff(&direct) < 1e-6, "{}", via_density.max_abs_diff(&direct));
    }

    #[test]
    fn constant_kernel_degeneracy() {
        let mut s = RunSettings::new(1e-3, 0.5, 3);
        s.checkpoints = vec![0.5];
        let mut cfg = SpdeRunConfig::new(SpdeModel::cosine(1.0).unwrap(), vec![SpdeObservable::Mean], s);
        cfg.kernel = KernelSpec::flat();
        let a = run_spde_abp(&cfg).unwrap();
        let b = run_spde_fixed_bias(&cfg, &GridFunction::constant(0.0, 256, 1).unwrap()).unwrap();
        assert_eq!(a.final_state, b.final_state);
        assert_eq!(a.mu_bar, b.mu_bar);
        assert!(a.bias_final.a.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn moments_stay_bounded() {
        let s = RunSettings::new(1e-3, 20.0, 5);
        let cfg = SpdeRunConfig::new(SpdeModel::cosine(1.0).unwrap(), vec![SpdeObservable::NormSquared], s);
        let r = run_spde_abp(&cfg).unwrap();
        // E||u||^2 = sum 1/(n^2 pi^2) ~ 1/6 under the reference measure
        assert!(r.rho_bar[0] < 1.0, "{}", r.rho_bar[0]);
        assert_eq!(r.bound_violations, 0);
    }
}
