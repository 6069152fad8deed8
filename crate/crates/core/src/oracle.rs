//! Deterministic quadrature references on tori of dimension one or two.
//!
//! All integrals are periodic rectangle rules, which converge spectrally for
//! the smooth presets.

use crate::error::{AbpError, Result};
use crate::geometry::displacement_scalar;
use crate::kernel::{kernel_eval, wrapped_gaussian, KernelFamily, KernelSpec};
use crate::model::{PotentialSpec, Space};
use crate::normalization::GridFunction;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

fn check_torus(v: &PotentialSpec) -> Result<usize> {
    let d = v.dim();
    if v.space() != Space::Torus || d > 2 {
        return Err(AbpError::Unsupported(format!("quadrature oracles need a torus of dimension <= 2 (got d={d})")));
    }
    Ok(d)
}

fn nodes(r: usize) -> impl Iterator<Item = f64> {
    (0..r).map(move |i| i as f64 / r as f64)
}

/// Values of `f` at the `r^d` nodes of `T^d`, first coordinate slowest.
fn tabulate(d: usize, r: usize, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    if d == 1 {
        nodes(r).map(|x| f(&[x])).collect()
    } else {
        let mut out = Vec::with_capacity(r * r);
        for x in nodes(r) {
            for y in nodes(r) {
                out.push(f(&[x, y]));
            }
        }
        out
    }
}

/// Unnormalized Boltzmann weights `exp(-(V - min V))` on the nodes.
fn boltzmann(v: &PotentialSpec, d: usize, r: usize) -> Vec<f64> {
    let pot = tabulate(d, r, |x| v.value(x));
    let lo = pot.iter().cloned().fold(f64::INFINITY, f64::min);
    pot.iter().map(|p| (-(p - lo)).exp()).collect()
}

/// `mu*(phi) = int phi e^{-V} / int e^{-V}`.
pub fn quadrature_mu_star(v: &PotentialSpec, phi: impl Fn(&[f64]) -> f64, resolution: usize) -> Result<f64> {
    let d = check_torus(v)?;
    let w = boltzmann(v, d, resolution);
    let f = tabulate(d, resolution, phi);
    Ok(w.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>())
}

/// `A*` on `T^m` with `int exp(-A*) = 1`, for the projection onto the first `m` coordinates.
pub fn free_energy_star(v: &PotentialSpec, m: usize, resolution: usize) -> Result<GridFunction> {
    let d = check_torus(v)?;
    if m == 0 || m > d {
        return Err(AbpError::invalid("reaction coordinate", format!("need 1 <= m <= {d}")));
    }
    let r = resolution;
    let w = boltzmann(v, d, r);
    let marginal: Vec<f64> = if m == d { w } else { w.chunks(r).map(|c| c.iter().sum::<f64>() / r as f64).collect() };
    let mean = marginal.iter().sum::<f64>() / marginal.len() as f64;
    GridFunction::new(marginal.iter().map(|p| -(p / mean).ln()).collect(), r, m)
}

/// `f -> int K(., zeta) f(zeta) dzeta` on the grid of `f` with the continuous kernel.
pub fn kernel_smooth(kernel: &KernelSpec, f: &GridFunction) -> Result<GridFunction> {
    kernel.validate()?;
    let r = f.grid_size();
    let m = f.cv_dim();
    let vals = f.values();
    let mean = f.mean();
    let out: Vec<f64> = match &kernel.family {
        KernelFamily::Flat => vec![mean; vals.len()],
        KernelFamily::WrappedGaussian => {
            let a = kernel.alpha;
            let conv: Vec<f64> = (0..r)
                .map(|k| wrapped_gaussian(displacement_scalar(k as f64 / r as f64, 0.0), kernel.epsilon, kernel.wraps) / r as f64)
                .collect();
            let w = |i: usize, j: usize| conv[(i + r - j) % r];
            if m == 1 {
                (0..r).map(|i| a * (0..r).map(|j| w(i, j) * vals[j]).sum::<f64>() + (1.0 - a) * mean).collect()
            } else {
                // separable: rows then columns
                let mut tmp = vec![0.0; r * r];
                for i in 0..r {
                    for l in 0..r {
                        tmp[i * r + l] = (0..r).map(|k| w(i, k) * vals[k * r + l]).sum();
                    }
                }
                let mut out = vec![0.0; r * r];
                for i in 0..r {
                    for j in 0..r {
                        let s: f64 = (0..r).map(|l| w(j, l) * tmp[i * r + l]).sum();
                        out[i * r + j] = a * s + (1.0 - a) * mean;
                    }
                }
                out
            }
        }
        KernelFamily::Mixture { .. } => {
            if m != 1 {
                return Err(AbpError::Unsupported("mixture kernels in two dimensions".into()));
            }
            (0..r)
                .map(|i| {
                    let z = i as f64 / r as f64;
                    (0..r).map(|j| kernel_eval(kernel, &[z], &[j as f64 / r as f64]) * vals[j]).sum::<f64>() / r as f64
                })
                .collect()
        }
    };
    GridFunction::new(out, r, m)
}

/// `A_inf = -log int K(., zeta) exp(-A*(zeta)) dzeta`.
pub fn a_infinity(v: &PotentialSpec, m: usize, kernel: &KernelSpec, resolution: usize) -> Result<GridFunction> {
    let e = free_energy_star(v, m, resolution)?.map(|a| (-a).exp())?;
    kernel_smooth(kernel, &e)?.map(|f| -f.ln())
}

/// Normalized periodic Gaussian `exp(-|z - zeta|^2 / (2 eps)) / C` applied to `f` (one dimension).
fn extended_smooth(eps: f64, f: &GridFunction) -> Result<GridFunction> {
    if f.cv_dim() != 1 {
        return Err(AbpError::Unsupported("extended oracle in two dimensions".into()));
    }
    let r = f.grid_size();
    let raw: Vec<f64> = nodes(r).map(|x| (-displacement_scalar(x, 0.0).powi(2) / (2.0 * eps)).exp()).collect();
    let c = raw.iter().sum::<f64>() / r as f64;
    let vals = f.values();
    let out = (0..r).map(|i| (0..r).map(|j| raw[(i + r - j) % r] * vals[j]).sum::<f64>() / (r as f64 * c)).collect();
    GridFunction::new(out, r, 1)
}

/// Free energy of the auxiliary variable of the extended dynamics,
/// `-log int K_eps(., zeta) exp(-A*(zeta))`.
pub fn free_energy_extended(v: &PotentialSpec, eps: f64, resolution: usize) -> Result<GridFunction> {
    let e = free_energy_star(v, 1, resolution)?.map(|a| (-a).exp())?;
    extended_smooth(eps, &e)?.map(|f| -f.ln())
}

/// `A_inf` of the extended dynamics: the regularization kernel applied to
/// the Gaussian-smoothed `exp(-A*)`.
pub fn a_infinity_extended(v: &PotentialSpec, kernel: &KernelSpec, eps: f64, resolution: usize) -> Result<GridFunction> {
    let e = free_energy_extended(v, eps, resolution)?.map(|a| (-a).exp())?;
    kernel_smooth(kernel, &e)?.map(|f| -f.ln())
}

/// `mu*^A(phi) = int phi e^{-V + A(xi)} / Z^A`, with `A` interpolated from its grid.
pub fn mu_star_a(v: &PotentialSpec, a: &GridFunction, phi: impl Fn(&[f64]) -> f64, resolution: usize) -> Result<f64> {
    let d = check_torus(v)?;
    let m = a.cv_dim();
    if m > d {
        return Err(AbpError::Dimension { expected: d, got: m });
    }
    let logw = tabulate(d, resolution, |x| -v.value(x) + a.interp(&x[..m]));
    let hi = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - hi).exp()).collect();
    let f = tabulate(d, resolution, phi);
    Ok(w.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>())
}

fn fft(data: &[f64], inverse: bool) -> Vec<Complex<f64>> {
    let n = data.len();
    let mut planner = FftPlanner::new();
    let plan = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    let mut buf: Vec<Complex<f64>> = data.iter().map(|&x| Complex::new(x, 0.0)).collect();
    plan.process(&mut buf);
    buf
}

fn spectral_apply(f: &[f64], mult: impl Fn(f64) -> Complex<f64>) -> Vec<f64> {
    let n = f.len();
    let mut spec = fft(f, false);
    for (k, c) in spec.iter_mut().enumerate() {
        let freq = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        *c *= if n % 2 == 0 && k == n / 2 { Complex::new(0.0, 0.0) } else { mult(freq) };
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(n).process(&mut spec);
    spec.iter().map(|c| c.re / n as f64).collect()
}

/// Spectral derivative of periodic samples on `[0,1)`.
pub fn spectral_derivative(f: &[f64]) -> Vec<f64> {
    spectral_apply(f, |k| Complex::new(0.0, 2.0 * PI * k))
}

/// Zero-mean spectral antiderivative; the mean of `f` is discarded.
pub fn spectral_antiderivative(f: &[f64]) -> Vec<f64> {
    spectral_apply(f, |k| if k == 0.0 { Complex::new(0.0, 0.0) } else { Complex::new(0.0, -1.0 / (2.0 * PI * k)) })
}

/// Solution of `L^A Psi = e^{-A}(phi - mu*(phi))` on `T^1` with `xi = id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonSolution {
    pub psi: GridFunction,
    pub dpsi: Vec<f64>,
    pub mu_star_phi: f64,
    /// Sup-norm of `L^A Psi - rhs` with an independent spectral evaluation of `L^A`.
    pub defect: f64,
    /// `mu*^A(e^{-A})`
    pub mu_star_a_of_exp_minus_a: f64,
    /// `mu*^A(|Psi'|^2)`
    pub mu_star_a_of_grad_sq: f64,
    /// `mu*(|Psi'|^2)`
    pub mu_star_of_grad_sq: f64,
}

/// Solves the Poisson equation of the biased generator `L^A = Delta - (V - A)' d/dx`
/// by the integrating factor `(e^{-(V-A)} Psi')' = e^{-(V-A)} rhs`.
pub fn poisson_1d(v: &PotentialSpec, a: &GridFunction, phi: impl Fn(&[f64]) -> f64, resolution: usize) -> Result<PoissonSolution> {
    let d = check_torus(v)?;
    if d != 1 || a.cv_dim() != 1 {
        return Err(AbpError::Unsupported("the Poisson oracle is one-dimensional".into()));
    }
    if a.grid_size() != resolution {
        return Err(AbpError::invalid("poisson", "the bias must be tabulated at the quadrature resolution"));
    }
    let r = resolution;
    let pot: Vec<f64> = nodes(r).map(|x| v.value(&[x])).collect();
    let av = a.values();
    let phis: Vec<f64> = nodes(r).map(|x| phi(&[x])).collect();
    let mu_star_phi = quadrature_mu_star(v, &phi, r)?;
    let va: Vec<f64> = pot.iter().zip(av).map(|(p, a)| p - a).collect();
    let shift = va.iter().cloned().fold(f64::INFINITY, f64::min);
    // scaled factors e^{-(V_A - shift)}, e^{V_A - shift}
    let e_minus: Vec<f64> = va.iter().map(|x| (-(x - shift)).exp()).collect();
    let e_plus: Vec<f64> = va.iter().map(|x| (x - shift).exp()).collect();
    let rhs: Vec<f64> = av.iter().zip(&phis).map(|(a, p)| (-a).exp() * (p - mu_star_phi)).collect();
    let g: Vec<f64> = e_minus.iter().zip(&rhs).map(|(e, r)| e * r).collect();
    let g_mean = g.iter().sum::<f64>() / r as f64;
    let g_scale = g.iter().map(|x| x.abs()).sum::<f64>() / r as f64;
    if g_mean.abs() > 1e-10 * g_scale.max(1e-300) {
        return Err(AbpError::Consistency(format!("right-hand side not centred under mu*^A (mean {g_mean:e})")));
    }
    let big_g = spectral_antiderivative(&g);
    let c = -e_plus.iter().zip(&big_g).map(|(e, g)| e * g).sum::<f64>() / e_plus.iter().sum::<f64>();
    let dpsi: Vec<f64> = e_plus.iter().zip(&big_g).map(|(e, g)| e * (g + c)).collect();
    let mut psi = spectral_antiderivative(&dpsi);
    // mu*^A weights are e^{-V_A}
    let za: f64 = e_minus.iter().sum();
    let shift_psi = psi.iter().zip(&e_minus).map(|(p, w)| p * w).sum::<f64>() / za;
    psi.iter_mut().for_each(|p| *p -= shift_psi);

    // defect: L^A Psi = Psi'' - V_A' Psi' from Psi alone
    let d1 = spectral_derivative(&psi);
    let d2 = spectral_derivative(&d1);
    let mut dv = vec![0.0];
    let dva: Vec<f64> = {
        let da = spectral_derivative(av);
        nodes(r)
            .zip(&da)
            .map(|(x, dai)| {
                v.grad(&[x], &mut dv);
                dv[0] - dai
            })
            .collect()
    };
    let defect = (0..r).map(|i| (d2[i] - dva[i] * d1[i] - rhs[i]).abs()).fold(0.0, f64::max);

    let mean_a = |f: &dyn Fn(usize) -> f64| (0..r).map(|i| f(i) * e_minus[i]).sum::<f64>() / za;
    let mu_a_exp = mean_a(&|i| (-av[i]).exp());
    let mu_a_grad = mean_a(&|i| dpsi[i] * dpsi[i]);
    let w_star = boltzmann(v, 1, r);
    let z_star: f64 = w_star.iter().sum();
    let mu_grad = (0..r).map(|i| dpsi[i] * dpsi[i] * w_star[i]).sum::<f64>() / z_star;
    Ok(PoissonSolution {
        psi: GridFunction::new(psi, r, 1)?,
        dpsi,
        mu_star_phi,
        defect,
        mu_star_a_of_exp_minus_a: mu_a_exp,
        mu_star_a_of_grad_sq: mu_a_grad,
        mu_star_of_grad_sq: mu_grad,
    })
}

/// Asymptotic variance of the reweighted estimator with a fixed bias `A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticVariance {
    /// `2 mu*^A(|Psi'|^2) / mu*^A(e^{-A})^2`; invariant under `A -> A + c`.
    pub value: f64,
    /// `2 mu*(|Psi'|^2)`; agrees with `value` when `A = 0` only.
    pub unweighted_form: f64,
}

pub fn asymptotic_variance(
    v: &PotentialSpec,
    a: &GridFunction,
    phi: impl Fn(&[f64]) -> f64,
    resolution: usize,
) -> Result<AsymptoticVariance> {
    let sol = poisson_1d(v, a, phi, resolution)?;
    Ok(AsymptoticVariance {
        value: 2.0 * sol.mu_star_a_of_grad_sq / sol.mu_star_a_of_exp_minus_a.powi(2),
        unweighted_form: 2.0 * sol.mu_star_of_grad_sq,
    })
}

/// Modified Bessel function of the first kind `I_n(x)` by its power series.
pub fn modified_bessel_i(n: u32, x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = half.powi(n as i32) / (1..=n).map(f64::from).product::<f64>();
    let mut sum = term;
    for k in 1..200u32 {
        term *= half * half / (f64::from(k) * f64::from(k + n));
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Reference tables for a torus preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTables {
    pub resolution: usize,
    pub mu_star_phi: Vec<f64>,
    pub a_star: GridFunction,
    pub a_inf: GridFunction,
    /// `mu*^{A_inf}(phi)`
    pub mu_star_a_inf_phi: Vec<f64>,
    /// `Z^{A_inf} / Z`
    pub z_ratio: f64,
    /// Present for one-dimensional presets.
    pub poisson: Vec<Option<PoissonSolution>>,
    pub v_inf: Vec<Option<AsymptoticVariance>>,
}

impl OracleTables {
    pub fn compute(
        v: &PotentialSpec,
        m: usize,
        kernel: &KernelSpec,
        observables: &[&dyn Fn(&[f64]) -> f64],
        resolution: usize,
    ) -> Result<Self> {
        let d = check_torus(v)?;
        let a_star = free_energy_star(v, m, resolution)?;
        let a_inf = a_infinity(v, m, kernel, resolution)?;
        let mut mu_star_phi = vec![];
        let mut mu_a = vec![];
        let mut poisson = vec![];
        let mut v_inf = vec![];
        for phi in observables {
            mu_star_phi.push(quadrature_mu_star(v, phi, resolution)?);
            mu_a.push(mu_star_a(v, &a_inf, phi, resolution)?);
            if d == 1 {
                poisson.push(Some(poisson_1d(v, &a_inf, phi, resolution)?));
                v_inf.push(Some(asymptotic_variance(v, &a_inf, phi, resolution)?));
            } else {
                poisson.push(None);
                v_inf.push(None);
            }
        }
        let z_ratio = 1.0 / mu_star_a(v, &a_inf, |x| (-a_inf.interp(&x[..m])).exp(), resolution)?;
        Ok(Self { resolution, mu_star_phi, a_star, a_inf, mu_star_a_inf_phi: mu_a, z_ratio, poisson, v_inf })
    }
}
