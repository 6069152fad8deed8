//! Acceptance suite: ten numbered checks against quadrature oracles, closed
//! forms and exact invariants. Each prints one PASS/FAIL line.

use crate::commands::plateau_interval;
use abp_core::engine::{
    mean_var, replica_variance, run_abp, run_ensemble, run_fixed_bias, Observable, RunConfig, RunReport, RunSettings,
};
use abp_core::kernel::{KernelFamily, KernelSpec};
use abp_core::model::{DynamicsSpec, Family, PotentialSpec, ReactionCoordinate, State};
use abp_core::normalization::{GridFunction, NormalizationKind, NormalizationSpec};
use abp_core::oracle;
use abp_core::spde::{self, run_spde_ensemble, SpdeModel, SpdeObservable, SpdeRunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::PI;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

pub const SEED: u64 = 20_250_611;
pub const ALL: [u32; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub title: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        let status = if self.pass { "PASS" } else { "FAIL" };
        format!("criterion {:>2} {status} {} ({:.1}s): {}", self.id, self.title, self.seconds, self.detail)
    }
}

type Check = std::result::Result<(bool, String), String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[derive(Default)]
struct Tally {
    runs: u64,
    checks: u64,
    violations: u64,
    gradient_failures: u64,
}

static TALLY: Mutex<Tally> = Mutex::new(Tally { runs: 0, checks: 0, violations: 0, gradient_failures: 0 });

fn tally(r: &RunReport) {
    let mut t = TALLY.lock().unwrap_or_else(|e| e.into_inner());
    t.runs += 1;
    t.checks += r.bound_checks;
    t.violations += r.bound_violations;
    t.gradient_failures += u64::from(!r.gradient_bound_holds);
}

/// Unwraps an ensemble, recording bound checks of every replica.
fn survivors(results: Vec<abp_core::Result<RunReport>>) -> std::result::Result<Vec<RunReport>, String> {
    results
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let r = r.map_err(|e| format!("replica {i}: {e}"))?;
            tally(&r);
            Ok(r)
        })
        .collect()
}

fn single(r: abp_core::Result<RunReport>) -> std::result::Result<RunReport, String> {
    survivors(vec![r]).map(|mut v| v.remove(0))
}

fn brownian(preset: &str, m: usize) -> std::result::Result<DynamicsSpec, String> {
    let v = PotentialSpec::preset(preset, 1.0).map_err(err)?;
    DynamicsSpec::new(Family::Brownian, v, ReactionCoordinate::projection(m)).map_err(err)
}

fn cos0() -> Observable {
    Observable::Cos { coord: 0, k: 1 }
}

fn config(dynamics: DynamicsSpec, x0: State, t_final: f64, checkpoints: Vec<f64>, seed: u64) -> RunConfig {
    let mut s = RunSettings::new(1e-3, t_final, seed);
    s.checkpoints = checkpoints;
    s.histogram_bins = 50;
    RunConfig::new(dynamics, x0, vec![cos0()], s)
}

fn at(x: &[f64]) -> State {
    State { x: x.to_vec(), aux: vec![] }
}

fn cos1(x: &[f64]) -> f64 {
    (2.0 * PI * x[0]).cos()
}

fn c1() -> Check {
    let start = Instant::now();
    let v = PotentialSpec::preset("bessel1d", 1.0).map_err(err)?;
    let r = 256;
    let a = oracle::free_energy_star(&v, 1, r).map_err(err)?;
    let log_i0 = oracle::modified_bessel_i(0, 1.0).ln();
    let sup = (0..r).map(|i| (a.values()[i] - (cos1(&[i as f64 / r as f64]) + log_i0)).abs()).fold(0.0, f64::max);
    let total = a.map(|x| (-x).exp()).map_err(err)?.mean();
    // mu*(cos 2 pi k x) = (-1)^k I_k(1) / I_0(1) for V = cos(2 pi x)
    let i0 = oracle::modified_bessel_i(0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let a_k: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b_k: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let phi = |x: &[f64]| {
            (0..6).map(|k| a_k[k] * (2.0 * PI * k as f64 * x[0]).cos() + b_k[k] * (2.0 * PI * k as f64 * x[0]).sin()).sum::<f64>()
        };
        let exact: f64 =
            (0..6).map(|k| a_k[k] * (-1f64).powi(k as i32) * oracle::modified_bessel_i(k as u32, 1.0) / i0).sum();
        worst = worst.max((oracle::quadrature_mu_star(&v, phi, r).map_err(err)? - exact).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = sup <= 1e-6 && (total - 1.0).abs() <= 1e-10 && worst <= 1e-9 && secs < 1.0;
    Ok((pass, format!("sup|A*-ref| = {sup:.2e}, |int e^-A* - 1| = {:.2e}, worst identity error = {worst:.2e}, {secs:.3}s", (total - 1.0).abs())))
}

/// Shared 16-replica run on the coupled two-dimensional preset.
struct TorusEnsemble {
    reports: Vec<RunReport>,
    mu_star: f64,
    mu_star_a_inf: f64,
}

static ENSEMBLE: OnceLock<std::result::Result<TorusEnsemble, String>> = OnceLock::new();

fn torus_ensemble() -> std::result::Result<&'static TorusEnsemble, String> {
    ENSEMBLE
        .get_or_init(|| {
            let dynamics = brownian("t2-coupled", 1)?;
            let v = dynamics.potential.clone();
            let mut cfg = config(dynamics, at(&[0.5, 0.5]), 2000.0, vec![200.0, 500.0, 2000.0], SEED + 2);
            cfg.grid_size = 256;
            let a_inf = oracle::a_infinity(&v, 1, &cfg.kernel, 256).map_err(err)?;
            cfg.reference_bias = Some(a_inf.clone());
            let reports = survivors(run_ensemble(&cfg, 16, None))?;
            Ok(TorusEnsemble {
                reports,
                mu_star: oracle::quadrature_mu_star(&v, cos1, 256).map_err(err)?,
                mu_star_a_inf: oracle::mu_star_a(&v, &a_inf, cos1, 256).map_err(err)?,
            })
        })
        .as_ref()
        .map_err(Clone::clone)
}

fn row_at(r: &RunReport, t: f64) -> std::result::Result<&abp_core::engine::CheckpointRow, String> {
    r.series.iter().find(|c| (c.t - t).abs() < 1e-9).ok_or_else(|| format!("no checkpoint at t = {t}"))
}

fn c2() -> Check {
    let e = torus_ensemble()?;
    let vals: Vec<f64> = e.reports.iter().map(|r| r.mu_bar[0]).collect();
    let (mean, var) = mean_var(&vals);
    let stderr = (var / vals.len() as f64).sqrt();
    let rmse = (vals.iter().map(|v| (v - e.mu_star).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
    let bias = (mean - e.mu_star).abs();
    Ok((
        bias <= 3.0 * stderr && rmse <= 0.05,
        format!("mu* = {:.5}, replica mean = {mean:.5}, |bias| = {bias:.5} vs 3*stderr = {:.5}, RMSE = {rmse:.4}", e.mu_star, 3.0 * stderr),
    ))
}

fn mse(e: &TorusEnsemble, t: f64) -> std::result::Result<f64, String> {
    let mut s = 0.0;
    for r in &e.reports {
        s += (row_at(r, t)?.mu_bar[0] - e.mu_star).powi(2);
    }
    Ok(s / e.reports.len() as f64)
}

fn c3() -> Check {
    let e = torus_ensemble()?;
    let (m500, m2000) = (mse(e, 500.0)?, mse(e, 2000.0)?);
    let ratio = m500 / m2000;
    Ok((ratio >= 2.0, format!("MSE(500) = {m500:.3e}, MSE(2000) = {m2000:.3e}, ratio = {ratio:.2}")))
}

fn c4() -> Check {
    let e = torus_ensemble()?;
    let mut worst = 0.0f64;
    let mut improved = 0;
    for r in &e.reports {
        let late = row_at(r, 2000.0)?.a_error.ok_or("missing reference error")?;
        let early = row_at(r, 200.0)?.a_error.ok_or("missing reference error")?;
        worst = worst.max(late);
        improved += usize::from(late < early);
    }
    Ok((
        worst <= 0.1 && improved >= 14,
        format!("max sup|A_T - A_inf| at T=2000 = {worst:.4}, improved over T=200 in {improved}/16 replicas"),
    ))
}

fn c5() -> Check {
    let e = torus_ensemble()?;
    let rho: Vec<f64> = e.reports.iter().map(|r| r.rho_bar[0]).collect();
    let (mean, _) = mean_var(&rho);
    let dev = (mean - e.mu_star_a_inf).abs();
    let dynamics = brownian("double-well-1d", 1)?;
    let mut cfg = config(dynamics, at(&[0.5]), 2000.0, vec![], SEED + 5);
    cfg.kernel = KernelSpec::gaussian(0.05, 0.99).map_err(err)?;
    let adaptive = single(run_abp(&cfg))?;
    let zero = GridFunction::constant(0.0, cfg.grid_size, 1).map_err(err)?;
    let unbiased = single(run_fixed_bias(&cfg, &zero))?;
    let (ra, ru) = (adaptive.accumulators.histogram.max_min_ratio(), unbiased.accumulators.histogram.max_min_ratio());
    Ok((
        dev <= 0.05 && ra <= 3.0 && ru >= 10.0,
        format!(
            "mean rho_bar = {mean:.4} vs mu*^A_inf = {:.4} (|diff| {dev:.4}); histogram max/min: adaptive {ra:.2}, unbiased {ru:.1}",
            e.mu_star_a_inf
        ),
    ))
}

fn c6() -> Check {
    let checkpoints: Vec<f64> = (1..=20).map(|i| 25.0 * i as f64).collect();
    let from = 250.0;
    let dynamics = brownian("double-well-1d", 1)?;
    let v = dynamics.potential.clone();
    let cfg = config(dynamics, at(&[0.5]), 500.0, checkpoints.clone(), SEED + 6);
    let a_inf = oracle::a_infinity(&v, 1, &cfg.kernel, cfg.grid_size).map_err(err)?;
    let v_inf = oracle::asymptotic_variance(&v, &a_inf, cos1, 256).map_err(err)?.value;
    let target = oracle::quadrature_mu_star(&v, cos1, 256).map_err(err)?;
    let adaptive = replica_variance(&cfg, 64, &checkpoints, None, 0, Some(target)).map_err(err)?;
    let mut fixed_cfg = cfg.clone();
    fixed_cfg.settings.stream += 64;
    let fixed = replica_variance(&fixed_cfg, 64, &checkpoints, Some(&a_inf), 0, Some(target)).map_err(err)?;
    let (pa, la, ha) = plateau_interval(&adaptive, from);
    let (pf, lf, hf) = plateau_interval(&fixed, from);
    let rel = (pa - v_inf).abs() / v_inf;
    let overlap = la <= hf && lf <= ha;

    let flat = brownian("flat", 1)?;
    let anchor_cfg = config(flat, at(&[0.5]), 500.0, checkpoints.clone(), SEED + 60);
    let zero = GridFunction::constant(0.0, anchor_cfg.grid_size, 1).map_err(err)?;
    let anchor = replica_variance(&anchor_cfg, 64, &checkpoints, Some(&zero), 0, Some(0.0)).map_err(err)?;
    let pz = anchor.plateau(from);
    let closed = 1.0 / (4.0 * PI * PI);
    let rel_z = (pz - closed).abs() / closed;
    let failures = adaptive.failures.len() + fixed.failures.len() + anchor.failures.len();
    Ok((
        rel <= 0.25 && overlap && rel_z <= 0.25 && failures == 0,
        format!(
            "adaptive plateau {pa:.5} [{la:.5}, {ha:.5}] vs V_inf {v_inf:.5} ({:.1}%); fixed A_inf plateau {pf:.5} [{lf:.5}, {hf:.5}], overlap {overlap}; V=0 anchor {pz:.5} vs {closed:.5} ({:.1}%)",
            100.0 * rel,
            100.0 * rel_z
        ),
    ))
}

fn lipschitz_constant(spec: &NormalizationSpec, g: usize) -> f64 {
    match (&spec.kind, spec.smoothing) {
        (NormalizationKind::Min, Some(k)) => (g as f64).powf(1.0 / k as f64),
        _ => 1.0,
    }
}

fn normalization_kinds() -> std::result::Result<Vec<NormalizationSpec>, String> {
    [
        (NormalizationKind::L1, None),
        (NormalizationKind::Lq { q: 2.0 }, None),
        (NormalizationKind::Lq { q: 3.5 }, None),
        (NormalizationKind::PointEval { z0: vec![0.3] }, None),
        (NormalizationKind::Min, None),
        (NormalizationKind::Max, None),
        (NormalizationKind::Min, Some(4)),
        (NormalizationKind::Max, Some(4)),
    ]
    .into_iter()
    .map(|(k, s)| NormalizationSpec::new(k, s).map_err(err))
    .collect()
}

/// Homogeneity, sandwich and Lipschitz checks; returns the failure count.
fn axiom_failures(pairs: usize) -> std::result::Result<usize, String> {
    let g = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 7);
    let mut failures = 0;
    let random = |rng: &mut ChaCha8Rng| GridFunction::new((0..g).map(|_| rng.random_range(0.1..5.0)).collect(), g, 1);
    for spec in normalization_kinds()? {
        let c_n = lipschitz_constant(&spec, g);
        for i in 0..pairs {
            let f1 = random(&mut rng).map_err(err)?;
            let f2 = if i % 2 == 0 {
                random(&mut rng).map_err(err)?
            } else {
                let d: f64 = rng.random_range(1e-6..1e-2);
                let v: Vec<f64> = f1.values().iter().map(|v| (v + d * rng.random_range(-1.0..1.0)).max(1e-3)).collect();
                GridFunction::new(v, g, 1).map_err(err)?
            };
            let (n1, n2) = (spec.n_value(&f1).map_err(err)?, spec.n_value(&f2).map_err(err)?);
            let a: f64 = rng.random_range(0.01..10.0);
            let scaled = spec.n_value(&f1.map(|v| a * v).map_err(err)?).map_err(err)?;
            let lo = f1.values().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = f1.values().iter().cloned().fold(0.0, f64::max);
            let ok = (scaled - a * n1).abs() <= 1e-12 * a * n1
                && lo - 1e-12 <= n1
                && n1 <= hi + 1e-12
                && (n1 - n2).abs() <= c_n * f1.max_abs_diff(&f2) + 1e-12;
            failures += usize::from(!ok);
        }
    }
    Ok(failures)
}

/// Short runs over every normalization, a two-dimensional bias and the
/// mixture kernel; they feed the bound tally.
fn bound_battery() -> std::result::Result<usize, String> {
    let mut runs = 0;
    let base = config(brownian("double-well-1d", 1)?, at(&[0.5]), 50.0, vec![], SEED + 70);
    for norm in normalization_kinds()? {
        let mut c = base.clone();
        c.norm = norm;
        single(run_abp(&c))?;
        runs += 1;
    }
    let mut two = config(brownian("t2-coupled", 2)?, at(&[0.5, 0.5]), 50.0, vec![], SEED + 71);
    two.grid_size = 64;
    single(run_abp(&two))?;
    let mut mix = base.clone();
    mix.kernel = KernelSpec::new(KernelFamily::Mixture { epsilons: vec![0.03, 0.08] }, 0.05, 0.9, 5).map_err(err)?;
    single(run_abp(&mix))?;
    let mut lq = two.clone();
    lq.norm = NormalizationSpec::new(NormalizationKind::Max, Some(3)).map_err(err)?;
    single(run_abp(&lq))?;
    Ok(runs + 3)
}

fn c7() -> Check {
    let battery = bound_battery()?;
    let axioms = axiom_failures(1000)?;

    let mut cfg = config(brownian("double-well-1d", 1)?, at(&[0.3]), 20.0, vec![10.0, 20.0], SEED + 72);
    cfg.kernel = KernelSpec::flat();
    let adaptive = single(run_abp(&cfg))?;
    let zero = GridFunction::constant(0.0, cfg.grid_size, 1).map_err(err)?;
    let unbiased = single(run_fixed_bias(&cfg, &zero))?;
    let degenerate = adaptive.final_state == unbiased.final_state
        && adaptive.mu_bar == unbiased.mu_bar
        && adaptive.rho_bar == unbiased.rho_bar
        && adaptive.series.iter().zip(&unbiased.series).all(|(a, b)| a.mu_bar == b.mu_bar)
        && adaptive.bias_final.a.iter().all(|&a| a == 0.0);

    let det = config(brownian("double-well-1d", 1)?, at(&[0.5]), 20.0, vec![10.0, 20.0], SEED + 73);
    let (r1, r2) = (single(run_abp(&det))?, single(run_abp(&det))?);
    let spde_cfg = SpdeRunConfig::new(SpdeModel::cosine(1.0).map_err(err)?, vec![SpdeObservable::Mean], RunSettings::new(1e-3, 5.0, SEED + 74));
    let s1 = single(spde::run_spde_abp(&spde_cfg))?;
    let s2 = single(spde::run_spde_abp(&spde_cfg))?;
    let deterministic = r1.same_outcome(&r2) && s1.same_outcome(&s2);

    let t = TALLY.lock().unwrap_or_else(|e| e.into_inner());
    let pass = t.violations == 0 && t.checks > 0 && t.gradient_failures == 0 && axioms == 0 && degenerate && deterministic;
    Ok((
        pass,
        format!(
            "{} bound violations in {} checks over {} runs ({battery} battery runs), gradient-bound failures {}; axiom failures {axioms}/8000; flat-kernel degeneracy {degenerate}; seed determinism {deterministic}",
            t.violations, t.checks, t.runs, t.gradient_failures
        ),
    ))
}

fn c8() -> Check {
    let v = PotentialSpec::preset("double-well-1d", 1.0).map_err(err)?;
    let lang = DynamicsSpec::new(Family::Langevin { gamma: 1.0 }, v.clone(), ReactionCoordinate::projection(1)).map_err(err)?;
    let mut lc = config(lang, State { x: vec![0.5], aux: vec![0.0] }, 2000.0, vec![], SEED + 8);
    lc.observables.push(Observable::MomentumSquared { coord: 0 });
    let bc = config(brownian("double-well-1d", 1)?, at(&[0.5]), 2000.0, vec![], SEED + 80);
    let l = survivors(run_ensemble(&lc, 16, None))?;
    let b = survivors(run_ensemble(&bc, 16, None))?;
    let stats = |rs: &[RunReport], j: usize| {
        let v: Vec<f64> = rs.iter().map(|r| r.mu_bar[j]).collect();
        let (m, var) = mean_var(&v);
        (m, (var / v.len() as f64).sqrt())
    };
    let ((ml, sl), (mb, sb), (p2, _)) = (stats(&l, 0), stats(&b, 0), stats(&l, 1));
    let gap = (ml - mb).abs();
    let tol = 3.0 * (sl * sl + sb * sb).sqrt();
    let p_dev = (p2 - 1.0).abs();
    Ok((
        gap <= tol && p_dev <= 0.05,
        format!("Langevin {ml:.4} +- {sl:.4}, Brownian {mb:.4} +- {sb:.4}, |diff| {gap:.4} vs {tol:.4}; E[p^2] = {p2:.4}"),
    ))
}

fn c9() -> Check {
    let v = PotentialSpec::preset("double-well-1d", 1.0).map_err(err)?;
    let kernel = KernelSpec::default();
    let a_star = oracle::free_energy_star(&v, 1, 256).map_err(err)?;
    let mut sups = vec![];
    for eps in [0.5, 0.1, 0.02] {
        sups.push(oracle::a_infinity_extended(&v, &kernel, eps, 256).map_err(err)?.max_abs_diff(&a_star));
    }
    let monotone = sups.windows(2).all(|w| w[1] < w[0]);
    let mu_star = oracle::quadrature_mu_star(&v, cos1, 256).map_err(err)?;
    let ext = DynamicsSpec::new(Family::Extended { epsilon: 0.1 }, v, ReactionCoordinate::projection(1)).map_err(err)?;
    let cfg = config(ext, State { x: vec![0.5], aux: vec![0.5] }, 500.0, vec![], SEED + 9);
    let reps = survivors(run_ensemble(&cfg, 4, None))?;
    let worst = reps.iter().map(|r| (r.mu_bar[0] - mu_star).abs()).fold(0.0, f64::max);
    Ok((
        monotone && worst <= 0.05,
        format!("sup|A_inf(eps) - A*| for eps = 0.5, 0.1, 0.02: {sups:.4?}; extended runs: max |mu_bar - mu*| = {worst:.4} (mu* = {mu_star:.4})"),
    ))
}

fn c10() -> Check {
    let mut obs: Vec<SpdeObservable> = (1..=4).map(|n| SpdeObservable::ModeSquared { n }).collect();
    obs.push(SpdeObservable::MeanSquared);
    let model = SpdeModel::gaussian();
    let mut cfg = SpdeRunConfig::new(model.clone(), obs, RunSettings::new(1e-3, 500.0, SEED + 10));
    let zero = GridFunction::constant(0.0, cfg.grid_size, 1).map_err(err)?;
    let fixed = survivors(run_spde_ensemble(&cfg, 4, Some(&zero)))?;
    let expected: Vec<f64> = (1..=4).map(|n| 1.0 / (n as f64 * PI).powi(2)).chain([1.0 / 12.0]).collect();
    let rel: Vec<f64> = (0..5)
        .map(|j| {
            let m = fixed.iter().map(|r| r.mu_bar[j]).sum::<f64>() / fixed.len() as f64;
            (m - expected[j]) / expected[j]
        })
        .collect();
    let moments_ok = rel.iter().all(|r| r.abs() <= 0.10);

    let cos_cfg = SpdeRunConfig::new(SpdeModel::cosine(1.0).map_err(err)?, vec![SpdeObservable::Mean], RunSettings::new(1e-3, 500.0, SEED + 100));
    let cosine = single(spde::run_spde_abp(&cos_cfg))?;

    cfg.observables = vec![SpdeObservable::Mean];
    cfg.settings.seed = SEED + 101;
    cfg.settings.checkpoints = vec![250.0, 500.0];
    cfg.reference_bias = Some(spde::gaussian_a_infinity(&cfg.kernel, spde::gaussian_mean_variance(model.modes), cfg.grid_size).map_err(err)?);
    let adaptive = survivors(run_spde_ensemble(&cfg, 4, None))?;
    let a_err = adaptive.iter().map(|r| r.series.last().and_then(|s| s.a_error).unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
    let bounds_ok = cosine.bound_violations == 0 && cosine.bound_checks > 0 && cosine.gradient_bound_holds;
    Ok((
        moments_ok && bounds_ok && a_err <= 0.15,
        format!(
            "relative errors of Var(u_1..u_4), Var(mean): {:.3?}; cosine c=1: {} violations in {} checks; Gaussian max sup|A_T - A_inf| = {a_err:.4}",
            rel, cosine.bound_violations, cosine.bound_checks
        ),
    ))
}

fn title(id: u32) -> &'static str {
    match id {
        1 => "oracle self-consistency",
        2 => "consistency of the weighted estimator",
        3 => "mean-square rate",
        4 => "free-energy convergence",
        5 => "occupation measure and flat histogram",
        6 => "asymptotic variance",
        7 => "hard invariants",
        8 => "Langevin and Brownian agreement",
        9 => "extended-dynamics limit",
        10 => "SPDE suite",
        _ => "unknown criterion",
    }
}

pub fn run_one(id: u32) -> CriterionResult {
    let start = Instant::now();
    let out = match id {
        1 => c1(),
        2 => c2(),
        3 => c3(),
        4 => c4(),
        5 => c5(),
        6 => c6(),
        7 => c7(),
        8 => c8(),
        9 => c9(),
        10 => c10(),
        _ => Err(format!("no criterion {id}")),
    };
    let (pass, detail) = out.unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionResult { id, title: title(id), pass, detail, seconds: start.elapsed().as_secs_f64() }
}

/// Runs the selected criteria; the invariant check goes last so that it sees
/// the bound tally of every other run.
pub fn run_selected(ids: &[u32]) -> Vec<CriterionResult> {
    let mut order: Vec<u32> = ids.iter().copied().filter(|&i| i != 7).collect();
    order.sort_unstable();
    order.dedup();
    if ids.contains(&7) {
        order.push(7);
    }
    let mut out: Vec<CriterionResult> = order.into_iter().map(run_one).collect();
    out.sort_by_key(|r| r.id);
    out
}
