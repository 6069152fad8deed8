//! Subcommand drivers.

use crate::acceptance;
use crate::config::{ExperimentConfig, FamilyName, Format};
use crate::error::CliError;
use crate::output::{num, write_csv, write_json, Provenance, Table};
use abp_core::engine::{mean_var, replica_variance, run_ensemble, RunReport, VarianceTable};
use abp_core::kernel::KernelFamily;
use abp_core::model::{DynamicsSpec, Family, Space};
use abp_core::normalization::GridFunction;
use abp_core::oracle::{self, OracleTables};
use abp_core::spde::{self, run_spde_ensemble, Nonlinearity};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};

/// Files written and a summary for the terminal.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
    pub summary: Value,
}

fn wants(cfg: &ExperimentConfig, f: Format) -> bool {
    cfg.output.formats.contains(&f)
}

/// `A_inf` on the bias grid when an oracle exists for this model.
pub fn reference_bias(cfg: &ExperimentConfig, dynamics: &DynamicsSpec) -> Option<GridFunction> {
    let v = &dynamics.potential;
    let g = cfg.grid.size?;
    let kernel = cfg.kernel_spec().ok()?;
    if v.space() != Space::Torus || v.dim() > 2 || !cfg.norm.kind_is_l1() {
        return None;
    }
    if matches!(kernel.family, KernelFamily::Mixture { .. }) && dynamics.cv_dim() == 2 {
        return None;
    }
    match dynamics.family {
        Family::Extended { epsilon } if v.dim() == 1 => oracle::a_infinity_extended(v, &kernel, epsilon, g).ok(),
        Family::Extended { .. } => None,
        _ => oracle::a_infinity(v, dynamics.cv_dim(), &kernel, g).ok(),
    }
}

impl crate::config::NormSection {
    fn kind_is_l1(&self) -> bool {
        self.kind == crate::config::NormName::L1
    }
}

fn series_table(names: &[String], reports: &[(usize, &RunReport)]) -> Table {
    let mut cols: Vec<String> = ["replica", "t", "theta", "a_error"].iter().map(|s| s.to_string()).collect();
    cols.extend(names.iter().map(|n| format!("mu_bar[{n}]")));
    cols.extend(names.iter().map(|n| format!("rho_bar[{n}]")));
    let mut t = Table::new(cols);
    for (i, r) in reports {
        for row in &r.series {
            let mut v = vec![i.to_string(), num(row.t), num(row.theta), row.a_error.map(num).unwrap_or_default()];
            v.extend(row.mu_bar.iter().copied().map(num));
            v.extend(row.rho_bar.iter().copied().map(num));
            t.push(v);
        }
    }
    t
}

fn bias_table(reports: &[(usize, &RunReport)]) -> Table {
    let Some((_, first)) = reports.first() else { return Table::default() };
    let m = first.bias_final.cv_dim;
    let mut cols = vec!["replica".to_string()];
    if m == 1 {
        cols.extend(["z", "A", "F", "dA"].map(String::from));
    } else {
        cols.extend(["z1", "z2", "A", "F", "dA1", "dA2"].map(String::from));
    }
    let mut t = Table::new(cols);
    for (i, r) in reports {
        let b = &r.bias_final;
        let g = b.grid_size;
        for k in 0..b.a.len() {
            let mut row = vec![i.to_string()];
            if m == 1 {
                row.push(num(k as f64 / g as f64));
            } else {
                row.push(num((k / g) as f64 / g as f64));
                row.push(num((k % g) as f64 / g as f64));
            }
            row.push(num(b.a[k]));
            row.push(num(b.f[k]));
            row.extend(b.da.iter().map(|d| num(d[k])));
            t.push(row);
        }
    }
    t
}

fn report_summary(i: usize, r: &RunReport) -> Value {
    json!({
        "replica": i,
        "seed": r.seed,
        "stream": r.stream,
        "adaptive": r.adaptive,
        "steps": r.accumulators.steps,
        "t": r.accumulators.elapsed(),
        "mu_bar": r.mu_bar,
        "rho_bar": r.rho_bar,
        "theta": r.bias_final.theta,
        "a_error": r.series.last().and_then(|s| s.a_error),
        "histogram_max_min_ratio": r.accumulators.histogram.max_min_ratio(),
        "bound_checks": r.bound_checks,
        "bound_violations": r.bound_violations,
        "gradient_bound_holds": r.gradient_bound_holds,
        "wall_seconds": r.wall_seconds,
    })
}

/// Writes series, bias and summary files for an ensemble; fails with a
/// blowup error after writing when any replica failed.
fn emit_ensemble(
    cfg: &ExperimentConfig,
    command: &'static str,
    results: &[abp_core::Result<RunReport>],
    extra: Value,
) -> Result<Outcome, CliError> {
    let prov = Provenance::new(command, cfg.sim.seed, cfg);
    let dir = cfg.output_dir();
    let ok: Vec<(usize, &RunReport)> = results.iter().enumerate().filter_map(|(i, r)| r.as_ref().ok().map(|r| (i, r))).collect();
    let failures: Vec<Value> = results
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().err().map(|e| json!({"replica": i, "error": e.to_string()})))
        .collect();
    if ok.is_empty() {
        let first = results.iter().find_map(|r| r.as_ref().err()).expect("no replicas");
        let err: CliError = match first {
            abp_core::AbpError::Blowup { .. } => CliError::Blowup(first.to_string()),
            _ => CliError::Numerical(first.to_string()),
        };
        return Err(err);
    }
    let names = ok[0].1.observables.clone();
    let mut out = Outcome::default();
    let prefix = &cfg.output.prefix;
    if wants(cfg, Format::Csv) {
        out.files.push(write_csv(&dir, &format!("{prefix}_{command}_series.csv"), &prov, "series", &series_table(&names, &ok))?);
        out.files.push(write_csv(&dir, &format!("{prefix}_{command}_bias.csv"), &prov, "bias", &bias_table(&ok))?);
    }
    let mut stats = vec![];
    for (j, n) in names.iter().enumerate() {
        let vals: Vec<f64> = ok.iter().map(|(_, r)| r.mu_bar[j]).collect();
        let (mean, var) = mean_var(&vals);
        let stderr = (var / vals.len() as f64).sqrt();
        out.lines.push(format!("{n}: mu_bar = {mean:.6} (stderr {stderr:.2e}, {} replicas)", vals.len()));
        stats.push(json!({"observable": n, "mean": mean, "stderr": stderr}));
    }
    let violations: u64 = ok.iter().map(|(_, r)| r.bound_violations).sum();
    out.lines.push(format!("a-priori bound violations: {violations}"));
    out.summary = json!({
        "replicas": results.len(),
        "survivors": ok.len(),
        "failures": failures,
        "observables": stats,
        "runs": ok.iter().map(|(i, r)| report_summary(*i, r)).collect::<Vec<_>>(),
        "extra": extra,
    });
    if wants(cfg, Format::Json) {
        out.files.push(write_json(&dir, &format!("{prefix}_{command}_summary.json"), &prov, out.summary.clone())?);
    }
    if !failures.is_empty() {
        return Err(CliError::Blowup(format!("{} of {} replicas failed: {}", failures.len(), results.len(), Value::from(failures))));
    }
    Ok(out)
}

fn oracle_means(cfg: &ExperimentConfig, dynamics: &DynamicsSpec) -> Value {
    let v = &dynamics.potential;
    if v.space() != Space::Torus || v.dim() > 2 {
        return Value::Null;
    }
    let r = if v.dim() == 1 { 512 } else { 128 };
    let vals: Vec<Value> = cfg
        .observables
        .iter()
        .map(|o| match o.eval_config(&vec![0.0; v.dim()]) {
            Some(_) => oracle::quadrature_mu_star(v, |x| o.eval_config(x).unwrap_or(f64::NAN), r).map(Value::from).unwrap_or(Value::Null),
            None => Value::Null,
        })
        .collect();
    json!({ "mu_star": vals })
}

fn require_finite(cfg: &ExperimentConfig) -> Result<(), CliError> {
    if cfg.model.family == FamilyName::Spde {
        return Err(CliError::Config("model.family: use `spde-run` for the SPDE".into()));
    }
    Ok(())
}

pub fn command_run(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    require_finite(cfg)?;
    let mut rc = cfg.run_config()?;
    rc.reference_bias = reference_bias(cfg, &rc.dynamics);
    let results = run_ensemble(&rc, cfg.sim.replicas, None);
    let extra = oracle_means(cfg, &rc.dynamics);
    emit_ensemble(cfg, "run", &results, extra)
}

pub fn command_fixed_bias(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    require_finite(cfg)?;
    let mut rc = cfg.run_config()?;
    rc.reference_bias = reference_bias(cfg, &rc.dynamics);
    let a = cfg.fixed_bias_grid()?;
    let results = run_ensemble(&rc, cfg.sim.replicas, Some(&a));
    let extra = oracle_means(cfg, &rc.dynamics);
    emit_ensemble(cfg, "run-fixed-bias", &results, extra)
}

/// Mean of the 95% interval bounds over the plateau rows.
pub fn plateau_interval(t: &VarianceTable, from: f64) -> (f64, f64, f64) {
    let rows: Vec<_> = t.rows.iter().filter(|r| r.t >= from).collect();
    let n = rows.len() as f64;
    (
        t.plateau(from),
        rows.iter().map(|r| r.ci_low).sum::<f64>() / n,
        rows.iter().map(|r| r.ci_high).sum::<f64>() / n,
    )
}

pub fn command_variance(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    require_finite(cfg)?;
    let rc = cfg.run_config()?;
    let idx = cfg.variance.observable;
    let obs = &cfg.observables[idx];
    let v = &rc.dynamics.potential;
    let torus = v.space() == Space::Torus && v.dim() <= 2;
    let target = if torus {
        Some(oracle::quadrature_mu_star(v, |x| obs.eval_config(x).unwrap_or(f64::NAN), 512)?).filter(|t| t.is_finite())
    } else {
        None
    };
    let checkpoints = cfg.checkpoints();
    let reps = cfg.variance.replicas;
    let from = cfg.variance.plateau_from.unwrap_or(cfg.sim.t_final / 2.0);
    let adaptive = replica_variance(&rc, reps, &checkpoints, None, idx, target)?;
    let mut tables = vec![("adaptive", adaptive)];
    let mut oracle_value = Value::Null;
    let one_d = torus && v.dim() == 1 && rc.dynamics.cv_dim() == 1 && matches!(rc.dynamics.family, Family::Brownian);
    if cfg.variance.compare_fixed || one_d {
        let g = rc.grid_size;
        let kernel = cfg.kernel_spec()?;
        if torus && !matches!(rc.dynamics.family, Family::Extended { .. }) {
            let a_inf = oracle::a_infinity(v, rc.dynamics.cv_dim(), &kernel, g)?;
            if cfg.variance.compare_fixed {
                let mut fixed_cfg = rc.clone();
                // independent noise for the comparison ensemble
                fixed_cfg.settings.stream += reps as u64;
                tables.push(("fixed-a-inf", replica_variance(&fixed_cfg, reps, &checkpoints, Some(&a_inf), idx, target)?));
            }
            if one_d && cfg.norm.kind_is_l1() {
                let phi = |x: &[f64]| obs.eval_config(x).unwrap_or(f64::NAN);
                let a_o = oracle::a_infinity(v, 1, &kernel, 256)?;
                let var = oracle::asymptotic_variance(v, &a_o, phi, 256)?;
                oracle_value = json!({"v_inf": var.value, "v_inf_unweighted_form": var.unweighted_form});
            }
        }
    }
    let prov = Provenance::new("variance", cfg.sim.seed, cfg);
    let dir = cfg.output_dir();
    let mut out = Outcome::default();
    let mut t = Table::new(["ensemble", "t", "mean", "variance", "t_var", "ci_low", "ci_high", "bias"]);
    let mut plateaus = vec![];
    for (name, tab) in &tables {
        for r in &tab.rows {
            t.push(vec![
                name.to_string(),
                num(r.t),
                num(r.mean),
                num(r.variance),
                num(r.scaled_variance),
                num(r.ci_low),
                num(r.ci_high),
                r.bias.map(num).unwrap_or_default(),
            ]);
        }
        let (p, lo, hi) = plateau_interval(tab, from);
        out.lines.push(format!("{name}: plateau t*Var = {p:.5} [{lo:.5}, {hi:.5}] ({} of {} replicas)", tab.survivors, tab.replicas));
        plateaus.push(json!({"ensemble": name, "plateau": p, "ci_low": lo, "ci_high": hi, "survivors": tab.survivors, "failures": tab.failures}));
    }
    if let Some(v) = oracle_value.get("v_inf").and_then(Value::as_f64) {
        out.lines.push(format!("oracle V_inf(phi, A_inf) = {v:.5}"));
    }
    if wants(cfg, Format::Csv) {
        out.files.push(write_csv(&dir, &format!("{}_variance.csv", cfg.output.prefix), &prov, "variance", &t)?);
    }
    out.summary = json!({"observable": obs.name(), "plateau_from": from, "plateaus": plateaus, "oracle": oracle_value, "target_mu_star": target});
    if wants(cfg, Format::Json) {
        out.files.push(write_json(&dir, &format!("{}_variance_summary.json", cfg.output.prefix), &prov, out.summary.clone())?);
    }
    Ok(out)
}

pub fn command_oracle(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    require_finite(cfg)?;
    let dynamics = cfg.dynamics()?;
    let v = &dynamics.potential;
    let m = dynamics.cv_dim();
    let r = cfg.oracle.resolution;
    let kernel = cfg.kernel_spec()?;
    let closures: Vec<Box<dyn Fn(&[f64]) -> f64 + '_>> = cfg
        .observables
        .iter()
        .map(|o| Box::new(move |x: &[f64]| o.eval_config(x).unwrap_or(f64::NAN)) as Box<dyn Fn(&[f64]) -> f64>)
        .collect();
    let refs: Vec<&dyn Fn(&[f64]) -> f64> = closures.iter().map(|b| b.as_ref()).collect();
    let tables = OracleTables::compute(v, m, &kernel, &refs, r)?;
    let extended = match dynamics.family {
        Family::Extended { epsilon } if m == 1 => Some(oracle::a_infinity_extended(v, &kernel, epsilon, r)?),
        _ => None,
    };
    let e_star = tables.a_star.map(|a| (-a).exp())?;
    let e_inf = tables.a_inf.map(|a| (-a).exp())?;
    let mut cols: Vec<String> = if m == 1 { vec!["z".into()] } else { vec!["z1".into(), "z2".into()] };
    cols.extend(["A_star", "exp_neg_A_star", "A_inf", "exp_neg_A_inf"].map(String::from));
    if extended.is_some() {
        cols.push("A_inf_extended".into());
    }
    let mut t = Table::new(cols);
    for k in 0..tables.a_star.values().len() {
        let mut row = if m == 1 {
            vec![num(k as f64 / r as f64)]
        } else {
            vec![num((k / r) as f64 / r as f64), num((k % r) as f64 / r as f64)]
        };
        row.extend([tables.a_star.values()[k], e_star.values()[k], tables.a_inf.values()[k], e_inf.values()[k]].map(num));
        if let Some(x) = &extended {
            row.push(num(x.values()[k]));
        }
        t.push(row);
    }
    let prov = Provenance::new("oracle", cfg.sim.seed, cfg);
    let dir = cfg.output_dir();
    let mut out = Outcome::default();
    let prefix = &cfg.output.prefix;
    if wants(cfg, Format::Csv) {
        out.files.push(write_csv(&dir, &format!("{prefix}_oracle.csv"), &prov, "oracle", &t)?);
        for (j, p) in tables.poisson.iter().enumerate() {
            if let Some(p) = p {
                let mut pt = Table::new(["x", "psi", "dpsi"]);
                for (k, (a, b)) in p.psi.values().iter().zip(&p.dpsi).enumerate() {
                    pt.push(vec![num(k as f64 / r as f64), num(*a), num(*b)]);
                }
                out.files.push(write_csv(&dir, &format!("{prefix}_oracle_poisson_{j}.csv"), &prov, "poisson", &pt)?);
            }
        }
    }
    let names: Vec<String> = cfg.observables.iter().map(|o| o.name()).collect();
    out.lines.push(format!("integral exp(-A*) = {:.12}, integral exp(-A_inf) = {:.12}", e_star.mean(), e_inf.mean()));
    for (j, n) in names.iter().enumerate() {
        out.lines.push(format!("{n}: mu* = {:.8}, mu*^A_inf = {:.8}", tables.mu_star_phi[j], tables.mu_star_a_inf_phi[j]));
        if let Some(v) = &tables.v_inf[j] {
            out.lines.push(format!("{n}: V_inf(A_inf) = {:.6} (unweighted form {:.6})", v.value, v.unweighted_form));
        }
    }
    out.summary = json!({
        "resolution": r,
        "observables": names,
        "mu_star": tables.mu_star_phi,
        "mu_star_a_inf": tables.mu_star_a_inf_phi,
        "integral_exp_neg_a_star": e_star.mean(),
        "integral_exp_neg_a_inf": e_inf.mean(),
        "z_ratio": tables.z_ratio,
        "v_inf": tables.v_inf,
        "poisson_defect": tables.poisson.iter().map(|p| p.as_ref().map(|p| p.defect)).collect::<Vec<_>>(),
    });
    if wants(cfg, Format::Json) {
        out.files.push(write_json(&dir, &format!("{prefix}_oracle_summary.json"), &prov, out.summary.clone())?);
    }
    Ok(out)
}

pub fn command_spde(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    if cfg.model.family != FamilyName::Spde {
        return Err(CliError::Config("model.family: spde-run needs family = \"spde\"".into()));
    }
    let mut sc = cfg.spde_run_config()?;
    let section = cfg.spde.clone().unwrap_or_default();
    let mut out = Outcome::default();
    if !sc.model.nonlinearity.satisfies_spectral_gap() {
        let warn = "warning: sup|V''| < pi^2 fails for this nonlinearity; convergence is not guaranteed";
        eprintln!("{warn}");
        out.lines.push(warn.into());
    }
    if sc.model.nonlinearity == Nonlinearity::None {
        sc.reference_bias = Some(spde::gaussian_a_infinity(&sc.kernel, spde::gaussian_mean_variance(sc.model.modes), sc.grid_size)?);
    }
    let fixed = GridFunction::constant(0.0, sc.grid_size, 1)?;
    let results = run_spde_ensemble(&sc, cfg.sim.replicas, (!section.adaptive).then_some(&fixed));
    let mut o = emit_ensemble(cfg, "spde-run", &results, json!({"gaussian_reference": sc.reference_bias.is_some()}))?;
    out.lines.append(&mut o.lines);
    out.files = o.files;
    out.summary = o.summary;
    Ok(out)
}

pub fn command_check(ids: &[u32], dir: &Path) -> Result<Outcome, CliError> {
    let results = acceptance::run_selected(ids);
    let mut out = Outcome::default();
    for r in &results {
        out.lines.push(r.line());
    }
    let prov = Provenance::new("check", acceptance::SEED, &json!({"criteria": ids}));
    out.summary = serde_json::to_value(&results).unwrap_or(Value::Null);
    out.files.push(write_json(dir, "acceptance.json", &prov, out.summary.clone())?);
    let failed: Vec<u32> = results.iter().filter(|r| !r.pass).map(|r| r.id).collect();
    if failed.is_empty() {
        Ok(out)
    } else {
        for l in &out.lines {
            println!("{l}");
        }
        Err(CliError::Acceptance(format!("criteria {failed:?} failed")))
    }
}
