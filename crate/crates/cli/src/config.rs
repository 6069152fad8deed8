//! TOML experiment configuration.

use crate::error::CliError;
use abp_core::engine::{InitialMeasure, Observable, RunConfig, RunSettings, DEFAULT_STEP_CAP};
use abp_core::integrators::{Scheme, StepperConfig};
use abp_core::kernel::{KernelFamily, KernelSpec};
use abp_core::model::{CosineTerm, DynamicsSpec, Family, PotentialKind, PotentialSpec, ReactionCoordinate, State};
use abp_core::normalization::{GridFunction, NormalizationKind, NormalizationSpec};
use abp_core::spde::{Nonlinearity, SpdeModel, SpdeObservable, SpdeRunConfig};
use abp_core::AbpError;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

pub const OUTPUT_DIR_ENV: &str = "ABP_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    Brownian,
    Langevin,
    Extended,
    Spde,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub coeff: f64,
    pub freqs: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XiSection {
    pub m: usize,
}

impl Default for XiSection {
    fn default() -> Self {
        Self { m: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_family")]
    pub family: FamilyName,
    /// Langevin friction.
    #[serde(default = "one")]
    pub gamma: f64,
    /// Extended-dynamics coupling.
    #[serde(default = "default_coupling")]
    pub epsilon: f64,
    /// Preset name, or `cosine-series`, `quadratic-cosine`, `tabulated` with coefficients.
    #[serde(default)]
    pub potential: Option<String>,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub terms: Vec<Term>,
    #[serde(default)]
    pub stiffness: Option<f64>,
    #[serde(default)]
    pub values: Vec<f64>,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default)]
    pub xi: XiSection,
    /// Initial position; defaults to the centre of the torus or the origin.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Initial momenta or auxiliary variables.
    #[serde(default)]
    pub aux0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelName {
    Gaussian,
    Flat,
    Mixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    #[serde(default = "default_kernel_family")]
    pub family: KernelName,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_wraps")]
    pub wraps: usize,
    #[serde(default)]
    pub epsilons: Vec<f64>,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            family: KernelName::Gaussian,
            epsilon: default_epsilon(),
            alpha: default_alpha(),
            wraps: default_wraps(),
            epsilons: vec![],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormName {
    L1,
    Lq,
    Point,
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormSection {
    #[serde(default = "default_norm")]
    pub kind: NormName,
    #[serde(default)]
    pub q: Option<f64>,
    #[serde(default)]
    pub z0: Option<Vec<f64>>,
    /// Smoothing index for `min`/`max`.
    #[serde(default)]
    pub k: Option<u32>,
}

impl Default for NormSection {
    fn default() -> Self {
        Self { kind: NormName::L1, q: None, z0: None, k: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// 256 for one collective variable, 64 for two.
    #[serde(default)]
    pub size: Option<usize>,
    #[serde(default = "one_usize")]
    pub refresh_stride: usize,
    #[serde(default)]
    pub mean_force: bool,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { size: None, refresh_stride: 1, mean_force: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub t_final: f64,
    #[serde(default)]
    pub scheme: Option<Scheme>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
    #[serde(default = "one_usize")]
    pub replicas: usize,
    /// Defaults to ten equally spaced times ending at `t_final`.
    #[serde(default)]
    pub checkpoints: Option<Vec<f64>>,
    #[serde(default = "default_step_cap")]
    pub step_cap: u64,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    #[serde(default = "default_mu0")]
    pub mu0: InitialMeasure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixedSource {
    Zero,
    AStar,
    AInfinity,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedBiasSection {
    #[serde(default = "default_fixed")]
    pub source: FixedSource,
    /// CSV with a column `A` on the bias grid, for `source = "file"`.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

impl Default for FixedBiasSection {
    fn default() -> Self {
        Self { source: FixedSource::Zero, path: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonlinearityName {
    None,
    Cosine,
    AllenCahn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpdeSection {
    #[serde(default = "default_modes")]
    pub modes: usize,
    #[serde(default = "default_spde_grid")]
    pub grid: usize,
    #[serde(default = "default_nonlinearity")]
    pub nonlinearity: NonlinearityName,
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default)]
    pub allow_allen_cahn: bool,
    #[serde(default)]
    pub u0: Option<Vec<f64>>,
    /// Adaptive run, or frozen `A = 0` when false.
    #[serde(default = "yes")]
    pub adaptive: bool,
    #[serde(default = "default_spde_observables")]
    pub observables: Vec<SpdeObservable>,
}

impl Default for SpdeSection {
    fn default() -> Self {
        Self {
            modes: default_modes(),
            grid: default_spde_grid(),
            nonlinearity: default_nonlinearity(),
            c: 1.0,
            allow_allen_cahn: false,
            u0: None,
            adaptive: true,
            observables: default_spde_observables(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Falls back to `$ABP_OUTPUT_DIR`, then `abp-out`.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_prefix")]
    pub prefix: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: None, prefix: default_prefix(), formats: default_formats() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceSection {
    /// Index into `observables`.
    #[serde(default)]
    pub observable: usize,
    #[serde(default = "default_variance_replicas")]
    pub replicas: usize,
    /// Defaults to `t_final / 2`.
    #[serde(default)]
    pub plateau_from: Option<f64>,
    /// Also run the frozen-`A_inf` ensemble.
    #[serde(default = "yes")]
    pub compare_fixed: bool,
}

impl Default for VarianceSection {
    fn default() -> Self {
        Self { observable: 0, replicas: default_variance_replicas(), plateau_from: None, compare_fixed: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self { resolution: default_resolution() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub norm: NormSection,
    #[serde(default)]
    pub grid: GridSection,
    pub sim: SimSection,
    #[serde(default)]
    pub observables: Vec<Observable>,
    #[serde(default)]
    pub fixed_bias: FixedBiasSection,
    #[serde(default)]
    pub spde: Option<SpdeSection>,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub variance: VarianceSection,
    #[serde(default)]
    pub oracle: OracleSection,
}

fn default_family() -> FamilyName {
    FamilyName::Brownian
}
fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_coupling() -> f64 {
    0.1
}
fn default_kernel_family() -> KernelName {
    KernelName::Gaussian
}
fn default_epsilon() -> f64 {
    0.05
}
fn default_alpha() -> f64 {
    0.9
}
fn default_wraps() -> usize {
    5
}
fn default_norm() -> NormName {
    NormName::L1
}
fn default_dt() -> f64 {
    1e-3
}
fn default_step_cap() -> u64 {
    DEFAULT_STEP_CAP
}
fn default_bins() -> usize {
    50
}
fn default_mu0() -> InitialMeasure {
    InitialMeasure::Atom
}
fn default_fixed() -> FixedSource {
    FixedSource::Zero
}
fn default_modes() -> usize {
    abp_core::spde::DEFAULT_MODES
}
fn default_spde_grid() -> usize {
    abp_core::spde::DEFAULT_GRID
}
fn default_nonlinearity() -> NonlinearityName {
    NonlinearityName::Cosine
}
fn default_spde_observables() -> Vec<SpdeObservable> {
    vec![SpdeObservable::Mean, SpdeObservable::MeanSquared, SpdeObservable::NormSquared]
}
fn default_prefix() -> String {
    "abp".into()
}
fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}
fn default_variance_replicas() -> usize {
    64
}
fn default_resolution() -> usize {
    256
}

fn at(path: &str) -> impl Fn(AbpError) -> CliError + '_ {
    move |e| CliError::Config(format!("{path}: {e}"))
}

/// Parses, fills defaults and validates.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let de = toml::Deserializer::new(text);
    let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.message().to_string();
        if path.is_empty() || path == "." {
            CliError::Config(msg)
        } else {
            CliError::Config(format!("{path}: {msg}"))
        }
    })?;
    cfg.resolve()?;
    Ok(cfg)
}

impl ExperimentConfig {
    /// Fills derived defaults and checks every section.
    pub fn resolve(&mut self) -> Result<(), CliError> {
        let is_spde = self.model.family == FamilyName::Spde;
        if is_spde {
            let spde = self.spde.get_or_insert_with(SpdeSection::default);
            spde.model().map_err(at("spde"))?;
        } else {
            if self.spde.is_some() {
                return Err(CliError::Config("spde: only valid with model.family = \"spde\"".into()));
            }
            let dynamics = self.dynamics()?;
            if self.observables.is_empty() {
                self.observables.push(Observable::Cos { coord: 0, k: 1 });
            }
            for (i, o) in self.observables.iter().enumerate() {
                o.check(&dynamics).map_err(|e| CliError::Config(format!("observables[{i}]: {e}")))?;
            }
            if let Some(s) = self.sim.scheme {
                StepperConfig { dt: self.sim.dt, scheme: s }.validate(&dynamics.family).map_err(at("sim.scheme"))?;
            }
            let m = dynamics.cv_dim();
            self.grid.size.get_or_insert(if m == 1 { 256 } else { 64 });
            self.kernel_spec()?;
            self.norm_spec()?;
            if self.grid.refresh_stride == 0 {
                return Err(CliError::Config("grid.refresh_stride: must be at least 1".into()));
            }
            if self.variance.observable >= self.observables.len() {
                return Err(CliError::Config("variance.observable: index outside observables".into()));
            }
        }
        if !(self.sim.dt > 0.0 && self.sim.dt.is_finite()) {
            return Err(CliError::Config(format!("sim.dt: must be positive, got {}", self.sim.dt)));
        }
        if !(self.sim.t_final > 0.0 && self.sim.t_final.is_finite()) {
            return Err(CliError::Config(format!("sim.t_final: must be positive, got {}", self.sim.t_final)));
        }
        let steps = (self.sim.t_final / self.sim.dt).round();
        if steps > self.sim.step_cap as f64 {
            return Err(CliError::Config(format!(
                "sim.t_final: {steps} steps exceed sim.step_cap = {}",
                self.sim.step_cap
            )));
        }
        if self.sim.replicas == 0 {
            return Err(CliError::Config("sim.replicas: must be at least 1".into()));
        }
        if self.sim.checkpoints.is_none() {
            let t = self.sim.t_final;
            self.sim.checkpoints = Some((1..=10).map(|i| t * i as f64 / 10.0).collect());
        }
        if let Some(c) = &self.sim.checkpoints {
            if c.iter().any(|&t| !(0.0..=self.sim.t_final).contains(&t)) {
                return Err(CliError::Config("sim.checkpoints: times must lie in [0, t_final]".into()));
            }
        }
        if self.fixed_bias.source == FixedSource::File && self.fixed_bias.path.is_none() {
            return Err(CliError::Config("fixed_bias.path: required when source = \"file\"".into()));
        }
        if self.output.dir.is_none() {
            self.output.dir = Some(std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| "abp-out".into()));
        }
        Ok(())
    }

    pub fn potential(&self) -> Result<PotentialSpec, CliError> {
        let m = &self.model;
        let name = m.potential.as_deref().ok_or_else(|| CliError::Config("model.potential: missing".into()))?;
        let terms = || m.terms.iter().map(|t| CosineTerm::new(t.coeff, t.freqs.clone())).collect::<Vec<_>>();
        let dim = || m.dim.ok_or_else(|| CliError::Config("model.dim: required for this potential".into()));
        let kind = match name {
            "cosine-series" => PotentialKind::CosineSeries { dim: dim()?, terms: terms() },
            "quadratic-cosine" => PotentialKind::QuadraticCosine {
                dim: dim()?,
                stiffness: m.stiffness.ok_or_else(|| CliError::Config("model.stiffness: required".into()))?,
                terms: terms(),
            },
            "tabulated" => PotentialKind::Tabulated { values: m.values.clone() },
            preset => return PotentialSpec::preset(preset, m.beta).map_err(at("model.potential")),
        };
        PotentialSpec::new(kind, m.beta).map_err(at("model"))
    }

    pub fn dynamics(&self) -> Result<DynamicsSpec, CliError> {
        let family = match self.model.family {
            FamilyName::Brownian => Family::Brownian,
            FamilyName::Langevin => Family::Langevin { gamma: self.model.gamma },
            FamilyName::Extended => Family::Extended { epsilon: self.model.epsilon },
            FamilyName::Spde => return Err(CliError::Config("model.family: spde has no finite-dimensional dynamics".into())),
        };
        DynamicsSpec::new(family, self.potential()?, ReactionCoordinate::projection(self.model.xi.m)).map_err(at("model"))
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec, CliError> {
        let k = &self.kernel;
        let family = match k.family {
            KernelName::Gaussian => KernelFamily::WrappedGaussian,
            KernelName::Flat => KernelFamily::Flat,
            KernelName::Mixture => KernelFamily::Mixture { epsilons: k.epsilons.clone() },
        };
        KernelSpec::new(family, k.epsilon, k.alpha, k.wraps).map_err(|e| {
            let msg = e.to_string();
            let key = ["alpha", "wraps", "epsilons"].into_iter().find(|w| msg.contains(*w)).unwrap_or("epsilon");
            CliError::Config(format!("kernel.{key}: {msg}"))
        })
    }

    pub fn norm_spec(&self) -> Result<NormalizationSpec, CliError> {
        let n = &self.norm;
        let kind = match n.kind {
            NormName::L1 => NormalizationKind::L1,
            NormName::Lq => NormalizationKind::Lq { q: n.q.ok_or_else(|| CliError::Config("norm.q: required for lq".into()))? },
            NormName::Point => NormalizationKind::PointEval {
                z0: n.z0.clone().ok_or_else(|| CliError::Config("norm.z0: required for point".into()))?,
            },
            NormName::Min => NormalizationKind::Min,
            NormName::Max => NormalizationKind::Max,
        };
        NormalizationSpec::new(kind, n.k).map_err(at("norm"))
    }

    pub fn checkpoints(&self) -> Vec<f64> {
        self.sim.checkpoints.clone().unwrap_or_default()
    }

    pub fn run_settings(&self) -> RunSettings {
        let mut s = RunSettings::new(self.sim.dt, self.sim.t_final, self.sim.seed);
        s.stream = self.sim.stream;
        s.checkpoints = self.checkpoints();
        s.histogram_bins = self.sim.histogram_bins;
        s.step_cap = self.sim.step_cap;
        s
    }

    pub fn initial_state(&self, dynamics: &DynamicsSpec) -> Result<State, CliError> {
        let d = dynamics.dim();
        let torus = dynamics.potential.space() == abp_core::model::Space::Torus;
        let x = self.model.x0.clone().unwrap_or_else(|| vec![if torus { 0.5 } else { 0.0 }; d]);
        let aux = match &self.model.aux0 {
            Some(a) => a.clone(),
            None => match dynamics.family {
                Family::Extended { .. } => x[..dynamics.cv_dim().min(x.len())].to_vec(),
                _ => vec![0.0; dynamics.aux_len()],
            },
        };
        let s = State { x, aux };
        dynamics.check_state(&s).map_err(at("model.x0"))?;
        Ok(s)
    }

    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        let dynamics = self.dynamics()?;
        let x0 = self.initial_state(&dynamics)?;
        let mut cfg = RunConfig::new(dynamics, x0, self.observables.clone(), self.run_settings());
        cfg.kernel = self.kernel_spec()?;
        cfg.norm = self.norm_spec()?;
        if let Some(g) = self.grid.size {
            cfg.grid_size = g;
        }
        cfg.refresh_stride = self.grid.refresh_stride;
        cfg.mean_force = self.grid.mean_force;
        cfg.mu0 = self.sim.mu0;
        Ok(cfg)
    }

    pub fn spde_run_config(&self) -> Result<SpdeRunConfig, CliError> {
        let section = self.spde.clone().unwrap_or_default();
        let model = section.model().map_err(at("spde"))?;
        for (i, o) in section.observables.iter().enumerate() {
            if let SpdeObservable::Mode { n } | SpdeObservable::ModeSquared { n } = o {
                if *n == 0 || *n > model.modes {
                    return Err(CliError::Config(format!("spde.observables[{i}]: mode {n} outside 1..={}", model.modes)));
                }
            }
        }
        let mut cfg = SpdeRunConfig::new(model, section.observables.clone(), self.run_settings());
        cfg.kernel = self.kernel_spec()?;
        if let Some(g) = self.grid.size {
            cfg.grid_size = g;
        }
        if let Some(u0) = &section.u0 {
            if u0.len() != section.modes {
                return Err(CliError::Config(format!("spde.u0: expected {} modes, got {}", section.modes, u0.len())));
            }
            cfg.u0 = u0.clone();
        }
        Ok(cfg)
    }

    /// The frozen bias requested in `[fixed_bias]`, on the bias grid.
    pub fn fixed_bias_grid(&self) -> Result<GridFunction, CliError> {
        let dynamics = self.dynamics()?;
        let m = dynamics.cv_dim();
        let g = self.grid.size.unwrap_or(if m == 1 { 256 } else { 64 });
        match self.fixed_bias.source {
            FixedSource::Zero => GridFunction::constant(0.0, g, m).map_err(at("grid.size")),
            FixedSource::AStar => {
                abp_core::oracle::free_energy_star(&dynamics.potential, m, g).map_err(at("fixed_bias.source"))
            }
            FixedSource::AInfinity => abp_core::oracle::a_infinity(&dynamics.potential, m, &self.kernel_spec()?, g)
                .map_err(at("fixed_bias.source")),
            FixedSource::File => {
                let path = self.fixed_bias.path.as_ref().expect("checked in resolve");
                crate::output::read_bias_csv(path, g, m)
            }
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.dir.clone().unwrap_or_else(|| "abp-out".into())
    }
}

impl SpdeSection {
    pub fn model(&self) -> abp_core::Result<SpdeModel> {
        let nl = match self.nonlinearity {
            NonlinearityName::None => Nonlinearity::None,
            NonlinearityName::Cosine => Nonlinearity::Cosine { c: self.c },
            NonlinearityName::AllenCahn => Nonlinearity::AllenCahn,
        };
        SpdeModel::new(nl, self.modes, self.grid, self.allow_allen_cahn)
    }
}
