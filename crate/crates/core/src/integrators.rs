//! Euler-Maruyama and BAOAB steps with reproducible Gaussian streams.

use crate::error::{AbpError, Result};
use crate::geometry::wrap_scalar;
use crate::model::{BiasFunction, DynamicsSpec, Family, Space, State};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Name of the generator behind [`RngStream`]; part of the reproducibility contract.
pub const GENERATOR: &str = "chacha8/rand_distr-0.5-ziggurat";

pub trait NoiseSource {
    fn normal(&mut self) -> f64;
}

/// Standard normals from ChaCha8 keyed by `seed`, on stream `stream_id`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl NoiseSource for RngStream {
    #[inline]
    fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

/// Always returns zero; turns the schemes into their deterministic parts.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn normal(&mut self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    EulerMaruyama,
    Baoab,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub dt: f64,
    pub scheme: Scheme,
}

impl StepperConfig {
    /// The natural scheme for a family: BAOAB for Langevin, Euler-Maruyama otherwise.
    pub fn for_family(family: &Family, dt: f64) -> Result<Self> {
        let scheme = match family {
            Family::Langevin { .. } => Scheme::Baoab,
            _ => Scheme::EulerMaruyama,
        };
        let cfg = Self { dt, scheme };
        cfg.validate(family)?;
        Ok(cfg)
    }

    pub fn validate(&self, family: &Family) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(AbpError::invalid("stepper", "dt must be positive"));
        }
        match (self.scheme, family) {
            (Scheme::Baoab, Family::Langevin { .. }) | (Scheme::EulerMaruyama, Family::Brownian | Family::Extended { .. }) => Ok(()),
            (Scheme::Baoab, _) => Err(AbpError::invalid("stepper", "BAOAB needs Langevin dynamics")),
            (Scheme::EulerMaruyama, _) => Err(AbpError::invalid("stepper", "Langevin dynamics use BAOAB")),
        }
    }
}

fn non_finite(x: &[f64]) -> Option<usize> {
    x.iter().position(|v| !v.is_finite())
}

fn blowup(what: &str, x: &[f64], i: usize) -> AbpError {
    AbpError::Blowup { step: 0, time: 0.0, detail: format!("{what}[{i}] = {} in state {x:?}", x[i]) }
}

/// `x <- x + dt drift + sqrt(2 dt) N`, wrapping the coordinates flagged periodic.
pub fn em_step(x: &mut [f64], drift: &[f64], dt: f64, periodic: &[bool], noise: &mut impl NoiseSource) -> Result<()> {
    let s = (2.0 * dt).sqrt();
    for ((xi, &d), &per) in x.iter_mut().zip(drift).zip(periodic) {
        let v = *xi + dt * d + s * noise.normal();
        *xi = if per { wrap_scalar(v) } else { v };
    }
    match non_finite(x) {
        Some(i) => Err(blowup("x", x, i)),
        None => Ok(()),
    }
}

/// One BAOAB step for `dq = p dt`, `dp = (F(q) - gamma p) dt + sqrt(2 gamma) dW`.
///
/// `force(q, out)` writes `F(q)`; `scratch` must hold `q.len()` entries.
#[allow(clippy::too_many_arguments)]
pub fn baoab_step(
    q: &mut [f64],
    p: &mut [f64],
    force: &mut impl FnMut(&[f64], &mut [f64]),
    gamma: f64,
    dt: f64,
    periodic: bool,
    scratch: &mut [f64],
    noise: &mut impl NoiseSource,
) -> Result<()> {
    let half = 0.5 * dt;
    let c1 = (-gamma * dt).exp();
    let c2 = (1.0 - c1 * c1).max(0.0).sqrt();
    force(q, scratch);
    for (pi, &f) in p.iter_mut().zip(scratch.iter()) {
        *pi += half * f;
    }
    for (qi, &pi) in q.iter_mut().zip(p.iter()) {
        *qi += half * pi;
    }
    for pi in p.iter_mut() {
        *pi = c1 * *pi + c2 * noise.normal();
    }
    for (qi, &pi) in q.iter_mut().zip(p.iter()) {
        *qi += half * pi;
        if periodic {
            *qi = wrap_scalar(*qi);
        }
    }
    if let Some(i) = non_finite(q) {
        return Err(blowup("q", q, i));
    }
    force(q, scratch);
    for (pi, &f) in p.iter_mut().zip(scratch.iter()) {
        *pi += half * f;
    }
    match non_finite(p) {
        Some(i) => Err(blowup("p", p, i)),
        None => Ok(()),
    }
}

/// Advances states of a [`DynamicsSpec`] with its natural scheme.
#[derive(Debug, Clone)]
pub struct Stepper {
    dt: f64,
    periodic: Vec<bool>,
    drift: Vec<f64>,
    packed: Vec<f64>,
}

impl Stepper {
    pub fn new(dynamics: &DynamicsSpec, dt: f64) -> Result<Self> {
        StepperConfig::for_family(&dynamics.family, dt)?;
        let d = dynamics.dim();
        let torus = dynamics.potential.space() == Space::Torus;
        let mut periodic = vec![torus; d];
        periodic.extend(std::iter::repeat_n(
            matches!(dynamics.family, Family::Extended { .. }),
            dynamics.aux_len(),
        ));
        let n = dynamics.state_len();
        Ok(Self { dt, periodic, drift: vec![0.0; n], packed: vec![0.0; n] })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step<B: BiasFunction + ?Sized>(
        &mut self,
        dynamics: &DynamicsSpec,
        bias: &B,
        s: &mut State,
        noise: &mut impl NoiseSource,
    ) -> Result<()> {
        let d = s.x.len();
        match dynamics.family {
            Family::Langevin { gamma } => {
                let periodic = self.periodic[0];
                let mut force = |q: &[f64], out: &mut [f64]| dynamics.config_force(bias, q, out);
                baoab_step(&mut s.x, &mut s.aux, &mut force, gamma, self.dt, periodic, &mut self.drift[..d], noise)
            }
            _ => {
                dynamics.drift_into(bias, s, &mut self.drift);
                if s.aux.is_empty() {
                    return em_step(&mut s.x, &self.drift, self.dt, &self.periodic, noise);
                }
                self.packed[..d].copy_from_slice(&s.x);
                self.packed[d..].copy_from_slice(&s.aux);
                em_step(&mut self.packed, &self.drift, self.dt, &self.periodic, noise)?;
                s.x.copy_from_slice(&self.packed[..d]);
                s.aux.copy_from_slice(&self.packed[d..]);
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PotentialSpec, ReactionCoordinate, ZeroBias};

    #[test]
    fn em_examples() {
        let mut x = [0.3, 0.7];
        em_step(&mut x, &[0.0, 0.0], 0.1, &[true, true], &mut ZeroNoise).unwrap();
        assert_eq!(x, [0.3, 0.7]);
        let mut x = [0.8, 0.2];
        em_step(&mut x, &[1.0, 0.0], 0.5, &[true, true], &mut ZeroNoise).unwrap();
        assert!((x[0] - 0.3).abs() < 1e-15 && x[1] == 0.2);
        let mut x = [0.0];
        assert!(matches!(em_step(&mut x, &[f64::NAN], 0.1, &[false], &mut ZeroNoise), Err(AbpError::Blowup { .. })));
    }

    #[test]
    fn baoab_examples() {
        let mut scratch = [0.0];
        let mut zero = |_: &[f64], out: &mut [f64]| out[0] = 0.0;
        let (mut q, mut p) = ([0.0], [1.0]);
        baoab_step(&mut q, &mut p, &mut zero, 0.0, 0.1, true, &mut scratch, &mut ZeroNoise).unwrap();
        assert!((q[0] - 0.1).abs() < 1e-15 && p[0] == 1.0);
        let dt = 0.1;
        let gamma = std::f64::consts::LN_2 / dt;
        let (mut q, mut p) = ([0.0], [1.0]);
        for k in 1..5 {
            baoab_step(&mut q, &mut p, &mut zero, gamma, dt, true, &mut scratch, &mut ZeroNoise).unwrap();
            assert!((p[0] - 0.5f64.powi(k)).abs() < 1e-14);
        }
    }

    #[test]
    fn streams_are_deterministic_and_independent() {
        let mut a = RngStream::new(42, 0);
        let mut b = RngStream::new(42, 0);
        let mut c = RngStream::new(42, 1);
        let n = 100_000;
        let (mut sab, mut saa, mut scc) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let (x, y, z) = (a.normal(), b.normal(), c.normal());
            assert_eq!(x.to_bits(), y.to_bits());
            sab += x * z;
            saa += x * x;
            scc += z * z;
        }
        let rho = sab / (saa * scc).sqrt();
        assert!(rho.abs() <= 0.05, "{rho}");
    }

    #[test]
    fn stepper_matches_scheme_choice() {
        let pot = PotentialSpec::preset("bessel1d", 1.0).unwrap();
        let lang = DynamicsSpec::new(Family::Langevin { gamma: 1.0 }, pot.clone(), ReactionCoordinate::projection(1)).unwrap();
        assert!(StepperConfig { dt: 0.01, scheme: Scheme::EulerMaruyama }.validate(&lang.family).is_err());
        let br = DynamicsSpec::new(Family::Brownian, pot, ReactionCoordinate::projection(1)).unwrap();
        assert!(StepperConfig { dt: 0.01, scheme: Scheme::Baoab }.validate(&br.family).is_err());
        assert!(Stepper::new(&br, 0.0).is_err());
        let mut st = Stepper::new(&br, 0.01).unwrap();
        let mut s = State { x: vec![0.25], aux: vec![] };
        st.step(&br, &ZeroBias { m: 1 }, &mut s, &mut ZeroNoise).unwrap();
        assert!((s.x[0] - (0.25 + 0.01 * 2.0 * std::f64::consts::PI)).abs() < 1e-12);
    }

    #[test]
    fn extended_stepper_wraps_both_parts() {
        let dynm = DynamicsSpec::new(
            Family::Extended { epsilon: 0.1 },
            PotentialSpec::preset("flat", 1.0).unwrap(),
            ReactionCoordinate::projection(1),
        )
        .unwrap();
        let mut st = Stepper::new(&dynm, 0.01).unwrap();
        let mut s = State { x: vec![0.99], aux: vec![0.01] };
        let mut rng = RngStream::new(1, 0);
        for _ in 0..1000 {
            st.step(&dynm, &ZeroBias { m: 1 }, &mut s, &mut rng).unwrap();
            assert!((0.0..1.0).contains(&s.x[0]) && (0.0..1.0).contains(&s.aux[0]));
        }
    }
}
