//! Potentials, reaction coordinates and the drift of the biased dynamics.

use crate::error::{AbpError, Result};
use crate::geometry::{displacement_scalar, wrap_scalar};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const TAU: f64 = 2.0 * PI;

/// Largest supported configuration dimension.
pub const MAX_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    Torus,
    Euclidean,
}

/// `coeff * prod_i cos(2 pi freqs[i] x_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineTerm {
    pub coeff: f64,
    pub freqs: Vec<i32>,
}

impl CosineTerm {
    pub fn new(coeff: f64, freqs: Vec<i32>) -> Self {
        Self { coeff, freqs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PotentialKind {
    /// Sum of cosine products on the torus.
    CosineSeries { dim: usize, terms: Vec<CosineTerm> },
    /// `stiffness/2 |x|^2` plus cosine products, on `R^d`.
    QuadraticCosine { dim: usize, stiffness: f64, terms: Vec<CosineTerm> },
    /// Periodic trigonometric interpolant of equispaced samples on `T^1`.
    Tabulated { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialSpec {
    kind: PotentialKind,
    beta: f64,
    #[serde(skip)]
    fourier: Option<Fourier>,
}

#[derive(Debug, Clone, PartialEq)]
struct Fourier {
    a0: f64,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Fourier {
    // real trigonometric interpolant through the samples; Nyquist mode kept as a cosine
    fn from_samples(v: &[f64]) -> Self {
        let g = v.len();
        let half = g / 2;
        let a0 = v.iter().sum::<f64>() / g as f64;
        let mut cos = vec![0.0; half];
        let mut sin = vec![0.0; half];
        for k in 1..=half {
            let (mut c, mut s) = (0.0, 0.0);
            for (j, &vj) in v.iter().enumerate() {
                let (sn, cs) = (TAU * ((k * j) % g) as f64 / g as f64).sin_cos();
                c += vj * cs;
                s += vj * sn;
            }
            let scale = if g % 2 == 0 && k == half { 1.0 } else { 2.0 };
            cos[k - 1] = scale * c / g as f64;
            sin[k - 1] = if scale == 1.0 { 0.0 } else { scale * s / g as f64 };
        }
        Self { a0, cos, sin }
    }

    fn eval(&self, x: f64) -> (f64, f64) {
        let (s1, c1) = (TAU * x).sin_cos();
        let (mut ck, mut sk) = (c1, s1);
        let (mut v, mut dv) = (self.a0, 0.0);
        for (k, (&a, &b)) in self.cos.iter().zip(&self.sin).enumerate() {
            let kf = (k + 1) as f64;
            v += a * ck + b * sk;
            dv += TAU * kf * (b * ck - a * sk);
            let next_c = ck * c1 - sk * s1;
            sk = sk * c1 + ck * s1;
            ck = next_c;
        }
        (v, dv)
    }
}

impl PotentialSpec {
    pub fn new(kind: PotentialKind, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(AbpError::invalid("potential", "beta must be positive"));
        }
        let check_terms = |dim: usize, terms: &[CosineTerm]| -> Result<()> {
            if dim == 0 || dim > MAX_DIM {
                return Err(AbpError::invalid("potential", format!("dimension must lie in 1..={MAX_DIM}")));
            }
            for t in terms {
                if t.freqs.len() != dim {
                    return Err(AbpError::invalid(
                        "potential",
                        format!("cosine term has {} frequencies for dimension {dim}", t.freqs.len()),
                    ));
                }
                if !t.coeff.is_finite() {
                    return Err(AbpError::invalid("potential", "non-finite coefficient"));
                }
            }
            Ok(())
        };
        let mut fourier = None;
        match &kind {
            PotentialKind::CosineSeries { dim, terms } => check_terms(*dim, terms)?,
            PotentialKind::QuadraticCosine { dim, stiffness, terms } => {
                check_terms(*dim, terms)?;
                if !(*stiffness > 0.0) {
                    return Err(AbpError::invalid("potential", "quadratic stiffness must be positive"));
                }
            }
            PotentialKind::Tabulated { values } => {
                if values.len() < 4 || values.iter().any(|v| !v.is_finite()) {
                    return Err(AbpError::invalid("potential", "tabulated potential needs >= 4 finite samples"));
                }
                fourier = Some(Fourier::from_samples(values));
            }
        }
        Ok(Self { kind, beta, fourier })
    }

    /// Named presets: `flat`, `bessel1d`, `double-well-1d`, `t2-coupled`, `ou`.
    pub fn preset(name: &str, beta: f64) -> Result<Self> {
        let kind = match name {
            "flat" => PotentialKind::CosineSeries { dim: 1, terms: vec![] },
            "bessel1d" => PotentialKind::CosineSeries { dim: 1, terms: vec![CosineTerm::new(1.0, vec![1])] },
            "double-well-1d" => {
                PotentialKind::CosineSeries { dim: 1, terms: vec![CosineTerm::new(2.0, vec![1])] }
            }
            "t2-coupled" => PotentialKind::CosineSeries {
                dim: 2,
                terms: vec![CosineTerm::new(2.0, vec![1, 0]), CosineTerm::new(0.5, vec![1, 1])],
            },
            "ou" => PotentialKind::QuadraticCosine { dim: 1, stiffness: 1.0, terms: vec![] },
            other => return Err(AbpError::invalid("potential", format!("unknown preset `{other}`"))),
        };
        Self::new(kind, beta)
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            PotentialKind::CosineSeries { dim, .. } | PotentialKind::QuadraticCosine { dim, .. } => *dim,
            PotentialKind::Tabulated { .. } => 1,
        }
    }

    pub fn space(&self) -> Space {
        match self.kind {
            PotentialKind::QuadraticCosine { .. } => Space::Euclidean,
            _ => Space::Torus,
        }
    }

    /// `beta * V(x)`.
    pub fn value(&self, x: &[f64]) -> f64 {
        let raw = match &self.kind {
            PotentialKind::CosineSeries { terms, .. } => cosine_value(terms, x),
            PotentialKind::QuadraticCosine { stiffness, terms, .. } => {
                0.5 * stiffness * x.iter().map(|v| v * v).sum::<f64>() + cosine_value(terms, x)
            }
            PotentialKind::Tabulated { .. } => self.fourier.as_ref().map_or(0.0, |f| f.eval(x[0]).0),
        };
        self.beta * raw
    }

    /// Writes `beta * grad V(x)` into `out`.
    pub fn grad(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        match &self.kind {
            PotentialKind::CosineSeries { terms, .. } => cosine_grad(terms, x, out),
            PotentialKind::QuadraticCosine { stiffness, terms, .. } => {
                cosine_grad(terms, x, out);
                for (g, &xi) in out.iter_mut().zip(x) {
                    *g += stiffness * xi;
                }
            }
            PotentialKind::Tabulated { .. } => {
                out[0] = self.fourier.as_ref().map_or(0.0, |f| f.eval(x[0]).1);
            }
        }
        for g in out.iter_mut() {
            *g *= self.beta;
        }
    }
}

fn cosine_value(terms: &[CosineTerm], x: &[f64]) -> f64 {
    terms
        .iter()
        .map(|t| {
            t.coeff
                * t.freqs
                    .iter()
                    .zip(x)
                    .map(|(&k, &xi)| if k == 0 { 1.0 } else { (TAU * k as f64 * xi).cos() })
                    .product::<f64>()
        })
        .sum()
}

fn cosine_grad(terms: &[CosineTerm], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    let mut c = [0.0; MAX_DIM];
    let mut s = [0.0; MAX_DIM];
    for t in terms {
        for i in 0..d {
            let k = t.freqs[i];
            if k == 0 {
                c[i] = 1.0;
                s[i] = 0.0;
            } else {
                let (sn, cs) = (TAU * k as f64 * x[i]).sin_cos();
                c[i] = cs;
                s[i] = sn;
            }
        }
        for i in 0..d {
            let k = t.freqs[i];
            if k == 0 {
                continue;
            }
            let mut prod = -TAU * k as f64 * s[i];
            for (j, &cj) in c[..d].iter().enumerate() {
                if j != i {
                    prod *= cj;
                }
            }
            out[i] += t.coeff * prod;
        }
    }
}

/// Coordinate projection `x -> (x_1, ..., x_m)` onto `T^m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReactionCoordinate {
    pub m: usize,
}

impl ReactionCoordinate {
    pub fn projection(m: usize) -> Self {
        Self { m }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (o, &xi) in out.iter_mut().zip(&x[..self.m]) {
            *o = wrap_scalar(xi);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Family {
    Brownian,
    Langevin { gamma: f64 },
    /// Extended state `(x, z)` coupled by `|xi(x) - z|^2 / (2 epsilon)`.
    Extended { epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicsSpec {
    pub family: Family,
    pub potential: PotentialSpec,
    pub xi: ReactionCoordinate,
}

/// Phase-space point: `x` is the configuration (or `q`), `aux` holds the
/// momenta for Langevin, the auxiliary variable `z` for the extended
/// family, and is empty for Brownian dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: Vec<f64>,
    pub aux: Vec<f64>,
}

impl State {
    pub fn len(&self) -> usize {
        self.x.len() + self.aux.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A bias `A` on `T^m` together with its gradient.
pub trait BiasFunction {
    fn cv_dim(&self) -> usize;
    fn value(&self, z: &[f64]) -> f64;
    fn gradient(&self, z: &[f64], out: &mut [f64]);
}

/// `A = 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroBias {
    pub m: usize,
}

impl BiasFunction for ZeroBias {
    fn cv_dim(&self) -> usize {
        self.m
    }
    fn value(&self, _z: &[f64]) -> f64 {
        0.0
    }
    fn gradient(&self, _z: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Bias given by closures, mostly for tests.
pub struct FnBias<V, G> {
    pub m: usize,
    pub value: V,
    pub gradient: G,
}

impl<V, G> BiasFunction for FnBias<V, G>
where
    V: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    fn cv_dim(&self) -> usize {
        self.m
    }
    fn value(&self, z: &[f64]) -> f64 {
        (self.value)(z)
    }
    fn gradient(&self, z: &[f64], out: &mut [f64]) {
        (self.gradient)(z, out)
    }
}

impl DynamicsSpec {
    pub fn new(family: Family, potential: PotentialSpec, xi: ReactionCoordinate) -> Result<Self> {
        let d = potential.dim();
        if xi.m == 0 || xi.m > d || xi.m > 2 {
            return Err(AbpError::invalid("reaction coordinate", format!("need 1 <= m <= min(d, 2), got m={} d={d}", xi.m)));
        }
        match family {
            Family::Langevin { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                return Err(AbpError::invalid("dynamics", "gamma must be positive"))
            }
            Family::Extended { epsilon } if !(epsilon > 0.0 && epsilon.is_finite()) => {
                return Err(AbpError::invalid("dynamics", "epsilon must be positive"))
            }
            _ => {}
        }
        Ok(Self { family, potential, xi })
    }

    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    pub fn cv_dim(&self) -> usize {
        self.xi.m
    }

    pub fn aux_len(&self) -> usize {
        match self.family {
            Family::Brownian => 0,
            Family::Langevin { .. } => self.dim(),
            Family::Extended { .. } => self.xi.m,
        }
    }

    pub fn state_len(&self) -> usize {
        self.dim() + self.aux_len()
    }

    pub fn check_state(&self, s: &State) -> Result<()> {
        if s.x.len() != self.dim() {
            return Err(AbpError::Dimension { expected: self.dim(), got: s.x.len() });
        }
        if s.aux.len() != self.aux_len() {
            return Err(AbpError::Dimension { expected: self.aux_len(), got: s.aux.len() });
        }
        Ok(())
    }

    /// Collective variable of the full state: `xi(x)`, `xi(q)` or `z`.
    #[inline]
    pub fn xi_state(&self, s: &State, out: &mut [f64]) {
        match self.family {
            Family::Extended { .. } => {
                for (o, &z) in out.iter_mut().zip(&s.aux) {
                    *o = wrap_scalar(z);
                }
            }
            _ => self.xi.eval(&s.x, out),
        }
    }

    /// Force on the configuration: `-grad V + grad xi^T grad A(xi)` for the
    /// Brownian and Langevin families. Writes `d` entries.
    #[inline]
    pub fn config_force<B: BiasFunction + ?Sized>(&self, bias: &B, x: &[f64], out: &mut [f64]) {
        self.potential.grad(x, out);
        let mut z = [0.0; 2];
        let mut g = [0.0; 2];
        let m = self.xi.m;
        self.xi.eval(x, &mut z[..m]);
        bias.gradient(&z[..m], &mut g[..m]);
        for i in 0..out.len() {
            out[i] = -out[i];
        }
        for i in 0..m {
            out[i] += g[i];
        }
    }

    /// Drift of the biased dynamics, laid out as `[x-part, aux-part]`.
    pub fn drift_into<B: BiasFunction + ?Sized>(&self, bias: &B, s: &State, out: &mut [f64]) {
        let d = self.dim();
        match self.family {
            Family::Brownian => self.config_force(bias, &s.x, &mut out[..d]),
            Family::Langevin { gamma } => {
                let (head, tail) = out.split_at_mut(d);
                head.copy_from_slice(&s.aux);
                self.config_force(bias, &s.x, tail);
                for (f, &p) in tail.iter_mut().zip(&s.aux) {
                    *f -= gamma * p;
                }
            }
            Family::Extended { epsilon } => {
                let m = self.xi.m;
                let (head, tail) = out.split_at_mut(d);
                self.potential.grad(&s.x, head);
                head.iter_mut().for_each(|g| *g = -*g);
                let mut g = [0.0; 2];
                bias.gradient(&s.aux, &mut g[..m]);
                for i in 0..m {
                    let delta = displacement_scalar(s.x[i], s.aux[i]);
                    head[i] -= delta / epsilon;
                    tail[i] = delta / epsilon + g[i];
                }
            }
        }
    }

    /// Checked drift; fails on dimension mismatch or a non-finite result.
    pub fn drift<B: BiasFunction + ?Sized>(&self, bias: &B, s: &State) -> Result<Vec<f64>> {
        self.check_state(s)?;
        if bias.cv_dim() != self.xi.m {
            return Err(AbpError::Dimension { expected: self.xi.m, got: bias.cv_dim() });
        }
        let mut out = vec![0.0; self.state_len()];
        self.drift_into(bias, s, &mut out);
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(AbpError::Blowup { step: 0, time: 0.0, detail: format!("drift component {i} is {}", out[i]) });
        }
        Ok(out)
    }

    /// Unbiased energy of the family: `V`, `V + |p|^2/2`, or `V + |xi(x)-z|^2/(2 eps)`.
    pub fn base_energy(&self, s: &State) -> f64 {
        let v = self.potential.value(&s.x);
        match self.family {
            Family::Brownian => v,
            Family::Langevin { .. } => v + 0.5 * s.aux.iter().map(|p| p * p).sum::<f64>(),
            Family::Extended { epsilon } => {
                let d2: f64 = (0..self.xi.m).map(|i| displacement_scalar(s.x[i], s.aux[i]).powi(2)).sum();
                v + d2 / (2.0 * epsilon)
            }
        }
    }

    /// `E(V)(s) - A(xi_S(s))`.
    pub fn total_energy<B: BiasFunction + ?Sized>(&self, bias: &B, s: &State) -> Result<f64> {
        self.check_state(s)?;
        let mut z = [0.0; 2];
        self.xi_state(s, &mut z[..self.xi.m]);
        Ok(self.base_energy(s) - bias.value(&z[..self.xi.m]))
    }

    /// Wraps the torus coordinates of a state in place.
    pub fn wrap_state(&self, s: &mut State) {
        if self.potential.space() == Space::Torus {
            s.x.iter_mut().for_each(|v| *v = wrap_scalar(*v));
        }
        if let Family::Extended { .. } = self.family {
            s.aux.iter_mut().for_each(|v| *v = wrap_scalar(*v));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brownian(p: PotentialSpec, m: usize) -> DynamicsSpec {
        DynamicsSpec::new(Family::Brownian, p, ReactionCoordinate::projection(m)).unwrap()
    }

    fn fd_check(p: &PotentialSpec, rng: &mut ChaCha8Rng) {
        let d = p.dim();
        for _ in 0..100 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut g = vec![0.0; d];
            p.grad(&x, &mut g);
            let h = 1e-5;
            for i in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (p.value(&xp) - p.value(&xm)) / (2.0 * h);
                let scale = g[i].abs().max(1.0);
                assert!((fd - g[i]).abs() / scale < 1e-6, "fd {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn preset_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for name in ["flat", "bessel1d", "double-well-1d", "t2-coupled", "ou"] {
            fd_check(&PotentialSpec::preset(name, 1.3).unwrap(), &mut rng);
        }
        let quad = PotentialSpec::new(
            PotentialKind::QuadraticCosine { dim: 2, stiffness: 0.7, terms: vec![CosineTerm::new(0.3, vec![2, 1])] },
            1.0,
        )
        .unwrap();
        fd_check(&quad, &mut rng);
        let tab: Vec<f64> = (0..32).map(|j| (TAU * j as f64 / 32.0).sin() + 0.2 * (3.0 * TAU * j as f64 / 32.0).cos()).collect();
        fd_check(&PotentialSpec::new(PotentialKind::Tabulated { values: tab }, 1.0).unwrap(), &mut rng);
    }

    #[test]
    fn tabulated_interpolates_samples_and_trig_polynomials() {
        let f = |x: f64| 0.5 + (TAU * x).cos() - 0.25 * (2.0 * TAU * x).sin() + 0.1 * (8.0 * TAU * x).cos();
        let g = 16;
        let vals: Vec<f64> = (0..g).map(|j| f(j as f64 / g as f64)).collect();
        let p = PotentialSpec::new(PotentialKind::Tabulated { values: vals.clone() }, 1.0).unwrap();
        for (j, v) in vals.iter().enumerate() {
            assert!((p.value(&[j as f64 / g as f64]) - v).abs() < 1e-12);
        }
        // band-limited below Nyquist: exact between nodes too
        let p2 = PotentialSpec::new(
            PotentialKind::Tabulated { values: (0..g).map(|j| f(j as f64 / g as f64) - 0.1 * (8.0 * TAU * j as f64 / g as f64).cos()).collect() },
            1.0,
        )
        .unwrap();
        for x in [0.013, 0.377, 0.91] {
            let want = f(x) - 0.1 * (8.0 * TAU * x).cos();
            assert!((p2.value(&[x]) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_scales_potential() {
        let p1 = PotentialSpec::preset("t2-coupled", 1.0).unwrap();
        let p2 = PotentialSpec::preset("t2-coupled", 2.5).unwrap();
        let x = [0.1, 0.7];
        assert!((p2.value(&x) - 2.5 * p1.value(&x)).abs() < 1e-14);
        assert!(PotentialSpec::preset("flat", 0.0).is_err());
    }

    #[test]
    fn brownian_drift_example() {
        let dynm = brownian(PotentialSpec::preset("bessel1d", 1.0).unwrap(), 1);
        let s = State { x: vec![0.25], aux: vec![] };
        let d = dynm.drift(&ZeroBias { m: 1 }, &s).unwrap();
        assert!((d[0] - TAU).abs() < 1e-12);
    }

    #[test]
    fn brownian_drift_adds_bias_gradient() {
        let dynm = brownian(PotentialSpec::preset("t2-coupled", 1.0).unwrap(), 1);
        let s = State { x: vec![0.3, 0.6], aux: vec![] };
        let bias = FnBias { m: 1, value: |z: &[f64]| z[0], gradient: |_z: &[f64], g: &mut [f64]| g[0] = 1.5 };
        let d0 = dynm.drift(&ZeroBias { m: 1 }, &s).unwrap();
        let d1 = dynm.drift(&bias, &s).unwrap();
        assert!((d1[0] - d0[0] - 1.5).abs() < 1e-14);
        assert_eq!(d1[1], d0[1]);
    }

    #[test]
    fn langevin_drift_example() {
        let dynm = DynamicsSpec::new(
            Family::Langevin { gamma: 1.0 },
            PotentialSpec::preset("flat", 1.0).unwrap(),
            ReactionCoordinate::projection(1),
        )
        .unwrap();
        let s = State { x: vec![0.3], aux: vec![2.0] };
        assert_eq!(dynm.drift(&ZeroBias { m: 1 }, &s).unwrap(), vec![2.0, -2.0]);
    }

    #[test]
    fn extended_drift_example_and_fd() {
        let dynm = DynamicsSpec::new(
            Family::Extended { epsilon: 0.5 },
            PotentialSpec::preset("flat", 1.0).unwrap(),
            ReactionCoordinate::projection(1),
        )
        .unwrap();
        let s = State { x: vec![0.2], aux: vec![0.3] };
        let d = dynm.drift(&ZeroBias { m: 1 }, &s).unwrap();
        assert!((d[0] - 0.2).abs() < 1e-12 && (d[1] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn extended_equals_brownian_on_extended_energy() {
        let pot = PotentialSpec::preset("t2-coupled", 1.0).unwrap();
        let eps = 0.3;
        let dynm =
            DynamicsSpec::new(Family::Extended { epsilon: eps }, pot, ReactionCoordinate::projection(1)).unwrap();
        let bias = FnBias {
            m: 1,
            value: |z: &[f64]| 0.4 * (TAU * z[0]).sin(),
            gradient: |z: &[f64], g: &mut [f64]| g[0] = 0.4 * TAU * (TAU * z[0]).cos(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let s = State {
                x: vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
                aux: vec![rng.random_range(0.0..1.0)],
            };
            let drift = dynm.drift(&bias, &s).unwrap();
            // Brownian drift of the potential U - A(z) on the product space
            let h = 1e-6;
            let energy = |s: &State| dynm.total_energy(&bias, s).unwrap();
            for k in 0..3 {
                let mut sp = s.clone();
                let mut sm = s.clone();
                if k < 2 {
                    sp.x[k] += h;
                    sm.x[k] -= h;
                } else {
                    sp.aux[0] += h;
                    sm.aux[0] -= h;
                }
                let fd = -(energy(&sp) - energy(&sm)) / (2.0 * h);
                assert!((fd - drift[k]).abs() < 1e-5, "component {k}: {fd} vs {}", drift[k]);
            }
        }
    }

    #[test]
    fn total_energy_examples() {
        let lang = DynamicsSpec::new(
            Family::Langevin { gamma: 1.0 },
            PotentialSpec::preset("flat", 1.0).unwrap(),
            ReactionCoordinate::projection(1),
        )
        .unwrap();
        let s = State { x: vec![0.1], aux: vec![3.0] };
        assert_eq!(lang.total_energy(&ZeroBias { m: 1 }, &s).unwrap(), 4.5);
        let b = brownian(PotentialSpec::preset("bessel1d", 1.0).unwrap(), 1);
        assert_eq!(b.total_energy(&ZeroBias { m: 1 }, &State { x: vec![0.0], aux: vec![] }).unwrap(), 1.0);
        let flat = brownian(PotentialSpec::preset("flat", 1.0).unwrap(), 1);
        let one = FnBias { m: 1, value: |_: &[f64]| 1.0, gradient: |_: &[f64], g: &mut [f64]| g[0] = 0.0 };
        assert_eq!(flat.total_energy(&one, &State { x: vec![0.77], aux: vec![] }).unwrap(), -1.0);
    }

    #[test]
    fn xi_state_examples() {
        let pot = PotentialSpec::preset("t2-coupled", 1.0).unwrap();
        let b = brownian(pot.clone(), 1);
        let mut z = [0.0];
        b.xi_state(&State { x: vec![0.7, 0.1], aux: vec![] }, &mut z);
        assert_eq!(z[0], 0.7);
        let l = DynamicsSpec::new(Family::Langevin { gamma: 1.0 }, pot.clone(), ReactionCoordinate::projection(1)).unwrap();
        l.xi_state(&State { x: vec![0.7, 0.1], aux: vec![5.0, -2.0] }, &mut z);
        assert_eq!(z[0], 0.7);
        let e = DynamicsSpec::new(Family::Extended { epsilon: 0.1 }, pot, ReactionCoordinate::projection(1)).unwrap();
        e.xi_state(&State { x: vec![0.7, 0.1], aux: vec![0.42] }, &mut z);
        assert_eq!(z[0], 0.42);
    }

    #[test]
    fn rejects_bad_specs() {
        let pot = PotentialSpec::preset("bessel1d", 1.0).unwrap();
        assert!(DynamicsSpec::new(Family::Brownian, pot.clone(), ReactionCoordinate::projection(2)).is_err());
        assert!(DynamicsSpec::new(Family::Langevin { gamma: 0.0 }, pot.clone(), ReactionCoordinate::projection(1)).is_err());
        assert!(DynamicsSpec::new(Family::Extended { epsilon: -1.0 }, pot, ReactionCoordinate::projection(1)).is_err());
        assert!(PotentialSpec::new(PotentialKind::CosineSeries { dim: 1, terms: vec![CosineTerm::new(1.0, vec![1, 1])] }, 1.0).is_err());
        assert!(PotentialSpec::preset("nope", 1.0).is_err());
    }
}
