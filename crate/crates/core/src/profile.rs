//! Truncated profiles: sparse series over the bi-indexed spectrum
//! `(g, gamma)` with `|g_mu| <= gamma_mu`, harmonics `exp(i<g,theta> - <gamma,r>)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;

use crate::error::ProfileError;
use crate::C64;

/// Default truncation bound on every `gamma_mu`.
pub const DEFAULT_G: u32 = 8;
/// Terms with `<gamma, chi>/eps` above this are skipped during evaluation.
pub const UNDERFLOW_GUARD: f64 = 46.0;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpectrumIndex {
    pub g: Vec<i32>,
    pub gamma: Vec<u32>,
}

impl SpectrumIndex {
    pub fn new(g: Vec<i32>, gamma: Vec<u32>) -> Option<SpectrumIndex> {
        let idx = SpectrumIndex { g, gamma };
        idx.is_valid().then_some(idx)
    }

    pub fn zero(m: usize) -> SpectrumIndex {
        SpectrumIndex { g: vec![0; m], gamma: vec![0; m] }
    }

    /// `g = gamma = e_mu`.
    pub fn fundamental(m: usize, mu: usize) -> SpectrumIndex {
        SpectrumIndex::single(m, mu, 1, 1)
    }

    /// Index supported on mode `mu` only.
    pub fn single(m: usize, mu: usize, g: i32, gamma: u32) -> SpectrumIndex {
        let mut idx = SpectrumIndex::zero(m);
        idx.g[mu] = g;
        idx.gamma[mu] = gamma;
        idx
    }

    pub fn m(&self) -> usize {
        self.g.len()
    }

    pub fn is_valid(&self) -> bool {
        self.g.len() == self.gamma.len() && self.g.iter().zip(&self.gamma).all(|(g, c)| g.unsigned_abs() <= *c)
    }

    pub fn is_oscillatory(&self) -> bool {
        self.g.iter().any(|&g| g != 0)
    }

    /// The unique mode with nonzero `gamma`, if any.
    pub fn mode(&self) -> Option<usize> {
        let mut found = None;
        for (mu, &c) in self.gamma.iter().enumerate() {
            if c > 0 {
                if found.is_some() {
                    return None;
                }
                found = Some(mu);
            }
        }
        found
    }

    pub fn in_sigma_mu(&self, mu: usize) -> bool {
        self.mode() == Some(mu)
    }

    pub fn magnitude(&self) -> f64 {
        self.g
            .iter()
            .map(|&g| (g as f64).powi(2))
            .chain(self.gamma.iter().map(|&c| (c as f64).powi(2)))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_gamma(&self) -> u32 {
        self.gamma.iter().copied().max().unwrap_or(0)
    }

    pub fn combine(&self, other: &SpectrumIndex) -> SpectrumIndex {
        SpectrumIndex {
            g: self.g.iter().zip(&other.g).map(|(a, b)| a + b).collect(),
            gamma: self.gamma.iter().zip(&other.gamma).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn conjugate(&self) -> SpectrumIndex {
        SpectrumIndex { g: self.g.iter().map(|g| -g).collect(), gamma: self.gamma.clone() }
    }

    /// `Psi(g, gamma; phi) = <g, Re phi> + i <gamma, Im phi>`.
    pub fn psi(&self, phases: &[C64]) -> C64 {
        let mut re = 0.0;
        let mut im = 0.0;
        for (mu, ph) in phases.iter().enumerate() {
            re += self.g[mu] as f64 * ph.re;
            im += self.gamma[mu] as f64 * ph.im;
        }
        C64::new(re, im)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
    /// Square matrix stored row-major.
    Matrix(usize),
}

impl Shape {
    pub fn len(self) -> usize {
        match self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(n) => n * n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Keep {
    Full,
    Oscillatory,
}

fn product_shape(a: Shape, b: Shape) -> Result<Shape, ProfileError> {
    match (a, b) {
        (Shape::Scalar, s) | (s, Shape::Scalar) => Ok(s),
        (Shape::Matrix(n), Shape::Vector(k)) if n == k => Ok(Shape::Vector(n)),
        (Shape::Matrix(n), Shape::Matrix(k)) if n == k => Ok(Shape::Matrix(n)),
        (Shape::Vector(n), Shape::Vector(k)) if n == k => Ok(Shape::Vector(n)),
        _ => Err(ProfileError::ShapeMismatch(format!("{a:?} * {b:?}"))),
    }
}

fn mul_coeff(sa: Shape, a: &[C64], sb: Shape, b: &[C64], out: &mut [C64]) {
    match (sa, sb) {
        (Shape::Scalar, _) => {
            for (o, y) in out.iter_mut().zip(b) {
                *o += a[0] * y;
            }
        }
        (_, Shape::Scalar) => {
            for (o, y) in out.iter_mut().zip(a) {
                *o += y * b[0];
            }
        }
        (Shape::Matrix(n), Shape::Vector(_)) => {
            for i in 0..n {
                let mut acc = C64::new(0.0, 0.0);
                for j in 0..n {
                    acc += a[i * n + j] * b[j];
                }
                out[i] += acc;
            }
        }
        (Shape::Matrix(n), Shape::Matrix(_)) => {
            for i in 0..n {
                for k in 0..n {
                    let mut acc = C64::new(0.0, 0.0);
                    for j in 0..n {
                        acc += a[i * n + j] * b[j * n + k];
                    }
                    out[i * n + k] += acc;
                }
            }
        }
        (Shape::Vector(_), Shape::Vector(_)) => {
            for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                *o += x * y;
            }
        }
        _ => unreachable!("shape checked by product_shape"),
    }
}

fn coeff_norm(c: &[C64]) -> f64 {
    c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Truncated profile; coefficients are values of the coefficient fields at
/// one point of the `(t, x)` domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    pub m: usize,
    pub gmax: u32,
    pub shape: Shape,
    pub terms: BTreeMap<SpectrumIndex, Vec<C64>>,
}

impl Profile {
    pub fn new(m: usize, gmax: u32, shape: Shape) -> Profile {
        Profile { m, gmax, shape, terms: BTreeMap::new() }
    }

    pub fn single(m: usize, gmax: u32, shape: Shape, idx: SpectrumIndex, coeff: Vec<C64>) -> Profile {
        let mut p = Profile::new(m, gmax, shape);
        p.accumulate(idx, &coeff);
        p
    }

    /// Add `coeff` at `idx`; indices beyond the truncation bound are dropped.
    pub fn accumulate(&mut self, idx: SpectrumIndex, coeff: &[C64]) {
        debug_assert!(idx.is_valid(), "index outside the spectrum");
        debug_assert_eq!(coeff.len(), self.shape.len());
        if idx.max_gamma() > self.gmax {
            return;
        }
        let slot = self.terms.entry(idx).or_insert_with(|| vec![C64::new(0.0, 0.0); coeff.len()]);
        for (s, c) in slot.iter_mut().zip(coeff) {
            *s += c;
        }
    }

    pub fn get(&self, idx: &SpectrumIndex) -> Option<&[C64]> {
        self.terms.get(idx).map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    fn check_compatible(&self, other: &Profile) -> Result<(), ProfileError> {
        if self.m != other.m || self.shape != other.shape {
            return Err(ProfileError::ShapeMismatch(format!(
                "m={} {:?} vs m={} {:?}",
                self.m, self.shape, other.m, other.shape
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Profile) -> Result<Profile, ProfileError> {
        self.axpy(C64::new(1.0, 0.0), other)
    }

    pub fn sub(&self, other: &Profile) -> Result<Profile, ProfileError> {
        self.axpy(C64::new(-1.0, 0.0), other)
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: C64, other: &Profile) -> Result<Profile, ProfileError> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        for (idx, c) in &other.terms {
            let scaled: Vec<C64> = c.iter().map(|z| a * z).collect();
            out.accumulate(idx.clone(), &scaled);
        }
        Ok(out)
    }

    pub fn scale(&self, a: C64) -> Profile {
        self.map(|_, c| c.iter().map(|z| a * z).collect())
    }

    /// Index-wise map keeping the shape.
    pub fn map(&self, f: impl Fn(&SpectrumIndex, &[C64]) -> Vec<C64>) -> Profile {
        let mut out = Profile::new(self.m, self.gmax, self.shape);
        for (idx, c) in &self.terms {
            out.terms.insert(idx.clone(), f(idx, c));
        }
        out
    }

    /// Scalar profile of vector component `k`.
    pub fn component(&self, k: usize) -> Profile {
        let mut out = Profile::new(self.m, self.gmax, Shape::Scalar);
        for (idx, c) in &self.terms {
            out.terms.insert(idx.clone(), vec![c[k]]);
        }
        out
    }

    pub fn retain(&mut self, f: impl Fn(&SpectrumIndex) -> bool) {
        self.terms.retain(|idx, _| f(idx));
    }

    /// Remove coefficients whose norm is exactly zero.
    pub fn prune(&mut self) {
        self.terms.retain(|_, c| c.iter().any(|z| *z != C64::new(0.0, 0.0)));
    }

    /// Convolution product with truncation; returns the product and the
    /// zero-frequency mass (sum over `g = 0` indices of the coefficient sup-norm).
    pub fn product(&self, other: &Profile, keep: Keep) -> Result<(Profile, f64), ProfileError> {
        if self.m != other.m {
            return Err(ProfileError::ShapeMismatch(format!("m={} vs m={}", self.m, other.m)));
        }
        let shape = product_shape(self.shape, other.shape)?;
        let gmax = self.gmax.min(other.gmax);
        let mut out = Profile::new(self.m, gmax, shape);
        let len = shape.len();
        for (i1, c1) in &self.terms {
            for (i2, c2) in &other.terms {
                let idx = i1.combine(i2);
                if idx.max_gamma() > gmax {
                    continue;
                }
                let slot = out.terms.entry(idx).or_insert_with(|| vec![C64::new(0.0, 0.0); len]);
                mul_coeff(self.shape, c1, other.shape, c2, slot);
            }
        }
        debug_assert!(out.terms.keys().all(SpectrumIndex::is_valid));
        let mass = out.zero_frequency_mass();
        if keep == Keep::Oscillatory {
            out.retain(SpectrumIndex::is_oscillatory);
        }
        Ok((out, mass))
    }

    pub fn zero_frequency_mass(&self) -> f64 {
        self.terms
            .iter()
            .filter(|(idx, _)| !idx.is_oscillatory())
            .map(|(_, c)| c.iter().map(|z| z.norm()).fold(0.0, f64::max))
            .sum()
    }

    fn multiply_index(&self, f: impl Fn(&SpectrumIndex) -> C64) -> Profile {
        let mut out = self.map(|idx, c| {
            let w = f(idx);
            c.iter().map(|z| w * z).collect()
        });
        out.prune();
        out
    }

    /// `d/dz_mu`: multiply by `(i/2)(g_mu + gamma_mu)`.
    pub fn dz(&self, mu: usize) -> Profile {
        self.multiply_index(|idx| C64::new(0.0, 0.5 * (idx.g[mu] as f64 + idx.gamma[mu] as f64)))
    }

    /// `d/dzbar_mu`: multiply by `(i/2)(g_mu - gamma_mu)`.
    pub fn dzbar(&self, mu: usize) -> Profile {
        self.multiply_index(|idx| C64::new(0.0, 0.5 * (idx.g[mu] as f64 - idx.gamma[mu] as f64)))
    }

    /// `d/dtheta_mu`: multiply by `i g_mu`.
    pub fn dtheta(&self, mu: usize) -> Profile {
        self.multiply_index(|idx| C64::new(0.0, idx.g[mu] as f64))
    }

    /// Coefficients conjugated and `g` negated.
    pub fn conjugate(&self) -> Profile {
        let mut out = Profile::new(self.m, self.gmax, self.shape);
        for (idx, c) in &self.terms {
            out.terms.insert(idx.conjugate(), c.iter().map(|z| z.conj()).collect());
        }
        out
    }

    /// `sum_k c_k exp(i Psi_k / eps)` with `Psi = <g, Re phi> + i <gamma, Im phi>`.
    pub fn evaluate(&self, phases: &[C64], eps: f64) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.shape.len()];
        for (idx, c) in &self.terms {
            let psi = idx.psi(phases);
            let damp = psi.im / eps;
            if damp >= UNDERFLOW_GUARD - 1e-9 {
                continue;
            }
            let e = C64::new(-damp, psi.re / eps).exp();
            for (o, z) in out.iter_mut().zip(c) {
                *o += e * z;
            }
        }
        out
    }

    /// Largest coefficient norm.
    pub fn sup_norm(&self) -> f64 {
        self.terms.values().map(|c| coeff_norm(c)).fold(0.0, f64::max)
    }

    /// Euclidean norm over all stored coefficients.
    pub fn l2_norm(&self) -> f64 {
        self.terms.values().map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>()).sum::<f64>().sqrt()
    }

    /// Sum over indices of the coefficient norms.
    pub fn l1_norm(&self) -> f64 {
        self.terms.values().map(|c| coeff_norm(c)).sum()
    }

    /// Ratio of the largest coefficient at the truncation edge to the overall largest.
    pub fn tail_ratio(&self) -> f64 {
        let all = self.sup_norm();
        if all == 0.0 {
            return 0.0;
        }
        let edge = self
            .terms
            .iter()
            .filter(|(idx, _)| idx.max_gamma() == self.gmax)
            .map(|(_, c)| coeff_norm(c))
            .fold(0.0, f64::max);
        edge / all
    }

    /// Samples of `j U(theta, theta') = sum c exp(i<g,theta> + i<gamma,theta'>)`
    /// on a lattice with `lattice` points per circle; the last axis varies fastest
    /// and axes are ordered `theta_1..theta_m, theta'_1..theta'_m`.
    pub fn torus_samples(&self, lattice: usize) -> Vec<Vec<C64>> {
        let dims = 2 * self.m;
        let total = lattice.pow(dims as u32);
        let len = self.shape.len();
        let mut out = vec![vec![C64::new(0.0, 0.0); len]; total];
        let step = 2.0 * PI / lattice as f64;
        for (flat, slot) in out.iter_mut().enumerate() {
            let mut rem = flat;
            let mut angles = vec![0.0; dims];
            for a in (0..dims).rev() {
                angles[a] = (rem % lattice) as f64 * step;
                rem /= lattice;
            }
            for (idx, c) in &self.terms {
                let mut arg = 0.0;
                for mu in 0..self.m {
                    arg += idx.g[mu] as f64 * angles[mu] + idx.gamma[mu] as f64 * angles[self.m + mu];
                }
                let e = C64::new(0.0, arg).exp();
                for (s, z) in slot.iter_mut().zip(c) {
                    *s += e * z;
                }
            }
        }
        out
    }

    /// Random oscillatory profile on the indices of mode `mu` with coefficients
    /// of size `(1 + |(g,gamma)|)^(-decay)`.
    pub fn random_mode<R: Rng>(rng: &mut R, m: usize, mu: usize, gmax: u32, shape: Shape, decay: f64) -> Profile {
        let mut p = Profile::new(m, gmax, shape);
        for gamma in 1..=gmax {
            for g in -(gamma as i32)..=(gamma as i32) {
                if g == 0 {
                    continue;
                }
                let idx = SpectrumIndex::single(m, mu, g, gamma);
                let w = (1.0 + idx.magnitude()).powf(-decay);
                let c: Vec<C64> = (0..shape.len())
                    .map(|_| C64::new(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0) * w)
                    .collect();
                p.terms.insert(idx, c);
            }
        }
        p
    }
}

/// Result of coefficient recovery from torus samples.
#[derive(Clone, Debug)]
pub struct TorusCoefficients {
    pub profile: Profile,
    /// Non-oscillatory coefficients removed by the filter, with their norms.
    pub rejected: Vec<(SpectrumIndex, f64)>,
    /// Relative energy outside the admissible spectrum.
    pub alias_energy: f64,
}

/// Recover coefficients from samples of `j U` by a separable discrete Fourier transform.
pub fn coefficients_from_torus_samples(
    samples: &[Vec<C64>],
    m: usize,
    lattice: usize,
    shape: Shape,
    gmax: u32,
    oscillatory_only: bool,
) -> Result<TorusCoefficients, ProfileError> {
    let required = 2 * gmax as usize + 1;
    if lattice < required {
        return Err(ProfileError::LatticeTooSmall { size: lattice, required });
    }
    let dims = 2 * m;
    let total = lattice.pow(dims as u32);
    if samples.len() != total || samples.iter().any(|s| s.len() != shape.len()) {
        return Err(ProfileError::ShapeMismatch(format!("expected {total} samples of length {}", shape.len())));
    }
    let len = shape.len();
    let mut data: Vec<C64> = samples.iter().flat_map(|s| s.iter().copied()).collect();
    let twiddle: Vec<C64> = (0..lattice).map(|k| C64::new(0.0, -2.0 * PI * k as f64 / lattice as f64).exp()).collect();
    let mut line = vec![C64::new(0.0, 0.0); lattice];
    for axis in 0..dims {
        let stride = lattice.pow((dims - 1 - axis) as u32);
        for base in 0..total {
            if (base / stride) % lattice != 0 {
                continue;
            }
            for comp in 0..len {
                for (k, slot) in line.iter_mut().enumerate() {
                    let mut acc = C64::new(0.0, 0.0);
                    for j in 0..lattice {
                        acc += data[(base + j * stride) * len + comp] * twiddle[(j * k) % lattice];
                    }
                    *slot = acc / lattice as f64;
                }
                for (k, v) in line.iter().enumerate() {
                    data[(base + k * stride) * len + comp] = *v;
                }
            }
        }
    }
    let signed = |k: usize| -> i64 {
        if k <= lattice / 2 {
            k as i64
        } else {
            k as i64 - lattice as i64
        }
    };
    let mut profile = Profile::new(m, gmax, shape);
    let mut rejected = Vec::new();
    let mut energy = 0.0;
    let mut outside = 0.0;
    for flat in 0..total {
        let c = &data[flat * len..(flat + 1) * len];
        let e: f64 = c.iter().map(|z| z.norm_sqr()).sum();
        energy += e;
        let mut rem = flat;
        let mut freq = vec![0i64; dims];
        for a in (0..dims).rev() {
            freq[a] = signed(rem % lattice);
            rem /= lattice;
        }
        let admissible = (0..m).all(|mu| freq[m + mu] >= 0 && freq[mu].abs() <= freq[m + mu]);
        if !admissible {
            outside += e;
            continue;
        }
        if e <= 1e-28 {
            continue;
        }
        let idx = SpectrumIndex {
            g: freq[..m].iter().map(|&g| g as i32).collect(),
            gamma: freq[m..].iter().map(|&c| c as u32).collect(),
        };
        if oscillatory_only && !idx.is_oscillatory() {
            rejected.push((idx, e.sqrt()));
            continue;
        }
        profile.terms.insert(idx, c.to_vec());
    }
    let alias_energy = if energy > 0.0 { outside / energy } else { 0.0 };
    if alias_energy > 1e-20 && outside.sqrt() > 1e-12 {
        return Err(ProfileError::AliasingDetected { energy: alias_energy });
    }
    Ok(TorusCoefficients { profile, rejected, alias_energy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn harmonic(g: i32, gamma: u32, a: C64) -> Profile {
        Profile::single(1, DEFAULT_G, Shape::Scalar, SpectrumIndex::single(1, 0, g, gamma), vec![a])
    }

    /// Direct evaluation of the series at a complex torus point `z = theta + i r`.
    fn eval_at_z(p: &Profile, z: &[C64]) -> Vec<C64> {
        let mut out = vec![c(0.0, 0.0); p.shape.len()];
        for (idx, coeff) in &p.terms {
            let mut arg = c(0.0, 0.0);
            for mu in 0..p.m {
                arg += c(0.0, idx.g[mu] as f64 * z[mu].re) - idx.gamma[mu] as f64 * z[mu].im;
            }
            let e = arg.exp();
            for (o, v) in out.iter_mut().zip(coeff) {
                *o += e * v;
            }
        }
        out
    }

    fn random_profile(rng: &mut ChaCha8Rng, m: usize, terms: usize, max_gamma: u32, shape: Shape) -> Profile {
        let mut p = Profile::new(m, 40, shape);
        for _ in 0..terms {
            let gamma: Vec<u32> = (0..m).map(|_| rng.gen_range(0..=max_gamma)).collect();
            let g: Vec<i32> = gamma.iter().map(|&c| rng.gen_range(-(c as i32)..=(c as i32))).collect();
            let coeff: Vec<C64> = (0..shape.len()).map(|_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
            p.accumulate(SpectrumIndex::new(g, gamma).unwrap(), &coeff);
        }
        p
    }

    #[test]
    fn fundamental_squared() {
        let a = c(0.3, -0.2);
        let b = c(1.1, 0.4);
        let (p, mass) = harmonic(1, 1, a).product(&harmonic(1, 1, b), Keep::Full).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.get(&SpectrumIndex::single(1, 0, 2, 2)).unwrap()[0], a * b);
        assert_eq!(mass, 0.0);
    }

    #[test]
    fn rectification_reported_and_dropped() {
        let a = c(0.3, -0.2);
        let b = c(1.1, 0.4);
        let (full, mass) = harmonic(1, 1, a).product(&harmonic(-1, 1, b), Keep::Full).unwrap();
        assert!((mass - (a * b).norm()).abs() < 1e-15);
        assert!(full.get(&SpectrumIndex::single(1, 0, 0, 2)).is_some());
        let (osc, mass2) = harmonic(1, 1, a).product(&harmonic(-1, 1, b), Keep::Oscillatory).unwrap();
        assert!(osc.is_empty());
        assert_eq!(mass, mass2);
    }

    #[test]
    fn truncation_drops_high_gamma() {
        let mut p = harmonic(1, 5, c(1.0, 0.0));
        p.gmax = 8;
        let (q, _) = p.product(&p, Keep::Full).unwrap();
        assert!(q.is_empty());
    }

    #[test]
    fn derivative_examples() {
        let h = harmonic(1, 1, c(1.0, 0.0));
        assert_eq!(h.dz(0).get(&SpectrumIndex::single(1, 0, 1, 1)).unwrap()[0], c(0.0, 1.0));
        assert!(h.dzbar(0).is_empty());
        let a = harmonic(-1, 1, c(1.0, 0.0));
        assert_eq!(a.dzbar(0).get(&SpectrumIndex::single(1, 0, -1, 1)).unwrap()[0], c(0.0, -1.0));
        assert!(a.dz(0).is_empty());
    }

    #[test]
    fn shape_mismatch() {
        let v = Profile::new(1, 8, Shape::Vector(2));
        let w = Profile::new(1, 8, Shape::Vector(3));
        assert!(v.product(&w, Keep::Full).is_err());
        let mm = Profile::new(1, 8, Shape::Matrix(2));
        assert!(v.product(&mm, Keep::Full).is_err());
        assert!(mm.product(&v, Keep::Full).is_ok());
    }

    #[test]
    fn evaluation_on_and_off_ray() {
        let a = c(0.7, 0.2);
        let h = harmonic(1, 1, a);
        let eps = 0.1;
        let v = h.evaluate(&[c(0.4, 0.0)], eps)[0];
        assert!((v - a * c(0.0, 0.4 / eps).exp()).norm() < 1e-15);
        let far = h.evaluate(&[c(0.4, 46.0 * eps)], eps)[0];
        assert!(far.norm() <= a.norm() * 1e-20);
    }

    #[test]
    fn torus_single_harmonic() {
        let lattice = 17;
        let mut samples = Vec::new();
        for a in 0..lattice {
            for b in 0..lattice {
                let th = 2.0 * PI * a as f64 / lattice as f64;
                let thp = 2.0 * PI * b as f64 / lattice as f64;
                samples.push(vec![c(0.0, th + thp).exp()]);
            }
        }
        let res = coefficients_from_torus_samples(&samples, 1, lattice, Shape::Scalar, 8, true).unwrap();
        assert_eq!(res.profile.len(), 1);
        let v = res.profile.get(&SpectrumIndex::single(1, 0, 1, 1)).unwrap()[0];
        assert!((v - c(1.0, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn torus_rejects_non_oscillatory() {
        let lattice = 17;
        let mut samples = Vec::new();
        for _a in 0..lattice {
            for b in 0..lattice {
                let thp = 2.0 * PI * b as f64 / lattice as f64;
                samples.push(vec![c(0.0, thp).exp()]);
            }
        }
        let res = coefficients_from_torus_samples(&samples, 1, lattice, Shape::Scalar, 8, true).unwrap();
        assert!(res.profile.is_empty());
        assert_eq!(res.rejected.len(), 1);
        assert_eq!(res.rejected[0].0, SpectrumIndex::single(1, 0, 0, 1));
    }

    #[test]
    fn torus_detects_aliasing_and_small_lattice() {
        let lattice = 17;
        let mut samples = Vec::new();
        for a in 0..lattice {
            for _b in 0..lattice {
                let th = 2.0 * PI * a as f64 / lattice as f64;
                samples.push(vec![c(0.0, th).exp()]);
            }
        }
        assert!(matches!(
            coefficients_from_torus_samples(&samples, 1, lattice, Shape::Scalar, 8, true),
            Err(ProfileError::AliasingDetected { .. })
        ));
        assert!(matches!(
            coefficients_from_torus_samples(&samples, 1, lattice, Shape::Scalar, 9, true),
            Err(ProfileError::LatticeTooSmall { .. })
        ));
    }

    #[test]
    fn torus_round_trip_two_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = random_profile(&mut rng, 2, 6, 2, Shape::Vector(2));
        p.gmax = 2;
        let samples = p.torus_samples(5);
        let back = coefficients_from_torus_samples(&samples, 2, 5, Shape::Vector(2), 2, false).unwrap();
        for (idx, cf) in &p.terms {
            let got = back.profile.get(idx).unwrap();
            for (x, y) in cf.iter().zip(got) {
                assert!((x - y).norm() < 1e-12);
            }
        }
        assert_eq!(back.profile.len(), p.terms.values().filter(|c| c.iter().any(|z| z.norm() > 0.0)).count());
    }

    #[test]
    fn tail_ratio_reports_edge() {
        let mut p = harmonic(1, 1, c(1.0, 0.0));
        p.accumulate(SpectrumIndex::single(1, 0, 1, 8), &[c(1e-3, 0.0)]);
        assert!((p.tail_ratio() - 1e-3).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn product_evaluation_oracle(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_profile(&mut rng, 2, 5, 3, Shape::Scalar);
            let b = random_profile(&mut rng, 2, 5, 3, Shape::Vector(2));
            let (ab, _) = a.product(&b, Keep::Full).unwrap();
            for _ in 0..10 {
                let z = [c(rng.gen::<f64>() * 6.0, rng.gen::<f64>()), c(rng.gen::<f64>() * 6.0, rng.gen::<f64>())];
                let lhs = eval_at_z(&ab, &z);
                let ea = eval_at_z(&a, &z)[0];
                let eb = eval_at_z(&b, &z);
                for (l, r) in lhs.iter().zip(&eb) {
                    let r = ea * r;
                    prop_assert!((l - r).norm() <= 1e-10 * r.norm().max(1e-3));
                }
            }
        }

        #[test]
        fn leibniz_and_theta(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_profile(&mut rng, 1, 6, 4, Shape::Scalar);
            let b = random_profile(&mut rng, 1, 6, 4, Shape::Scalar);
            let (ab, _) = a.product(&b, Keep::Full).unwrap();
            let lhs = ab.dz(0);
            let (t1, _) = a.dz(0).product(&b, Keep::Full).unwrap();
            let (t2, _) = a.product(&b.dz(0), Keep::Full).unwrap();
            let rhs = t1.add(&t2).unwrap();
            let diff = lhs.sub(&rhs).unwrap();
            prop_assert!(diff.sup_norm() <= 1e-12);
            let th = a.dtheta(0).sub(&a.dz(0).add(&a.dzbar(0)).unwrap()).unwrap();
            prop_assert!(th.sup_norm() <= 1e-15);
            for idx in ab.terms.keys() {
                prop_assert!(idx.is_valid());
            }
        }

        #[test]
        fn conjugation_involution_and_evaluation(seed in 0u64..1000, vphi in -3.0f64..3.0, chi in 0.0f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_profile(&mut rng, 1, 6, 4, Shape::Vector(2));
            prop_assert_eq!(a.conjugate().conjugate(), a.clone());
            let eps = 0.3;
            let lhs = a.conjugate().evaluate(&[c(vphi, chi)], eps);
            let rhs = a.evaluate(&[c(vphi, chi)], eps);
            for (l, r) in lhs.iter().zip(&rhs) {
                prop_assert!((l - r.conj()).norm() < 1e-12);
            }
        }

        #[test]
        fn holomorphy_criterion(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_profile(&mut rng, 1, 6, 4, Shape::Scalar);
            let holo = a.map(|idx, cf| if idx.g[0] as u32 == idx.gamma[0] { cf.to_vec() } else { vec![c(0.0, 0.0)] });
            prop_assert!(holo.dzbar(0).is_empty());
            let has_other = a.terms.iter().any(|(idx, cf)| idx.g[0] as u32 != idx.gamma[0] && cf[0].norm() > 0.0);
            prop_assert_eq!(!a.dzbar(0).is_empty(), has_other);
        }
    }
}
