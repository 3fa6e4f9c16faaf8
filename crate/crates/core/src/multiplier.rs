//! Fourier multipliers `P`, `E`, `Q` and checks of their approximate identities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MultiplierError, ProfileError};
use crate::harness::{run_sweep, SweepReport, SweepSettings, THRESHOLD_1_2, THRESHOLD_3_2};
use crate::model::{symbol_from, CMat, CVec, SystemModel};
use crate::par_map;
use crate::phase::{Local, PhaseField};
use crate::profile::{Profile, Shape, SpectrumIndex};
use crate::C64;

/// Coefficient of `E` on indices outside every `Sigma_mu`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutsideRule {
    #[default]
    Identity,
    Zero,
}

#[derive(Clone, Debug)]
pub enum Multiplier {
    Identity,
    Zero,
    /// Principal symbol evaluated at `dPsi`.
    P,
    /// Cut-off projector onto the polarization of each phase.
    E {
        outside: OutsideRule,
    },
    /// Partial inverse of `P`, frozen on the rays.
    Q,
    /// `base + amplitude * s^(k+1) * omega * direction` on each `Sigma_mu`.
    Perturbed {
        base: Box<Multiplier>,
        k: u32,
        amplitude: f64,
        direction: CMat,
    },
}

impl Multiplier {
    pub fn tag(&self) -> &'static str {
        match self {
            Multiplier::Identity => "I",
            Multiplier::Zero => "0",
            Multiplier::P => "P",
            Multiplier::E { .. } => "E",
            Multiplier::Q => "Q",
            Multiplier::Perturbed { .. } => "custom",
        }
    }

    /// Taylor-equivalence degree of the class this multiplier represents.
    pub fn degree(&self) -> Option<u32> {
        match self {
            Multiplier::E { .. } => Some(2),
            Multiplier::Q => Some(0),
            Multiplier::Perturbed { k, .. } => Some(*k),
            _ => None,
        }
    }

    pub fn perturb(self, k: u32, amplitude: f64, direction: CMat) -> Multiplier {
        Multiplier::Perturbed { base: Box::new(self), k, amplitude, direction }
    }

    pub fn coefficient(&self, local: &Local, idx: &SpectrumIndex) -> Result<CMat, MultiplierError> {
        let n = local.a0.nrows();
        Ok(match self {
            Multiplier::Identity => CMat::identity(n, n),
            Multiplier::Zero => CMat::zeros(n, n),
            Multiplier::P => {
                let (tau, xi) = dpsi(local, idx);
                symbol_from(&local.a0, tau, xi)
            }
            Multiplier::E { outside } => match idx.mode() {
                Some(mu) => match &local.modes[mu].chart {
                    Some(c) => &local.eig.proj[c.branch] * C64::new(c.omega, 0.0),
                    None => CMat::zeros(n, n),
                },
                None => match outside {
                    OutsideRule::Identity => CMat::identity(n, n),
                    OutsideRule::Zero => CMat::zeros(n, n),
                },
            },
            Multiplier::Q => q_coefficient(local, idx)?,
            Multiplier::Perturbed { base, k, amplitude, direction } => {
                let mut c = base.coefficient(local, idx)?;
                if let Some(ch) = idx.mode().and_then(|mu| local.modes[mu].chart.as_ref()) {
                    c += direction * C64::new(amplitude * ch.s.powi(*k as i32 + 1) * ch.omega, 0.0);
                }
                c
            }
        })
    }

    /// Index-wise matrix times vector.
    pub fn apply(&self, local: &Local, u: &Profile) -> Result<Profile, MultiplierError> {
        let n = local.a0.nrows();
        if u.shape != Shape::Vector(n) {
            return Err(ProfileError::ShapeMismatch(format!("expected vector of length {n}")).into());
        }
        let mut out = Profile::new(u.m, u.gmax, u.shape);
        for (idx, c) in &u.terms {
            let m = self.coefficient(local, idx)?;
            let v = m * CVec::from_column_slice(c);
            out.terms.insert(idx.clone(), v.as_slice().to_vec());
        }
        Ok(out)
    }
}

/// `(d_t Psi, d_x Psi)` for the index at the point.
pub fn dpsi(local: &Local, idx: &SpectrumIndex) -> (C64, C64) {
    let mut tau = C64::new(0.0, 0.0);
    let mut xi = C64::new(0.0, 0.0);
    for (mu, pl) in local.modes.iter().enumerate() {
        let (g, c) = (idx.g[mu] as f64, idx.gamma[mu] as f64);
        tau += C64::new(g * pl.phi_t.re, c * pl.phi_t.im);
        xi += C64::new(g * pl.phi_x.re, c * pl.phi_x.im);
    }
    (tau, xi)
}

fn q_coefficient(local: &Local, idx: &SpectrumIndex) -> Result<CMat, MultiplierError> {
    let n = local.a0.nrows();
    let mut out = CMat::zeros(n, n);
    let Some(mu) = idx.mode() else { return Ok(out) };
    let g = idx.g[mu];
    if g == 0 {
        return Ok(out);
    }
    let Some(ch) = &local.modes[mu].chart else { return Ok(out) };
    let eig = &ch.jet.eig;
    let bound = eig.min_gap() * g.unsigned_abs() as f64 * ch.jet.xi.abs() / 2.0;
    for l in 0..n {
        if l == ch.branch {
            continue;
        }
        let v = g as f64 * ch.jet.xi * (eig.lambda[l] - eig.lambda[ch.branch]);
        if v.abs() < bound {
            return Err(MultiplierError::SmallDivisor { value: v.abs(), bound });
        }
        out += &eig.proj[l] * C64::new(1.0 / v, 0.0);
    }
    Ok(out * C64::new(0.0, -ch.omega))
}

/// Certified separation and coherence data on the ray nodes.
#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    /// `min |V_l Psi|` over ray nodes, `l != l(mu)`, `1 <= g <= gamma <= G`.
    pub c_min: f64,
    /// `delta_gap * min |d_x Re phi|`.
    pub separation_bound: f64,
    /// `max |det sigma(dPsi)| / |(g,gamma)|^n` over the same set.
    pub max_det: f64,
}

pub fn certify(model: &SystemModel, field: &PhaseField, gmax: u32) -> Result<Certificate, MultiplierError> {
    let m = field.modes.len();
    let mut c_min = f64::INFINITY;
    let mut sep = f64::INFINITY;
    let mut max_det: f64 = 0.0;
    for (mu, mode) in field.modes.iter().enumerate() {
        for ray in &mode.rays {
            for (k, &t) in ray.t.iter().enumerate() {
                let x = ray.y[k][0];
                let local = field.local(model, t, x)?;
                let xi = local.modes[mu].phi_x.re;
                sep = sep.min(local.eig.min_gap() * xi.abs());
                for gamma in 1..=gmax {
                    for g in 1..=gamma as i32 {
                        let idx = SpectrumIndex::single(m, mu, g, gamma);
                        let (tau, xi) = dpsi(&local, &idx);
                        for (l, lam) in local.eig.lambda.iter().enumerate() {
                            if l != mode.branch {
                                c_min = c_min.min((tau + xi * lam).norm());
                            }
                        }
                        let det = symbol_from(&local.a0, tau, xi).determinant().norm();
                        max_det = max_det.max(det / idx.magnitude().powi(model.n as i32));
                    }
                }
            }
        }
    }
    Ok(Certificate { c_min, separation_bound: sep, max_det })
}

/// Random oscillatory test profile on all `Sigma_mu`, plus one mixed index when `m >= 2`.
pub fn test_profile(m: usize, n: usize, gmax: u32, seed: u64) -> Profile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Profile::new(m, gmax, Shape::Vector(n));
    for mu in 0..m {
        p = p.add(&Profile::random_mode(&mut rng, m, mu, gmax, Shape::Vector(n), 8.0)).expect("same shape");
    }
    if m >= 2 {
        let idx = SpectrumIndex { g: vec![1; m], gamma: vec![1; m] };
        let w = (1.0 + idx.magnitude()).powf(-8.0);
        let c: Vec<C64> = (0..n).map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * w).collect();
        p.terms.insert(idx, c);
    }
    p
}

/// Seeded matrix used as the direction of class perturbations.
pub fn perturbation_direction(n: usize, seed: u64) -> CMat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    CMat::from_fn(n, n, |_, _| C64::new(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0))
}

/// Per-point data: a defect profile and the phases to evaluate it at.
pub type DefectSample = (Profile, Vec<C64>);

pub fn defect_samples(
    model: &SystemModel,
    field: &PhaseField,
    points: &[(f64, f64)],
    defect: impl Fn(&Local) -> Result<Profile, MultiplierError> + Sync + Send,
) -> Result<Vec<DefectSample>, MultiplierError> {
    par_map(points, |&(t, x)| {
        let local = field.local(model, t, x)?;
        Ok((defect(&local)?, local.phases()))
    })
    .into_iter()
    .collect()
}

/// Number of real-torus translates over which defect suprema are taken.
pub const TRANSLATES: usize = 8;

/// Largest value of `|P(phi/eps + theta0)|` over `TRANSLATES` shifts `theta0` of all real angles.
pub fn translated_sup(p: &Profile, phases: &[C64], eps: f64) -> f64 {
    (0..TRANSLATES)
        .map(|j| {
            let shift = eps * std::f64::consts::TAU * j as f64 / TRANSLATES as f64;
            let ph: Vec<C64> = phases.iter().map(|z| z + shift).collect();
            p.evaluate(&ph, eps).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max)
}

pub fn sweep_defect(
    label: &str,
    settings: &SweepSettings,
    exponent: f64,
    threshold: f64,
    samples: &[DefectSample],
) -> SweepReport {
    run_sweep(label, settings, exponent, threshold, samples, |(p, ph), eps| translated_sup(p, ph, eps))
}

fn combine(
    u: &Profile,
    f: impl Fn(&SpectrumIndex) -> Result<CMat, MultiplierError>,
) -> Result<Profile, MultiplierError> {
    let mut out = Profile::new(u.m, u.gmax, u.shape);
    for (idx, c) in &u.terms {
        let v = f(idx)? * CVec::from_column_slice(c);
        out.terms.insert(idx.clone(), v.as_slice().to_vec());
    }
    Ok(out)
}

/// Settings shared by the identity and class-stability sweeps.
#[derive(Clone, Debug)]
pub struct IdentitySetup {
    pub outside: OutsideRule,
    pub amplitude: f64,
    pub seed: u64,
    pub gmax: u32,
}

/// Sweeps of `E~^2 - E~`, `PE`, `EP`, `PQ - (I - E)`, `QP - (I - E)`, where `E~` is the
/// generic degree-2 member `E + amplitude s^3 omega M`.
pub fn verify_operator_identities(
    model: &SystemModel,
    field: &PhaseField,
    points: &[(f64, f64)],
    setup: &IdentitySetup,
    settings: &SweepSettings,
) -> Result<Vec<SweepReport>, MultiplierError> {
    let n = model.n;
    let u = test_profile(field.modes.len(), n, setup.gmax, setup.seed);
    let e = Multiplier::E { outside: setup.outside };
    let eg = e.clone().perturb(2, setup.amplitude, perturbation_direction(n, setup.seed));
    let p = Multiplier::P;
    let q = Multiplier::Q;
    let id = CMat::identity(n, n);
    type Defect<'a> = Box<dyn Fn(&Local, &SpectrumIndex) -> Result<CMat, MultiplierError> + Sync + Send + 'a>;
    let defects: Vec<(&str, f64, f64, Defect)> = vec![
        (
            "E^2-E",
            1.5,
            THRESHOLD_3_2,
            Box::new(|l, i| {
                let c = eg.coefficient(l, i)?;
                Ok(&c * &c - &c)
            }),
        ),
        ("PE", 1.5, THRESHOLD_3_2, Box::new(|l, i| Ok(p.coefficient(l, i)? * e.coefficient(l, i)?))),
        ("EP", 1.5, THRESHOLD_3_2, Box::new(|l, i| Ok(e.coefficient(l, i)? * p.coefficient(l, i)?))),
        (
            "PQ-(I-E)",
            0.5,
            THRESHOLD_1_2,
            Box::new(|l, i| Ok(p.coefficient(l, i)? * q.coefficient(l, i)? - (&id - e.coefficient(l, i)?))),
        ),
        (
            "QP-(I-E)",
            0.5,
            THRESHOLD_1_2,
            Box::new(|l, i| Ok(q.coefficient(l, i)? * p.coefficient(l, i)? - (&id - e.coefficient(l, i)?))),
        ),
    ];
    let mut reports = Vec::new();
    for (label, exponent, threshold, d) in &defects {
        let samples = defect_samples(model, field, points, |l| combine(&u, |i| d(l, i)))?;
        reports.push(sweep_defect(label, settings, *exponent, *threshold, &samples));
    }
    Ok(reports)
}

/// Sweep of `(A - A~) U` where `A~` is `A` perturbed within its degree-`k` class.
pub fn class_stability_sweep(
    model: &SystemModel,
    field: &PhaseField,
    points: &[(f64, f64)],
    base: &Multiplier,
    k: u32,
    setup: &IdentitySetup,
    settings: &SweepSettings,
) -> Result<SweepReport, MultiplierError> {
    let n = model.n;
    let u = test_profile(field.modes.len(), n, setup.gmax, setup.seed);
    let pert = base.clone().perturb(k, setup.amplitude, perturbation_direction(n, setup.seed));
    let samples = defect_samples(model, field, points, |l| {
        combine(&u, |i| Ok(base.coefficient(l, i)? - pert.coefficient(l, i)?))
    })?;
    let label = format!("class k={k} ({})", base.tag());
    let threshold = if k == 0 { THRESHOLD_1_2 } else { (k as f64 + 1.0) / 2.0 - 0.1 };
    Ok(sweep_defect(&label, settings, (k as f64 + 1.0) / 2.0, threshold, &samples))
}
