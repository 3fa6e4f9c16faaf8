//! Projected nonlinear transport of the leading profile along each ray.

use serde::{Deserialize, Serialize};

use crate::error::{ProfileError, TransportError};
use crate::expr::Monomial;
use crate::model::{eig_decompose, CMat, CVec, Mode, SystemModel};
use crate::par_map;
use crate::phase::{InitialPhaseData, PhaseField, RayPath};
use crate::profile::{coefficients_from_torus_samples, Keep, Profile, Shape, SpectrumIndex};
use crate::C64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportSettings {
    pub steps: usize,
    pub gmax: u32,
    pub tol: f64,
    pub max_iter: usize,
    pub rect_tol: f64,
    pub max_halvings: u32,
    pub polarization_tol: f64,
    pub energy_slack: f64,
}

impl Default for TransportSettings {
    fn default() -> Self {
        TransportSettings {
            steps: 400,
            gmax: crate::profile::DEFAULT_G,
            tol: 1e-10,
            max_iter: 40,
            rect_tol: 1e-12,
            max_halvings: 4,
            polarization_tol: 1e-10,
            energy_slack: 1.05,
        }
    }
}

/// Coefficient profile `H` at `t = 0` for ray `(mu, l)`: `h_mu(x0)` at the fundamental index.
pub fn initial_profile(
    model: &SystemModel,
    init: &InitialPhaseData,
    mu: usize,
    x0: f64,
    settings: &TransportSettings,
) -> Result<Profile, TransportError> {
    let md = &init.modes[mu];
    let h = CVec::from_vec(md.h_at(x0));
    let eig = eig_decompose(model, 0.0, x0)?;
    let residual = (&eig.proj[md.branch] * &h - &h).norm();
    if residual > settings.polarization_tol * h.norm().max(1.0) {
        return Err(TransportError::PolarizationViolated { residual });
    }
    let m = init.m();
    Ok(Profile::single(
        m,
        settings.gmax,
        Shape::Vector(model.n),
        SpectrumIndex::fundamental(m, mu),
        h.as_slice().to_vec(),
    ))
}

/// Nonlinear terms of the system with coefficients frozen at one point.
#[derive(Clone, Debug)]
pub enum PointTerms {
    /// `F(t, x, .)` as monomials with evaluated coefficients.
    Semilinear { f: Vec<Vec<(Monomial, C64)>> },
    /// `dA/du_k`, `dA/dconj(u_k)`, `dF/du`, `dF/dconj(u)` at `u0`, and `d_x u0`.
    Quasilinear { d: Vec<CMat>, dbar: Vec<CMat>, j: CMat, jbar: CMat, ux0: CVec },
}

/// Ray data at one time: position, frequency, projector and its derivative along the ray.
#[derive(Clone, Debug)]
pub struct RayFrame {
    pub t: f64,
    pub x: f64,
    pub xi: f64,
    pub mode: usize,
    pub proj: CMat,
    /// `d/dt pi(t, X(t))`.
    pub dproj: CMat,
    pub dxa_norm: f64,
    pub terms: PointTerms,
}

fn zero_vec(n: usize) -> Vec<C64> {
    vec![C64::new(0.0, 0.0); n]
}

/// Stack scalar component profiles into a vector profile.
fn assemble_vector(template: &Profile, n: usize, comps: &[Profile]) -> Profile {
    let mut out = Profile::new(template.m, template.gmax, Shape::Vector(n));
    for (j, c) in comps.iter().enumerate() {
        for (idx, v) in &c.terms {
            out.terms.entry(idx.clone()).or_insert_with(|| zero_vec(n))[j] += v[0];
        }
    }
    out
}

pub(crate) fn apply_matrix(mat: &CMat, u: &Profile) -> Profile {
    u.map(|_, c| (mat * CVec::from_column_slice(c)).as_slice().to_vec())
}

fn l1_norm_vec(p: &Profile, k: usize) -> f64 {
    p.terms.values().map(|c| c[k].norm()).sum()
}

fn monomial_factors(m: &Monomial) -> Vec<(usize, bool)> {
    let mut out = Vec::new();
    for k in 0..m.u.len() {
        out.extend(std::iter::repeat_n((k, false), m.u[k] as usize));
    }
    for k in 0..m.ubar.len() {
        out.extend(std::iter::repeat_n((k, true), m.ubar[k] as usize));
    }
    out
}

fn product_of(factors: &[&Profile], coeff: C64) -> Result<Profile, ProfileError> {
    let mut acc = factors[0].scale(coeff);
    for f in &factors[1..] {
        acc = acc.product(f, Keep::Full)?.0;
    }
    Ok(acc)
}

impl PointTerms {
    pub fn new(model: &SystemModel, t: f64, x: f64) -> PointTerms {
        let n = model.n;
        match model.mode {
            Mode::Semilinear => PointTerms::Semilinear {
                f: model
                    .f
                    .iter()
                    .map(|p| p.terms.iter().map(|(mono, c)| (mono.clone(), c.eval_tx(t, x))).collect())
                    .collect(),
            },
            Mode::Quasilinear => {
                let u0: Vec<C64> = model.u0_at(t, x).as_slice().to_vec();
                PointTerms::Quasilinear {
                    d: (0..n).map(|k| model.da_du(k, false, t, x, &u0)).collect(),
                    dbar: (0..n).map(|k| model.da_du(k, true, t, x, &u0)).collect(),
                    j: model.df_du(false, t, x, &u0),
                    jbar: model.df_du(true, t, x, &u0),
                    ux0: model.u0_dx(t, x),
                }
            }
        }
    }

    /// `F(U)` in the algebra; with `linear_in = Some(W)` one factor of every monomial is
    /// replaced by `W` (the first `u` factor, or the first conjugate factor if there is none).
    pub fn polynomial(&self, u: &Profile, linear_in: Option<&Profile>) -> Result<Profile, ProfileError> {
        let PointTerms::Semilinear { f } = self else {
            return Err(ProfileError::ShapeMismatch("polynomial form needs a semilinear system".into()));
        };
        let n = f.len();
        let ubar = u.conjugate();
        let comps_u: Vec<Profile> = (0..n).map(|k| u.component(k)).collect();
        let comps_ub: Vec<Profile> = (0..n).map(|k| ubar.component(k)).collect();
        let lin = linear_in.map(|w| {
            let wb = w.conjugate();
            ((0..n).map(|k| w.component(k)).collect::<Vec<_>>(), (0..n).map(|k| wb.component(k)).collect::<Vec<_>>())
        });
        let mut comps = Vec::with_capacity(n);
        for poly in f {
            let mut acc = Profile::new(u.m, u.gmax, Shape::Scalar);
            for (mono, c) in poly {
                let factors = monomial_factors(mono);
                if factors.is_empty() {
                    acc.accumulate(SpectrumIndex::zero(u.m), &[*c]);
                    continue;
                }
                let mut refs: Vec<&Profile> =
                    factors.iter().map(|&(k, conj)| if conj { &comps_ub[k] } else { &comps_u[k] }).collect();
                if let Some((wu, wb)) = &lin {
                    let (k, conj) = factors[0];
                    refs[0] = if conj { &wb[k] } else { &wu[k] };
                }
                acc = acc.add(&product_of(&refs, *c)?)?;
            }
            comps.push(acc);
        }
        Ok(assemble_vector(u, n, &comps))
    }

    /// `sum_k dA/du_k W_k + dA/dconj(u_k) conj(W)_k` as a matrix-valued profile.
    pub fn a_differential(&self, w: &Profile) -> Result<Profile, ProfileError> {
        let PointTerms::Quasilinear { d, dbar, .. } = self else {
            return Err(ProfileError::ShapeMismatch("A-differential needs a quasilinear system".into()));
        };
        let n = d.len();
        let wbar = w.conjugate();
        let mut out = Profile::new(w.m, w.gmax, Shape::Matrix(n));
        for (src, mats) in [(w, d), (&wbar, dbar)] {
            for (idx, v) in &src.terms {
                let slot = out.terms.entry(idx.clone()).or_insert_with(|| zero_vec(n * n));
                for (k, mk) in mats.iter().enumerate() {
                    if v[k] == C64::new(0.0, 0.0) {
                        continue;
                    }
                    for r in 0..n {
                        for c in 0..n {
                            slot[r * n + c] += mk[(r, c)] * v[k];
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// `(dA U + dA conj(U)) d_x u0 + dF U + dF conj(U)`.
    pub fn c_term(&self, u: &Profile) -> Result<Profile, ProfileError> {
        let PointTerms::Quasilinear { j, jbar, ux0, d, .. } = self else {
            return Err(ProfileError::ShapeMismatch("C term needs a quasilinear system".into()));
        };
        let n = d.len();
        let mu = self.a_differential(u)?;
        let mut c0 = Profile::new(u.m, u.gmax, Shape::Vector(n));
        for (idx, c) in &mu.terms {
            c0.terms.insert(idx.clone(), (CMat::from_row_slice(n, n, c) * ux0).as_slice().to_vec());
        }
        c0.add(&apply_matrix(j, u))?.add(&apply_matrix(jbar, &u.conjugate()))
    }
}

impl RayFrame {
    pub fn new(model: &SystemModel, ray: &RayPath, mode: usize, t: f64) -> Result<RayFrame, TransportError> {
        let jet = ray.jet(model, t)?;
        let (x, l) = (jet.x, ray.branch);
        let lam = jet.eig.lambda[l];
        let dir = model.a0_dt(t, x) + model.a0_dx(t, x) * C64::new(lam, 0.0);
        let dproj = jet.eig.projector_derivative(&dir).swap_remove(l);
        Ok(RayFrame {
            t,
            x,
            xi: jet.xi,
            mode,
            proj: jet.eig.proj[l].clone(),
            dproj,
            dxa_norm: model.a0_dx(t, x).norm(),
            terms: PointTerms::new(model, t, x),
        })
    }

    fn n(&self) -> usize {
        self.proj.nrows()
    }

    fn burgers(&self, v: &Profile, u: &Profile) -> Result<Profile, ProfileError> {
        let mv = self.terms.a_differential(v)?;
        Ok(mv.product(&u.dtheta(self.mode), Keep::Full)?.0.scale(C64::new(self.xi, 0.0)))
    }

    /// Full nonlinear term `G(U)` before projection.
    pub fn nonlinear(&self, u: &Profile) -> Result<Profile, ProfileError> {
        match &self.terms {
            PointTerms::Semilinear { .. } => self.terms.polynomial(u, None),
            PointTerms::Quasilinear { .. } => self.burgers(u, u)?.add(&self.terms.c_term(u)?),
        }
    }

    /// `B(V) d_theta U + C(V) U`, linear in `U` and equal to `G(U)` when `V = U`.
    pub fn linearized(&self, v: &Profile, u: &Profile) -> Result<Profile, ProfileError> {
        match &self.terms {
            PointTerms::Semilinear { .. } => self.terms.polynomial(v, Some(u)),
            PointTerms::Quasilinear { .. } => self.burgers(v, u)?.add(&self.terms.c_term(u)?),
        }
    }

    /// Keep the oscillatory indices of this ray's phase and project onto the polarization.
    pub fn project(&self, p: &Profile) -> Profile {
        let mu = self.mode;
        let mut out = p.clone();
        out.retain(|idx| idx.in_sigma_mu(mu) && idx.g[mu] != 0);
        apply_matrix(&self.proj, &out)
    }

    /// Young-inequality bound on `U -> B(V) d_theta U + C(V) U` in l2.
    pub fn coupling_bound(&self, v: &Profile) -> f64 {
        let n = self.n();
        let norms: Vec<f64> = (0..n).map(|k| l1_norm_vec(v, k)).collect();
        match &self.terms {
            PointTerms::Semilinear { f } => f
                .iter()
                .flat_map(|poly| poly.iter())
                .map(|(mono, c)| {
                    let factors = monomial_factors(mono);
                    if factors.is_empty() {
                        return 0.0;
                    }
                    c.norm() * factors[1..].iter().map(|&(k, _)| norms[k]).product::<f64>()
                })
                .sum(),
            PointTerms::Quasilinear { d, dbar, j, jbar, ux0 } => {
                let dsum: Vec<f64> = (0..n).map(|k| d[k].norm() + dbar[k].norm()).collect();
                let b = self.xi.abs() * v.gmax as f64 * (0..n).map(|k| dsum[k] * norms[k]).sum::<f64>();
                let c = dsum.iter().sum::<f64>() * ux0.norm() + j.norm() + jbar.norm();
                b + c
            }
        }
    }

    fn transport_rhs(&self, u: &Profile, g: &Profile) -> Result<Profile, ProfileError> {
        apply_matrix(&self.dproj, u).sub(&self.project(g))
    }
}

/// Solution on one ray, with node values and node derivatives for Hermite dense output.
#[derive(Clone, Debug)]
pub struct RaySolution {
    pub mode: usize,
    pub ray: usize,
    pub x0: f64,
    pub dt: f64,
    pub times: Vec<f64>,
    pub values: Vec<Profile>,
    pub derivs: Vec<Profile>,
    pub energy: Vec<f64>,
    pub c_est: f64,
    /// `max |U_nu - U_{nu-1}|` per Picard iteration, starting at `nu = 2`.
    pub history: Vec<f64>,
    pub direct_difference: f64,
    pub rect_mass: f64,
    pub polarization_residual: f64,
    pub tail_ratio: f64,
    /// Largest `|U(t)|^2 / (e^{C t} |H|^2)` over all linear sub-solves.
    pub energy_ratio: f64,
}

fn hermite_profile(
    times: &[f64],
    values: &[Profile],
    derivs: &[Profile],
    dt: f64,
    t: f64,
) -> Result<(Profile, Profile), ProfileError> {
    let n = times.len() - 1;
    let k = ((t / dt).floor().max(0.0) as usize).min(n - 1);
    let tau = ((t - times[k]) / dt).clamp(0.0, 1.0);
    let (t2, t3) = (tau * tau, tau * tau * tau);
    let h = [2.0 * t3 - 3.0 * t2 + 1.0, (t3 - 2.0 * t2 + tau) * dt, -2.0 * t3 + 3.0 * t2, (t3 - t2) * dt];
    let dh =
        [(6.0 * t2 - 6.0 * tau) / dt, 3.0 * t2 - 4.0 * tau + 1.0, (-6.0 * t2 + 6.0 * tau) / dt, 3.0 * t2 - 2.0 * tau];
    let parts = [&values[k], &derivs[k], &values[k + 1], &derivs[k + 1]];
    let mut v = values[k].scale(C64::new(h[0], 0.0));
    let mut d = values[k].scale(C64::new(dh[0], 0.0));
    for i in 1..4 {
        v = v.axpy(C64::new(h[i], 0.0), parts[i])?;
        d = d.axpy(C64::new(dh[i], 0.0), parts[i])?;
    }
    Ok((v, d))
}

impl RaySolution {
    /// `(U(t), U'(t))` by cubic Hermite interpolation.
    pub fn at(&self, t: f64) -> (Profile, Profile) {
        hermite_profile(&self.times, &self.values, &self.derivs, self.dt, t).expect("profiles share one shape")
    }

    pub fn contraction_ratios(&self) -> Vec<f64> {
        self.history.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 }).collect()
    }
}

fn max_diff(a: &[Profile], b: &[Profile]) -> Result<f64, ProfileError> {
    let mut m: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        m = m.max(x.sub(y)?.l2_norm());
    }
    Ok(m)
}

/// Frames at the nodes (even entries) and half steps (odd entries) of the time grid.
pub fn ray_frames(
    model: &SystemModel,
    ray: &RayPath,
    mode: usize,
    t_final: f64,
    steps: usize,
) -> Result<Vec<RayFrame>, TransportError> {
    let dt = t_final / steps as f64;
    (0..=2 * steps).map(|k| RayFrame::new(model, ray, mode, 0.5 * dt * k as f64)).collect()
}

pub struct LinearSolve {
    pub values: Vec<Profile>,
    pub derivs: Vec<Profile>,
    pub energy: Vec<f64>,
    pub c_est: f64,
    pub energy_ratio: f64,
}

/// RK4 for `U' = pi' U - F[B(V) d_theta U + C(V) U]` with `V` frozen, re-projecting after each step.
fn linear_step_solve(
    frames: &[RayFrame],
    v_nodes: &[Profile],
    v_derivs: &[Profile],
    h: &Profile,
    dt: f64,
    settings: &TransportSettings,
) -> Result<LinearSolve, TransportError> {
    let steps = v_nodes.len() - 1;
    let rhs = |fr: &RayFrame, v: &Profile, u: &Profile| -> Result<Profile, ProfileError> {
        fr.transport_rhs(u, &fr.linearized(v, u)?)
    };
    let mut c_est: f64 = 0.0;
    for k in 0..=steps {
        let fr = &frames[2 * k];
        c_est = c_est.max(1.0 + fr.dxa_norm + 2.0 * fr.coupling_bound(&v_nodes[k]));
    }
    let h2 = h.l2_norm().powi(2);
    let mut values = Vec::with_capacity(steps + 1);
    let mut derivs = Vec::with_capacity(steps + 1);
    let mut energy = Vec::with_capacity(steps + 1);
    let mut ratio: f64 = 0.0;
    let mut u = frames[0].project(h);
    for k in 0..=steps {
        let fr = &frames[2 * k];
        let k1 = rhs(fr, &v_nodes[k], &u)?;
        let e = u.l2_norm().powi(2);
        let bound = (c_est * fr.t).exp() * h2;
        if h2 > 0.0 {
            ratio = ratio.max(e / bound);
        }
        if e > settings.energy_slack * bound + 1e-300 {
            return Err(TransportError::EnergyBlowup { t: fr.t, energy: e, bound });
        }
        values.push(u.clone());
        derivs.push(k1.clone());
        energy.push(e);
        if k == steps {
            break;
        }
        let mid = &frames[2 * k + 1];
        let v_mid = v_nodes[k]
            .add(&v_nodes[k + 1])?
            .scale(C64::new(0.5, 0.0))
            .axpy(C64::new(dt / 8.0, 0.0), &v_derivs[k].sub(&v_derivs[k + 1])?)?;
        let k2 = rhs(mid, &v_mid, &u.axpy(C64::new(0.5 * dt, 0.0), &k1)?)?;
        let k3 = rhs(mid, &v_mid, &u.axpy(C64::new(0.5 * dt, 0.0), &k2)?)?;
        let k4 = rhs(&frames[2 * k + 2], &v_nodes[k + 1], &u.axpy(C64::new(dt, 0.0), &k3)?)?;
        let incr = k1.add(&k2.scale(C64::new(2.0, 0.0)))?.add(&k3.scale(C64::new(2.0, 0.0)))?.add(&k4)?;
        u = frames[2 * k + 2].project(&u.axpy(C64::new(dt / 6.0, 0.0), &incr)?);
    }
    Ok(LinearSolve { values, derivs, energy, c_est, energy_ratio: ratio })
}

/// RK4 on the nonlinear projected system, with rectification monitoring.
pub fn direct_solve(
    frames: &[RayFrame],
    h: &Profile,
    dt: f64,
    settings: &TransportSettings,
) -> Result<(Vec<Profile>, f64), TransportError> {
    let steps = (frames.len() - 1) / 2;
    let mut rect: f64 = 0.0;
    let mut rhs = |fr: &RayFrame, u: &Profile| -> Result<Profile, TransportError> {
        let g = fr.nonlinear(u)?;
        let mass = g.zero_frequency_mass();
        rect = rect.max(mass);
        if mass > settings.rect_tol {
            return Err(TransportError::RectificationDetected { mass });
        }
        Ok(fr.transport_rhs(u, &g)?)
    };
    let mut u = frames[0].project(h);
    let mut out = vec![u.clone()];
    for k in 0..steps {
        let mid = &frames[2 * k + 1];
        let k1 = rhs(&frames[2 * k], &u)?;
        let k2 = rhs(mid, &u.axpy(C64::new(0.5 * dt, 0.0), &k1)?)?;
        let k3 = rhs(mid, &u.axpy(C64::new(0.5 * dt, 0.0), &k2)?)?;
        let k4 = rhs(&frames[2 * k + 2], &u.axpy(C64::new(dt, 0.0), &k3)?)?;
        let incr = k1.add(&k2.scale(C64::new(2.0, 0.0)))?.add(&k3.scale(C64::new(2.0, 0.0)))?.add(&k4)?;
        u = frames[2 * k + 2].project(&u.axpy(C64::new(dt / 6.0, 0.0), &incr)?);
        out.push(u.clone());
    }
    Ok((out, rect))
}

/// Picard iteration `U_1 = H`, `U_nu` = linear solve with `V = U_{nu-1}`.
pub fn picard_solve(
    frames: &[RayFrame],
    h: &Profile,
    t_final: f64,
    settings: &TransportSettings,
) -> Result<(LinearSolve, Vec<f64>), TransportError> {
    let steps = (frames.len() - 1) / 2;
    let dt = t_final / steps as f64;
    let zero = h.scale(C64::new(0.0, 0.0));
    let mut v_nodes = vec![frames[0].project(h); steps + 1];
    let mut v_derivs = vec![zero; steps + 1];
    let mut history = Vec::new();
    let mut growing = 0;
    let mut energy_ratio: f64 = 0.0;
    for _ in 2..=settings.max_iter {
        let sol = linear_step_solve(frames, &v_nodes, &v_derivs, h, dt, settings)?;
        energy_ratio = energy_ratio.max(sol.energy_ratio);
        let diff = max_diff(&sol.values, &v_nodes)?;
        if let Some(&prev) = history.last() {
            if prev > 0.0 && diff / prev >= 1.0 {
                growing += 1;
            } else {
                growing = 0;
            }
        }
        history.push(diff);
        v_nodes.clone_from(&sol.values);
        v_derivs.clone_from(&sol.derivs);
        if diff <= settings.tol {
            return Ok((LinearSolve { energy_ratio, ..sol }, history));
        }
        if growing >= 3 || !diff.is_finite() {
            break;
        }
    }
    Err(TransportError::NoContraction { horizon: t_final })
}

/// Solve the transport system on one ray up to `t_final`.
pub fn solve_ray(
    model: &SystemModel,
    init: &InitialPhaseData,
    ray: &RayPath,
    mode: usize,
    t_final: f64,
    settings: &TransportSettings,
) -> Result<RaySolution, TransportError> {
    let h = initial_profile(model, init, mode, ray.x0, settings)?;
    let frames = ray_frames(model, ray, mode, t_final, settings.steps)?;
    let dt = t_final / settings.steps as f64;
    let (direct, rect_mass) = direct_solve(&frames, &h, dt, settings)?;
    let (sol, history) = picard_solve(&frames, &h, t_final, settings)?;
    let direct_difference = max_diff(&sol.values, &direct)?;
    let mut polarization: f64 = 0.0;
    for (k, u) in sol.values.iter().enumerate() {
        polarization = polarization.max(u.sub(&frames[2 * k].project(u))?.l2_norm());
    }
    let tail_ratio = sol.values.iter().map(Profile::tail_ratio).fold(0.0, f64::max);
    Ok(RaySolution {
        mode,
        ray: ray.index,
        x0: ray.x0,
        dt,
        times: (0..=settings.steps).map(|k| k as f64 * dt).collect(),
        values: sol.values,
        derivs: sol.derivs,
        energy: sol.energy,
        c_est: sol.c_est,
        history,
        direct_difference,
        rect_mass,
        polarization_residual: polarization,
        tail_ratio,
        energy_ratio: sol.energy_ratio,
    })
}

#[derive(Clone, Debug)]
pub struct TransportSolution {
    /// Horizon actually reached after any halving.
    pub t_final: f64,
    pub halvings: u32,
    /// Indexed by mode, then by ray.
    pub rays: Vec<Vec<RaySolution>>,
}

impl TransportSolution {
    pub fn ray(&self, mu: usize, l: usize) -> &RaySolution {
        &self.rays[mu][l]
    }

    pub fn all(&self) -> impl Iterator<Item = &RaySolution> {
        self.rays.iter().flatten()
    }
}

/// Solve on every ray, halving the horizon when Picard iteration fails to contract.
pub fn solve_transport(
    model: &SystemModel,
    field: &PhaseField,
    init: &InitialPhaseData,
    settings: &TransportSettings,
) -> Result<TransportSolution, TransportError> {
    let mut t_final = model.domain.t_final;
    let jobs: Vec<(usize, &RayPath)> =
        field.modes.iter().enumerate().flat_map(|(mu, m)| m.rays.iter().map(move |r| (mu, r))).collect();
    for halvings in 0..=settings.max_halvings {
        let results = par_map(&jobs, |(mu, r)| solve_ray(model, init, r, *mu, t_final, settings));
        match results.into_iter().collect::<Result<Vec<_>, _>>() {
            Ok(sols) => {
                let mut rays: Vec<Vec<RaySolution>> = vec![Vec::new(); field.modes.len()];
                for s in sols {
                    rays[s.mode].push(s);
                }
                return Ok(TransportSolution { t_final, halvings, rays });
            }
            Err(TransportError::NoContraction { .. }) if halvings < settings.max_halvings => t_final *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(TransportError::NoContraction { horizon: t_final })
}

/// `j N1(U) - N2(j U)` on a torus lattice, where `N1` is the coefficient-space nonlinearity and
/// `N2` evaluates the nonlinearity pointwise with `conj(V(theta, -theta'))` in the conjugate slots.
pub fn conjugacy_defect(frame: &RayFrame, u: &Profile, lattice: usize) -> Result<f64, TransportError> {
    let n1 = frame.nonlinear(u)?.torus_samples(lattice);
    let v = u.torus_samples(lattice);
    let m = u.m;
    let dims = 2 * m;
    let reflect = |flat: usize| {
        let mut digits = vec![0usize; dims];
        let mut rem = flat;
        for a in (0..dims).rev() {
            digits[a] = rem % lattice;
            rem /= lattice;
        }
        for d in digits.iter_mut().skip(m) {
            *d = (lattice - *d) % lattice;
        }
        digits.iter().fold(0, |acc, d| acc * lattice + d)
    };
    let mut worst: f64 = 0.0;
    for (flat, val) in v.iter().enumerate() {
        let bar: Vec<C64> = v[reflect(flat)].iter().map(|z| z.conj()).collect();
        let n2: Vec<C64> = match &frame.terms {
            PointTerms::Semilinear { f } => f
                .iter()
                .map(|poly| {
                    poly.iter()
                        .map(|(mono, c)| {
                            let mut acc = *c;
                            for k in 0..mono.u.len() {
                                acc *= val[k].powi(mono.u[k] as i32) * bar[k].powi(mono.ubar[k] as i32);
                            }
                            acc
                        })
                        .sum()
                })
                .collect(),
            PointTerms::Quasilinear { .. } => {
                return Err(ProfileError::ShapeMismatch("pointwise check needs the semilinear form".into()).into())
            }
        };
        for (a, b) in n1[flat].iter().zip(&n2) {
            worst = worst.max((a - b).norm());
        }
    }
    Ok(worst)
}

/// `j^{-1} j U - U` through torus samples.
pub fn torus_round_trip(u: &Profile, lattice: usize) -> Result<f64, TransportError> {
    let samples = u.torus_samples(lattice);
    let back = coefficients_from_torus_samples(&samples, u.m, lattice, u.shape, u.gmax, false)?;
    Ok(back.profile.sub(u)?.sup_norm())
}
