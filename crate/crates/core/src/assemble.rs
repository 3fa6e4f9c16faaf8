//! Approximate solution `v = u0 + eps^p (U0 + eps U1)(phi/eps)` and its exact residual.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::AssembleError;
use crate::harness::{run_sweep, SweepReport, SweepSettings, THRESHOLD_1_2, THRESHOLD_3_2};
use crate::model::{symbol_from, CMat, CVec, SystemModel};
use crate::multiplier::{dpsi, perturbation_direction, sweep_defect, IdentitySetup, Multiplier, OutsideRule};
use crate::par_map;
use crate::phase::{InitialPhaseData, Local, PhaseField};
use crate::profile::{Keep, Profile, Shape, SpectrumIndex, UNDERFLOW_GUARD};
use crate::transport::{apply_matrix, PointTerms, TransportSolution};
use crate::C64;

/// Step of the centered differences used for the `(t, x)`-derivatives of `U1`.
pub const FD_STEP: f64 = 1e-4;

/// Everything needed to evaluate `v` near the rays of a solved pipeline.
#[derive(Clone, Copy)]
pub struct AsymptoticSolution<'a> {
    pub model: &'a SystemModel,
    pub field: &'a PhaseField,
    pub init: &'a InitialPhaseData,
    pub transport: &'a TransportSolution,
    /// 1 for quasilinear systems, 0 for semilinear ones.
    pub p: i32,
    pub rect_tol: f64,
    pub fd_step: f64,
}

/// Leading profile and its coefficient derivatives at one point.
#[derive(Clone, Debug)]
pub struct Order0 {
    pub local: Local,
    pub u0: Profile,
    pub u0_t: Profile,
    pub u0_x: Profile,
}

/// One harmonic of `U0 + eps U1` with its phase data.
#[derive(Clone, Debug)]
pub struct Harmonic {
    pub index: SpectrumIndex,
    pub psi: C64,
    pub tau: C64,
    pub xi: C64,
    pub w0: CVec,
    pub w0_t: CVec,
    pub w0_x: CVec,
    pub w1: CVec,
    pub w1_t: CVec,
    pub w1_x: CVec,
}

/// The `eps`-independent data at one evaluation point.
#[derive(Clone, Debug)]
pub struct PointData {
    pub t: f64,
    pub x: f64,
    pub local: Local,
    pub u0: Profile,
    pub n_u0: Profile,
    pub u1: Profile,
    pub background: [CVec; 3],
    pub harmonics: Vec<Harmonic>,
}

fn coeff(p: &Profile, idx: &SpectrumIndex) -> CVec {
    match p.get(idx) {
        Some(c) => CVec::from_column_slice(c),
        None => CVec::zeros(p.shape.len()),
    }
}

impl<'a> AsymptoticSolution<'a> {
    pub fn new(
        model: &'a SystemModel,
        field: &'a PhaseField,
        init: &'a InitialPhaseData,
        transport: &'a TransportSolution,
        rect_tol: f64,
    ) -> AsymptoticSolution<'a> {
        AsymptoticSolution { model, field, init, transport, p: model.mode.p(), rect_tol, fd_step: FD_STEP }
    }

    fn gmax(&self) -> u32 {
        self.transport.all().next().and_then(|r| r.values.first()).map_or(crate::profile::DEFAULT_G, |v| v.gmax)
    }

    /// `U0 = E U` with `U = omega U_hat(t)` on each chart, and its exact `(t, x)`-derivatives.
    pub fn order0(&self, t: f64, x: f64) -> Result<Order0, AssembleError> {
        let model = self.model;
        let local = self.field.local(model, t, x)?;
        let shape = Shape::Vector(model.n);
        let m = local.modes.len();
        let gmax = self.gmax();
        let mut u0 = Profile::new(m, gmax, shape);
        let mut u0_t = u0.clone();
        let mut u0_x = u0.clone();
        let (pt, px) =
            (local.eig.projector_derivative(&model.a0_dt(t, x)), local.eig.projector_derivative(&model.a0_dx(t, x)));
        for (mu, pl) in local.modes.iter().enumerate() {
            let Some(ch) = &pl.chart else { continue };
            if ch.omega == 0.0 {
                continue;
            }
            let Some(ray) = self.transport.rays[mu].iter().find(|r| r.ray == ch.ray) else { continue };
            let (uh, duh) = ray.at(t);
            let b = ch.branch;
            let (w, dw) = (ch.omega, ch.domega);
            let w2 = C64::new(w * w, 0.0);
            let piu = apply_matrix(&local.eig.proj[b], &uh);
            u0 = u0.axpy(w2, &piu)?;
            u0_t = u0_t
                .axpy(C64::new(-2.0 * w * dw * ch.jet.xdot, 0.0), &piu)?
                .axpy(w2, &apply_matrix(&pt[b], &uh))?
                .axpy(w2, &apply_matrix(&local.eig.proj[b], &duh))?;
            u0_x = u0_x.axpy(C64::new(2.0 * w * dw, 0.0), &piu)?.axpy(w2, &apply_matrix(&px[b], &uh))?;
        }
        Ok(Order0 { local, u0, u0_t, u0_x })
    }

    /// `N(U0)`: the order-`eps^p` part of `L(v)` that does not involve `U1`.
    pub fn build_n(&self, o: &Order0) -> Result<Profile, AssembleError> {
        let terms = PointTerms::new(self.model, o.local.t, o.local.x);
        let mut n = o.u0_t.add(&apply_matrix(&o.local.a0, &o.u0_x))?;
        match &terms {
            PointTerms::Semilinear { .. } => n = n.add(&terms.polynomial(&o.u0, None)?)?,
            PointTerms::Quasilinear { .. } => {
                let dx = o.u0.map(|idx, c| {
                    let (_, xi) = dpsi(&o.local, idx);
                    let f = C64::new(0.0, 1.0) * xi;
                    c.iter().map(|z| f * z).collect()
                });
                let burgers = terms.a_differential(&o.u0)?.product(&dx, Keep::Full)?.0;
                n = n.add(&burgers)?.add(&terms.c_term(&o.u0)?)?;
            }
        }
        let mass = n.zero_frequency_mass();
        if mass > self.rect_tol {
            return Err(AssembleError::RectificationDetected { mass });
        }
        Ok(n)
    }

    /// `U1 = -Q N(U0)`.
    pub fn build_u1(local: &Local, n: &Profile) -> Result<Profile, AssembleError> {
        Ok(Multiplier::Q.apply(local, n)?.scale(C64::new(-1.0, 0.0)))
    }

    fn order1(&self, t: f64, x: f64) -> Result<(Order0, Profile, Profile), AssembleError> {
        let o = self.order0(t, x)?;
        let n = self.build_n(&o)?;
        let u1 = Self::build_u1(&o.local, &n)?;
        Ok((o, n, u1))
    }

    fn u1_at(&self, t: f64, x: f64) -> Result<Profile, AssembleError> {
        Ok(self.order1(t, x)?.2)
    }

    /// Precompute everything `eps`-independent at `(t, x)`.
    pub fn point(&self, t: f64, x: f64) -> Result<PointData, AssembleError> {
        let horizon = self.transport.t_final;
        if t > horizon + 1e-12 {
            return Err(AssembleError::BeyondHorizon { t, horizon });
        }
        if !self.model.domain.contains(t, x) {
            return Err(AssembleError::OutsideDomain { t, x });
        }
        let (o, n_u0, u1) = self.order1(t, x)?;
        let h = self.fd_step;
        let half = C64::new(0.5 / h, 0.0);
        let u1_t = if t - h >= 0.0 && t + h <= horizon {
            self.u1_at(t + h, x)?.sub(&self.u1_at(t - h, x)?)?.scale(half)
        } else {
            let sgn = if t - h < 0.0 { 1.0 } else { -1.0 };
            let f1 = self.u1_at(t + sgn * h, x)?;
            let f2 = self.u1_at(t + 2.0 * sgn * h, x)?;
            u1.scale(C64::new(-3.0, 0.0))
                .axpy(C64::new(4.0, 0.0), &f1)?
                .axpy(C64::new(-1.0, 0.0), &f2)?
                .scale(half * sgn)
        };
        let u1_x = self.u1_at(t, x + h)?.sub(&self.u1_at(t, x - h)?)?.scale(half);
        let phases = o.local.phases();
        let indices: BTreeSet<&SpectrumIndex> = o.u0.terms.keys().chain(u1.terms.keys()).collect();
        let harmonics = indices
            .into_iter()
            .map(|idx| {
                let (tau, xi) = dpsi(&o.local, idx);
                Harmonic {
                    index: idx.clone(),
                    psi: idx.psi(&phases),
                    tau,
                    xi,
                    w0: coeff(&o.u0, idx),
                    w0_t: coeff(&o.u0_t, idx),
                    w0_x: coeff(&o.u0_x, idx),
                    w1: coeff(&u1, idx),
                    w1_t: coeff(&u1_t, idx),
                    w1_x: coeff(&u1_x, idx),
                }
            })
            .collect();
        let model = self.model;
        Ok(PointData {
            t,
            x,
            background: [model.u0_at(t, x), model.u0_dt(t, x), model.u0_dx(t, x)],
            local: o.local,
            u0: o.u0,
            n_u0,
            u1,
            harmonics,
        })
    }

    /// Point data on all points, skipping points past the transport horizon.
    pub fn sample(&self, points: &[(f64, f64)]) -> Result<Vec<PointData>, AssembleError> {
        let horizon = self.transport.t_final;
        let kept: Vec<(f64, f64)> = points.iter().copied().filter(|&(t, _)| t <= horizon + 1e-12).collect();
        par_map(&kept, |&(t, x)| self.point(t, x)).into_iter().collect()
    }

    /// `u(0, x) = u0(0, x) + eps^p sum_mu h_mu(x) exp(i psi_mu(x) / eps)`.
    pub fn initial_datum(&self, x: f64, eps: f64) -> CVec {
        let mut u = self.model.u0_at(0.0, x);
        let scale = eps.powi(self.p);
        for md in &self.init.modes {
            let psi = md.psi.eval_tx(0.0, x);
            let damp = psi.im / eps;
            if damp >= UNDERFLOW_GUARD {
                continue;
            }
            let e = C64::new(-damp, psi.re / eps).exp() * scale;
            for (k, h) in md.h_at(x).into_iter().enumerate() {
                u[k] += e * h;
            }
        }
        u
    }
}

impl PointData {
    /// `(v, d_t v, d_x v)` by the exact chain rule.
    pub fn evaluate(&self, eps: f64, p: i32) -> (CVec, CVec, CVec) {
        let [mut v, mut vt, mut vx] = self.background.clone();
        let scale = eps.powi(p);
        let ie = C64::new(0.0, 1.0 / eps);
        let e1 = C64::new(eps, 0.0);
        for h in &self.harmonics {
            let damp = h.psi.im / eps;
            if damp >= UNDERFLOW_GUARD {
                continue;
            }
            let e = C64::new(-damp, h.psi.re / eps).exp() * scale;
            let w = &h.w0 + &h.w1 * e1;
            vt += (&h.w0_t + &h.w1_t * e1 + &w * (ie * h.tau)) * e;
            vx += (&h.w0_x + &h.w1_x * e1 + &w * (ie * h.xi)) * e;
            v += w * e;
        }
        (v, vt, vx)
    }

    /// `|L(t, x, v, dv)|` with the exact nonlinear `A` and `F`.
    pub fn residual(&self, model: &SystemModel, eps: f64) -> f64 {
        let (v, vt, vx) = self.evaluate(eps, model.mode.p());
        model.apply_operator(self.t, self.x, &v, &vt, &vx).norm()
    }

    /// Coefficient mass of `E U1` when the point lies on a ray of the harmonic's phase.
    pub fn on_ray_eu1(&self) -> f64 {
        let e = Multiplier::E { outside: OutsideRule::Zero };
        let on_ray = self.local.modes.iter().any(|m| m.chart.as_ref().is_some_and(|c| c.s.abs() < 1e-12));
        if !on_ray {
            return 0.0;
        }
        e.apply(&self.local, &self.u1).map_or(f64::NAN, |p| p.l1_norm())
    }
}

/// `sup |L(v)|` over the points for every `eps`; gated at `p + 1/2`.
pub fn residual_sweep(model: &SystemModel, data: &[PointData], settings: &SweepSettings) -> SweepReport {
    let exponent = model.mode.p() as f64 + 0.5;
    let threshold = exponent - settings.slack;
    run_sweep("residual L(v)", settings, exponent, threshold, data, |d, eps| d.residual(model, eps))
}

/// `sup |v(0, .) - u(0, .)|` over the `t = 0` points; gated at `p + 1/2`.
pub fn initial_mismatch_sweep(sol: &AsymptoticSolution, data: &[PointData], settings: &SweepSettings) -> SweepReport {
    let exponent = sol.p as f64 + 0.5;
    let threshold = exponent - settings.slack;
    let initial: Vec<&PointData> = data.iter().filter(|d| d.t == 0.0).collect();
    run_sweep("initial mismatch", settings, exponent, threshold, &initial, |d, eps| {
        let (v, _, _) = d.evaluate(eps, sol.p);
        (v - sol.initial_datum(d.x, eps)).norm()
    })
}

/// Sweeps of `(I - E~) U0`, `E N(U0)` and `P U0`, with `E~ = E + delta s^3 omega M`.
///
/// `E N(U0)` vanishes on the rays by the transport equation, so suprema below the transport
/// solve tolerance `solve_tol` count as exact for that sweep.
pub fn profile_sweeps(
    data: &[PointData],
    n: usize,
    setup: &IdentitySetup,
    settings: &SweepSettings,
    solve_tol: f64,
) -> Result<Vec<SweepReport>, AssembleError> {
    let e = Multiplier::E { outside: setup.outside };
    let eg = e.clone().perturb(2, setup.amplitude, perturbation_direction(n, setup.seed));
    let id = CMat::identity(n, n);
    let apply = |d: &PointData, p: &Profile, f: &dyn Fn(&Local, &SpectrumIndex) -> Result<CMat, AssembleError>| {
        let mut out = Profile::new(p.m, p.gmax, p.shape);
        for (idx, c) in &p.terms {
            let v = f(&d.local, idx)? * CVec::from_column_slice(c);
            out.terms.insert(idx.clone(), v.as_slice().to_vec());
        }
        Ok::<Profile, AssembleError>(out)
    };
    let collect = |f: &(dyn Fn(&PointData) -> Result<Profile, AssembleError> + Sync)| {
        par_map(data, |d| f(d).map(|p| (p, d.local.phases()))).into_iter().collect::<Result<Vec<_>, _>>()
    };
    let i_minus_e = collect(&|d| apply(d, &d.u0, &|l, i| Ok(&id - eg.coefficient(l, i)?)))?;
    let en = collect(&|d| Ok(e.apply(&d.local, &d.n_u0)?))?;
    let pu = collect(&|d| {
        apply(d, &d.u0, &|l, i| {
            let (tau, xi) = dpsi(l, i);
            Ok(symbol_from(&l.a0, tau, xi))
        })
    })?;
    let en_settings = SweepSettings { exact_tol: settings.exact_tol.max(solve_tol), ..settings.clone() };
    Ok(vec![
        sweep_defect("(I-E)U0", settings, 1.5, THRESHOLD_3_2, &i_minus_e),
        sweep_defect("E N(U0)", &en_settings, 0.5, THRESHOLD_1_2, &en),
        sweep_defect("P U0", settings, 1.5, THRESHOLD_3_2, &pu),
    ])
}

/// One row of the field dump.
#[derive(Clone, Debug, Serialize)]
pub struct FieldRow {
    pub t: f64,
    pub x: f64,
    pub eps: f64,
    pub component: usize,
    pub re_v: f64,
    pub im_v: f64,
    pub residual: f64,
}

pub fn field_rows(model: &SystemModel, data: &[PointData], eps: &[f64]) -> Vec<FieldRow> {
    let mut rows = Vec::new();
    for &e in eps {
        for d in data {
            let (v, vt, vx) = d.evaluate(e, model.mode.p());
            let r = model.apply_operator(d.t, d.x, &v, &vt, &vx).norm();
            for (k, z) in v.iter().enumerate() {
                rows.push(FieldRow { t: d.t, x: d.x, eps: e, component: k + 1, re_v: z.re, im_v: z.im, residual: r });
            }
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::TransportError;
    use crate::expr::{parse_expr, Expr};
    use crate::harness::{evaluation_points, GridSpec};
    use crate::model::{Domain, Mode};
    use crate::phase::{build_phase_field, ModeData};
    use crate::transport::{solve_transport, TransportSettings};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Case {
        model: SystemModel,
        init: InitialPhaseData,
        field: PhaseField,
        transport: TransportSolution,
    }

    impl Case {
        fn new(mode: Mode, a: [&str; 4], f: [&str; 2], u0: [&str; 2], psi: &str, h: f64) -> Case {
            let parse = |v: &[&str]| v.iter().map(|s| parse_expr(s).unwrap()).collect::<Vec<Expr>>();
            let d = Domain { t_final: 1.0, xbar: 0.0, rho: 8.0, c: 1.6, k_radius: 0.5 };
            let model = SystemModel::new("t", 2, mode, &parse(&a), &parse(&f), &parse(&u0), d).unwrap();
            let init = InitialPhaseData {
                modes: vec![ModeData::new(parse_expr(psi).unwrap(), vec![0.0], 1, vec![Expr::num(h), Expr::zero()])],
            };
            let field = build_phase_field(&model, &init, 400, None).unwrap();
            let transport = solve_transport(&model, &field, &init, &TransportSettings::default()).unwrap();
            Case { model, init, field, transport }
        }

        fn sol(&self) -> AsymptoticSolution<'_> {
            AsymptoticSolution::new(&self.model, &self.field, &self.init, &self.transport, 1e-12)
        }
    }

    const PSI: &str = "x + 4*i*x^2 + 0.3*x^3";

    fn s1(h: f64) -> Case {
        Case::new(
            Mode::Semilinear,
            ["1", "0", "0", "-1"],
            ["i*(conj(u1)*u1 + conj(u2)*u2)*u1", "i*(conj(u1)*u1 + conj(u2)*u2)*u2 + 0.5*conj(u1)*u1^2"],
            ["0", "0"],
            PSI,
            h,
        )
    }

    fn s3() -> Case {
        Case::new(
            Mode::Quasilinear,
            ["1 + 0.3*sin(x)", "0.3*conj(u1)", "0.3*u1", "-1"],
            ["(0.3 + 0.2*sin(x))*u1", "(0.3 + 0.2*sin(x))*u2"],
            ["0", "0"],
            PSI,
            1.0,
        )
    }

    fn coarse(c: &Case) -> Vec<(f64, f64)> {
        evaluation_points(&c.model, &c.field, &GridSpec { nt: 6, ns: 61, uniform: 9 })
    }

    #[test]
    fn linear_plane_gaussian_is_exact() {
        let c = Case::new(Mode::Semilinear, ["1", "0", "0", "-1"], ["0", "0"], ["0", "0"], "x + 4*i*x^2", 1.0);
        let data = c.sol().sample(&coarse(&c)).unwrap();
        for d in &data {
            assert_eq!(d.u1.sup_norm(), 0.0);
            for &eps in &[0.2, 0.05, 0.0125] {
                assert!(d.residual(&c.model, eps) <= 1e-10);
            }
        }
    }

    #[test]
    fn chain_rule_matches_finite_differences() {
        let eps = 0.1;
        for c in [s1(0.5), s3()] {
            let sol = c.sol();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let h = eps * 1e-3 * c.model.domain.rho;
            let p = sol.p;
            let v = |t: f64, x: f64| sol.point(t, x).unwrap().evaluate(eps, p).0;
            for _ in 0..100 {
                let t = rng.gen_range(0.05..0.95);
                let x = c.field.modes[0].rays[0].position(t) + rng.gen_range(-0.3..0.3);
                let (_, vt, vx) = sol.point(t, x).unwrap().evaluate(eps, p);
                let ft = (v(t + h, x) - v(t - h, x)) / C64::new(2.0 * h, 0.0);
                let fx = (v(t, x + h) - v(t, x - h)) / C64::new(2.0 * h, 0.0);
                assert!((&vt - ft).norm() <= 1e-4 * vt.norm(), "t-derivative at ({t}, {x})");
                assert!((&vx - fx).norm() <= 1e-4 * vx.norm(), "x-derivative at ({t}, {x})");
            }
        }
    }

    #[test]
    fn u1_lies_in_complementary_eigenspaces_with_1_over_g_decay() {
        for c in [s1(0.5), s3()] {
            let sol = c.sol();
            for k in 0..=10 {
                let t = 0.1 * k as f64;
                let ray_x = c.field.modes[0].rays[0].position(t);
                let d = sol.point(t, ray_x).unwrap();
                assert!(d.on_ray_eu1() <= 1e-14);
                for x in [ray_x - 0.2, ray_x, ray_x + 0.1] {
                    let d = sol.point(t, x).unwrap();
                    let ch = d.local.modes[0].chart.clone().unwrap();
                    let bound = ch.omega / (ch.jet.xi.abs() * ch.jet.eig.min_gap());
                    for (idx, u) in &d.u1.terms {
                        let nn = d.n_u0.get(idx).map_or(0.0, |c| c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt());
                        let uu = u.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                        if idx.g[0] == 0 {
                            assert_eq!(uu, 0.0);
                            continue;
                        }
                        assert!(
                            uu <= bound * nn / idx.g[0].abs() as f64 * (1.0 + 1e-12),
                            "t={t} x={x} idx={idx:?} u={uu:e} n={nn:e} bound={bound:e} omega={}",
                            ch.omega
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn zero_amplitude_gives_background() {
        let c = s1(0.0);
        for d in c.sol().sample(&coarse(&c)).unwrap() {
            assert!(d.n_u0.sup_norm() == 0.0 && d.u1.sup_norm() == 0.0);
            assert_eq!(d.evaluate(0.1, 0).0.norm(), 0.0);
        }
    }

    #[test]
    fn cubic_source_indices() {
        let c = s1(0.5);
        let d = c.sol().point(0.5, c.field.modes[0].rays[0].position(0.5)).unwrap();
        // U0 carries (1, 1), (1, 3), ... and the cubic raises gamma by 2 up to the truncation G = 8
        let max_u0 = d.u0.terms.keys().map(|i| i.gamma[0]).max().unwrap();
        let max_n = d.n_u0.terms.keys().map(|i| i.gamma[0]).max().unwrap();
        assert_eq!(max_n, if max_u0 + 2 <= 8 { max_u0 + 2 } else { max_u0 });
        assert!(d.n_u0.terms.keys().all(|i| i.g[0] == 1 && i.gamma[0] % 2 == 1));
    }

    #[test]
    fn quasilinear_with_state_free_matrix_is_linear() {
        let c = Case::new(Mode::Quasilinear, ["1", "0", "0", "-1"], ["0.5*u1", "0.5*u2"], ["0", "0"], PSI, 1.0);
        let sol = c.sol();
        for (t, x) in coarse(&c) {
            let o = sol.order0(t, x).unwrap();
            let n = sol.build_n(&o).unwrap();
            let hand =
                o.u0_t.add(&apply_matrix(&o.local.a0, &o.u0_x)).unwrap().axpy(C64::new(0.5, 0.0), &o.u0).unwrap();
            assert!(n.sub(&hand).unwrap().sup_norm() <= 1e-15);
        }
    }

    #[test]
    fn background_is_exact_and_rectification_is_caught() {
        let c = Case::new(
            Mode::Quasilinear,
            ["1", "0.3*conj(u1)", "0.3*u1", "-1"],
            ["0.5*u1 - 0.1", "0.5*u2"],
            ["0.2", "0"],
            PSI,
            0.0,
        );
        let z = CVec::zeros(2);
        for (t, x) in coarse(&c) {
            assert!(c.model.apply_operator(t, x, &c.model.u0_at(t, x), &z, &z).norm() <= 1e-10);
        }
        // the tilted polarization couples conj(U) with U at g = 0
        let sol = c.sol();
        let o = sol.order0(0.0, 0.0).unwrap();
        let r = c.field.local(&c.model, 0.0, 0.0).unwrap().eig.vectors.column(1).into_owned();
        let mut u0 = o.u0.clone();
        u0.accumulate(SpectrumIndex::fundamental(1, 0), r.as_slice());
        let o = Order0 { u0, ..o };
        assert!(matches!(sol.build_n(&o), Err(AssembleError::RectificationDetected { .. })));
        let mut data = c.init.clone();
        data.modes[0].h = vec![Expr::num(r[0].re), Expr::num(r[1].re)];
        let t = solve_transport(&c.model, &c.field, &data, &TransportSettings::default());
        assert!(matches!(t, Err(TransportError::RectificationDetected { .. })));
    }

    #[test]
    fn residual_orders_on_coarse_grid() {
        let settings = SweepSettings::default();
        for (c, exponent) in [(s1(0.5), 0.5), (s3(), 1.5)] {
            let sol = c.sol();
            let data = sol.sample(&coarse(&c)).unwrap();
            let r = residual_sweep(&c.model, &data, &settings);
            assert!(r.passed(), "{}", r.summary_line());
            assert!(r.slope.unwrap() >= exponent - 0.05);
            let r = initial_mismatch_sweep(&sol, &data, &settings);
            assert!(r.passed(), "{}", r.summary_line());
        }
    }

    #[test]
    fn beyond_horizon_and_outside_domain_rejected() {
        let c = s1(0.5);
        let sol = c.sol();
        assert!(matches!(sol.point(1.5, 0.0), Err(AssembleError::BeyondHorizon { .. })));
        assert!(matches!(sol.point(0.5, 7.9), Err(AssembleError::OutsideDomain { .. })));
    }
}
