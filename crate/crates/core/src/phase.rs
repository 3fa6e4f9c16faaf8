//! Rays, complex phases along rays and the global phase representatives.

use crate::error::{ModelError, PhaseError};
use crate::expr::{Expr, Var};
use crate::model::{eig_decompose, CMat, EigenNode, SystemModel};
use crate::C64;

pub const DEFAULT_RK_STEPS: usize = 400;

/// Data of one phase `psi_mu` at `t = 0`.
#[derive(Clone, Debug)]
pub struct ModeData {
    pub psi: Expr,
    pub dpsi: Expr,
    pub d2psi: Expr,
    pub d3psi: Expr,
    /// Zeros of `Im psi`, one ray each.
    pub zeros: Vec<f64>,
    /// Zero-based index into the ascending eigenvalues.
    pub branch: usize,
    /// Amplitude `h_mu(x)`.
    pub h: Vec<Expr>,
}

impl ModeData {
    pub fn new(psi: Expr, zeros: Vec<f64>, branch: usize, h: Vec<Expr>) -> ModeData {
        let dpsi = psi.diff(Var::X);
        let d2psi = dpsi.diff(Var::X);
        let d3psi = d2psi.diff(Var::X);
        ModeData { psi, dpsi, d2psi, d3psi, zeros, branch, h }
    }

    pub fn h_at(&self, x: f64) -> Vec<C64> {
        self.h.iter().map(|e| e.eval_tx(0.0, x)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct InitialPhaseData {
    pub modes: Vec<ModeData>,
}

impl InitialPhaseData {
    pub fn m(&self) -> usize {
        self.modes.len()
    }

    /// Check the zero-set conditions on `psi` and sample `Im psi >= 0`,
    /// `d Re psi != 0` on the initial slice.
    pub fn validate(&self, model: &SystemModel) -> Result<(), PhaseError> {
        if self.modes.is_empty() {
            return Err(PhaseError::InvalidData("at least one phase is required".into()));
        }
        let d = model.domain;
        for (mu, md) in self.modes.iter().enumerate() {
            if md.branch >= model.n {
                return Err(PhaseError::InvalidData(format!(
                    "phase {}: branch {} out of range",
                    mu + 1,
                    md.branch + 1
                )));
            }
            if md.h.len() != model.n {
                return Err(PhaseError::InvalidData(format!(
                    "phase {}: amplitude must have {} entries",
                    mu + 1,
                    model.n
                )));
            }
            if md.zeros.is_empty() {
                return Err(PhaseError::InvalidData(format!("phase {}: no zero of Im psi given", mu + 1)));
            }
            for (l, &x0) in md.zeros.iter().enumerate() {
                if (x0 - d.xbar).abs() >= d.rho {
                    return Err(PhaseError::InvalidData(format!("zero {x0} outside the initial slice")));
                }
                let v = md.psi.eval_tx(0.0, x0);
                let dv = md.dpsi.eval_tx(0.0, x0);
                let d2v = md.d2psi.eval_tx(0.0, x0);
                if v.im.abs() > 1e-12 || dv.im.abs() > 1e-12 {
                    return Err(PhaseError::InvalidData(format!(
                        "phase {}: Im psi or its derivative nonzero at x = {x0}",
                        mu + 1
                    )));
                }
                if d2v.im <= 0.0 {
                    return Err(PhaseError::ImaginaryPartCollapse { mode: mu, ray: l, t: 0.0, value: d2v.im });
                }
            }
            let samples = 401;
            for k in 0..samples {
                let x = d.xbar - d.rho + 2.0 * d.rho * k as f64 / (samples - 1) as f64;
                let v = md.psi.eval_tx(0.0, x);
                if v.im < -1e-12 {
                    return Err(PhaseError::InvalidData(format!("phase {}: Im psi < 0 at x = {x}", mu + 1)));
                }
                if md.dpsi.eval_tx(0.0, x).re.abs() < 1e-12 {
                    return Err(PhaseError::InvalidData(format!("phase {}: d Re psi vanishes at x = {x}", mu + 1)));
                }
            }
        }
        Ok(())
    }
}

/// Smooth transition `0 -> 1` on `[0, 1]` built from `exp(-1/q)`, with derivative.
pub fn smooth_step(q: f64) -> (f64, f64) {
    if q <= 0.0 {
        return (0.0, 0.0);
    }
    if q >= 1.0 {
        return (1.0, 0.0);
    }
    let f = |q: f64| (-1.0 / q).exp();
    let (a, b) = (f(q), f(1.0 - q));
    let (da, db) = (a / (q * q), b / ((1.0 - q) * (1.0 - q)));
    let sum = a + b;
    (a / sum, (da * b + a * db) / (sum * sum))
}

/// Plateau cutoff: 1 for `|s| <= s0/3`, 0 for `|s| >= 2 s0/3`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bump {
    pub s0: f64,
}

impl Bump {
    pub fn eval(&self, s: f64) -> (f64, f64) {
        let a = self.s0 / 3.0;
        let w = self.s0 / 3.0;
        let q = (s.abs() - a) / w;
        let (v, dv) = smooth_step(q);
        (1.0 - v, -dv * s.signum() / w)
    }

    pub fn value(&self, s: f64) -> f64 {
        self.eval(s).0
    }
}

fn rk4<const D: usize, E>(
    y0: [f64; D],
    t_final: f64,
    steps: usize,
    mut rhs: impl FnMut(f64, &[f64; D]) -> Result<[f64; D], E>,
    mut check: impl FnMut(f64, &[f64; D]) -> Result<(), E>,
) -> Result<(Vec<f64>, Vec<[f64; D]>, Vec<[f64; D]>), E> {
    let dt = t_final / steps as f64;
    let mut ts = Vec::with_capacity(steps + 1);
    let mut ys = Vec::with_capacity(steps + 1);
    let mut ds = Vec::with_capacity(steps + 1);
    let mut y = y0;
    check(0.0, &y)?;
    for k in 0..=steps {
        let t = k as f64 * dt;
        let k1 = rhs(t, &y)?;
        ts.push(t);
        ys.push(y);
        ds.push(k1);
        if k == steps {
            break;
        }
        let shift = |y: &[f64; D], k: &[f64; D], h: f64| {
            let mut out = *y;
            for i in 0..D {
                out[i] += h * k[i];
            }
            out
        };
        let k2 = rhs(t + 0.5 * dt, &shift(&y, &k1, 0.5 * dt))?;
        let k3 = rhs(t + 0.5 * dt, &shift(&y, &k2, 0.5 * dt))?;
        let k4 = rhs(t + dt, &shift(&y, &k3, dt))?;
        for i in 0..D {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        check(t + dt, &y)?;
    }
    Ok((ts, ys, ds))
}

/// Cubic Hermite interpolation on a uniform grid; extrapolates with the end cubic.
pub(crate) fn hermite<const D: usize>(ts: &[f64], ys: &[[f64; D]], ds: &[[f64; D]], t: f64) -> ([f64; D], [f64; D]) {
    let n = ts.len() - 1;
    let dt = ts[1] - ts[0];
    let k = ((t / dt).floor().max(0.0) as usize).min(n - 1);
    let tau = (t - ts[k]) / dt;
    let (t2, t3) = (tau * tau, tau * tau * tau);
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + tau;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    let d00 = (6.0 * t2 - 6.0 * tau) / dt;
    let d10 = 3.0 * t2 - 4.0 * tau + 1.0;
    let d01 = (-6.0 * t2 + 6.0 * tau) / dt;
    let d11 = 3.0 * t2 - 2.0 * tau;
    let mut y = [0.0; D];
    let mut dy = [0.0; D];
    for i in 0..D {
        y[i] = h00 * ys[k][i] + h10 * dt * ds[k][i] + h01 * ys[k + 1][i] + h11 * dt * ds[k + 1][i];
        dy[i] = d00 * ys[k][i] + d10 * ds[k][i] + d01 * ys[k + 1][i] + d11 * ds[k + 1][i];
    }
    (y, dy)
}

/// Integrate `dx/dt = lambda_branch(t, x)` with fixed-step RK4.
pub fn trace_ray(
    model: &SystemModel,
    branch: usize,
    x_start: f64,
    steps: usize,
) -> Result<(Vec<f64>, Vec<f64>), PhaseError> {
    let d = model.domain;
    let (ts, ys, _) = rk4(
        [x_start],
        d.t_final,
        steps,
        |t, y| Ok::<_, PhaseError>([eig_decompose(model, t, y[0])?.lambda[branch]]),
        |t, y| {
            if d.contains(t, y[0]) {
                Ok(())
            } else {
                Err(PhaseError::RayEscapesLaterally { mode: 0, ray: 0, t, x: y[0] })
            }
        },
    )?;
    Ok((ts, ys.into_iter().map(|y| y[0]).collect()))
}

/// Ray with Taylor data of the phase: state `(x, xi, Re Phi, Im Phi)`.
#[derive(Clone, Debug)]
pub struct RayPath {
    pub mode: usize,
    pub index: usize,
    pub branch: usize,
    pub x0: f64,
    /// Constant real value of the phase along the ray.
    pub varphi: f64,
    pub t: Vec<f64>,
    pub y: Vec<[f64; 4]>,
    pub dy: Vec<[f64; 4]>,
}

/// Consistent first-order jet of the ray data at time `t`.
#[derive(Clone, Debug)]
pub struct RayJet {
    pub t: f64,
    pub x: f64,
    pub xdot: f64,
    pub xi: f64,
    pub xi_dot: f64,
    pub phi2: C64,
    pub phi2_dot: C64,
    pub eig: EigenNode,
}

impl RayPath {
    pub fn position(&self, t: f64) -> f64 {
        hermite(&self.t, &self.y, &self.dy, t).0[0]
    }

    pub fn state(&self, t: f64) -> [f64; 4] {
        hermite(&self.t, &self.y, &self.dy, t).0
    }

    /// Interpolated state with derivatives recomputed from the ODE at that state.
    pub fn jet(&self, model: &SystemModel, t: f64) -> Result<RayJet, ModelError> {
        let y = self.state(t);
        let eig = eig_decompose(model, t, y[0])?;
        let l = self.branch;
        let (alpha, beta) = (eig.alpha[l], eig.beta[l]);
        let phi2 = C64::new(y[2], y[3]);
        Ok(RayJet {
            t,
            x: y[0],
            xdot: eig.lambda[l],
            xi: y[1],
            xi_dot: -alpha * y[1],
            phi2,
            phi2_dot: -2.0 * alpha * phi2 - beta * y[1],
            eig,
        })
    }

    pub fn inf_im_phi(&self) -> f64 {
        self.y.iter().map(|y| y[3]).fold(f64::INFINITY, f64::min)
    }
}

/// Integrate the ray together with `xi' = -alpha xi`, `Phi' = -2 alpha Phi - beta xi`.
pub fn solve_phase_ode(
    model: &SystemModel,
    mode: usize,
    index: usize,
    data: &ModeData,
    steps: usize,
) -> Result<RayPath, PhaseError> {
    let x0 = data.zeros[index];
    let xi0 = data.dpsi.eval_tx(0.0, x0);
    let phi0 = data.d2psi.eval_tx(0.0, x0);
    let l = data.branch;
    let d = model.domain;
    let (ts, ys, ds) = rk4(
        [x0, xi0.re, phi0.re, phi0.im],
        d.t_final,
        steps,
        |t, y| {
            let eig = eig_decompose(model, t, y[0])?;
            let (a, b) = (eig.alpha[l], eig.beta[l]);
            Ok::<_, PhaseError>([eig.lambda[l], -a * y[1], -2.0 * a * y[2] - b * y[1], -2.0 * a * y[3]])
        },
        |t, y| {
            if !d.contains(t, y[0]) {
                return Err(PhaseError::RayEscapesLaterally { mode, ray: index, t, x: y[0] });
            }
            if !(y[3] > 0.0) {
                return Err(PhaseError::ImaginaryPartCollapse { mode, ray: index, t, value: y[3] });
            }
            Ok(())
        },
    )?;
    Ok(RayPath { mode, index, branch: l, x0, varphi: data.psi.eval_tx(0.0, x0).re, t: ts, y: ys, dy: ds })
}

#[derive(Clone, Debug)]
pub struct ModePhase {
    pub branch: usize,
    pub rays: Vec<RayPath>,
    pub inf_im: f64,
    pub c_floor: f64,
}

#[derive(Clone, Debug)]
pub struct PhaseField {
    pub s0: f64,
    pub bump: Bump,
    pub modes: Vec<ModePhase>,
}

/// Local chart data of the ray nearest to a point.
#[derive(Clone, Debug)]
pub struct ChartLocal {
    pub ray: usize,
    /// Zero-based eigenvalue branch of the mode.
    pub branch: usize,
    pub s: f64,
    pub omega: f64,
    pub domega: f64,
    pub jet: RayJet,
}

/// Global phase value and gradient for one mode at a point.
#[derive(Clone, Debug)]
pub struct PhaseLocal {
    pub phi: C64,
    pub phi_t: C64,
    pub phi_x: C64,
    pub chart: Option<ChartLocal>,
}

/// Everything the multipliers and the assembler need at one point.
#[derive(Clone, Debug)]
pub struct Local {
    pub t: f64,
    pub x: f64,
    pub a0: CMat,
    pub eig: EigenNode,
    pub modes: Vec<PhaseLocal>,
}

impl Local {
    pub fn phases(&self) -> Vec<C64> {
        self.modes.iter().map(|m| m.phi).collect()
    }
}

pub fn build_phase_field(
    model: &SystemModel,
    init: &InitialPhaseData,
    steps: usize,
    s0_override: Option<f64>,
) -> Result<PhaseField, PhaseError> {
    init.validate(model)?;
    let mut modes = Vec::new();
    for (mu, md) in init.modes.iter().enumerate() {
        let mut rays = Vec::new();
        for l in 0..md.zeros.len() {
            rays.push(solve_phase_ode(model, mu, l, md, steps)?);
        }
        rays.sort_by(|a, b| a.x0.total_cmp(&b.x0));
        for (l, r) in rays.iter_mut().enumerate() {
            r.index = l;
        }
        let inf_im = rays.iter().map(RayPath::inf_im_phi).fold(f64::INFINITY, f64::min);
        modes.push(ModePhase { branch: md.branch, rays, inf_im, c_floor: 0.0 });
    }
    let all: Vec<&RayPath> = modes.iter().flat_map(|m| m.rays.iter()).collect();
    let mut min_dist = f64::INFINITY;
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            for k in 0..all[i].y.len() {
                min_dist = min_dist.min((all[i].y[k][0] - all[j].y[k][0]).abs());
            }
        }
    }
    let cap = model.domain.rho / 4.0;
    let s0 = match s0_override {
        Some(s0) => {
            if min_dist < 3.0 * s0 {
                return Err(PhaseError::RayCollision { distance: min_dist, margin: 3.0 * s0 });
            }
            s0
        }
        None => (min_dist / 3.0).min(cap),
    };
    if !(s0 > 0.0) {
        return Err(PhaseError::RayCollision { distance: min_dist, margin: 0.0 });
    }
    for m in &mut modes {
        m.c_floor = 0.5 * m.inf_im * (s0 / 3.0).powi(2);
    }
    Ok(PhaseField { s0, bump: Bump { s0 }, modes })
}

struct RayPiece {
    jet: RayJet,
    s: f64,
    omega: f64,
    domega: f64,
    re: f64,
    re_t: f64,
    re_x: f64,
    im: f64,
    im_t: f64,
    im_x: f64,
}

impl PhaseField {
    fn piece(&self, model: &SystemModel, ray: &RayPath, t: f64, x: f64) -> Result<RayPiece, ModelError> {
        let jet = ray.jet(model, t)?;
        let s = x - jet.x;
        let (w, dw) = self.bump.eval(s);
        let s2 = 0.5 * s * s;
        let (pr, pi) = (jet.phi2.re, jet.phi2.im);
        let re = ray.varphi + jet.xi * s + w * pr * s2;
        let re_s = jet.xi + dw * pr * s2 + w * pr * s;
        let re_ts = jet.xi_dot * s + w * jet.phi2_dot.re * s2;
        let im = w * pi * s2;
        let im_s = dw * pi * s2 + w * pi * s;
        let im_ts = w * jet.phi2_dot.im * s2;
        let xdot = jet.xdot;
        Ok(RayPiece {
            s,
            omega: w,
            domega: dw,
            re,
            re_t: re_ts - xdot * re_s,
            re_x: re_s,
            im,
            im_t: im_ts - xdot * im_s,
            im_x: im_s,
            jet,
        })
    }

    /// Global representative of phase `mu` with its gradient at `(t, x)`.
    pub fn mode_local(&self, model: &SystemModel, mu: usize, t: f64, x: f64) -> Result<PhaseLocal, ModelError> {
        let mp = &self.modes[mu];
        let pieces: Vec<RayPiece> = mp.rays.iter().map(|r| self.piece(model, r, t, x)).collect::<Result<_, _>>()?;
        // floor term
        let mut im = mp.c_floor;
        let (mut im_t, mut im_x) = (0.0, 0.0);
        for p in &pieces {
            im += p.im - mp.c_floor * p.omega;
            im_t += p.im_t + mp.c_floor * p.domega * p.jet.xdot;
            im_x += p.im_x - mp.c_floor * p.domega;
        }
        // real part: partition of unity between consecutive rays
        let margin = 2.0 * self.s0 / 3.0;
        let n = pieces.len();
        let (re, re_t, re_x) = if n == 1 || x <= pieces[0].jet.x + margin {
            (pieces[0].re, pieces[0].re_t, pieces[0].re_x)
        } else if x >= pieces[n - 1].jet.x - margin {
            let p = &pieces[n - 1];
            (p.re, p.re_t, p.re_x)
        } else {
            let b = pieces.iter().position(|p| p.jet.x - margin > x).unwrap_or(n - 1).max(1);
            let (pa, pb) = (&pieces[b - 1], &pieces[b]);
            let ea = pa.jet.x + margin;
            let eb = pb.jet.x - margin;
            if x <= ea {
                (pa.re, pa.re_t, pa.re_x)
            } else {
                let len = eb - ea;
                let q = (x - ea) / len;
                let (w, dw) = smooth_step(q);
                let q_x = 1.0 / len;
                let q_t = (-pa.jet.xdot * len - (x - ea) * (pb.jet.xdot - pa.jet.xdot)) / (len * len);
                let re = (1.0 - w) * pa.re + w * pb.re;
                let re_t = (1.0 - w) * pa.re_t + w * pb.re_t + dw * q_t * (pb.re - pa.re);
                let re_x = (1.0 - w) * pa.re_x + w * pb.re_x + dw * q_x * (pb.re - pa.re);
                (re, re_t, re_x)
            }
        };
        let chart = pieces
            .into_iter()
            .enumerate()
            .filter(|(_, p)| p.s.abs() < self.s0)
            .min_by(|a, b| a.1.s.abs().total_cmp(&b.1.s.abs()))
            .map(|(ray, p)| ChartLocal {
                ray,
                branch: mp.branch,
                s: p.s,
                omega: p.omega,
                domega: p.domega,
                jet: p.jet,
            });
        Ok(PhaseLocal { phi: C64::new(re, im), phi_t: C64::new(re_t, im_t), phi_x: C64::new(re_x, im_x), chart })
    }

    pub fn local(&self, model: &SystemModel, t: f64, x: f64) -> Result<Local, ModelError> {
        let eig = eig_decompose(model, t, x)?;
        let modes = (0..self.modes.len()).map(|mu| self.mode_local(model, mu, t, x)).collect::<Result<_, _>>()?;
        Ok(Local { t, x, a0: model.a0(t, x), eig, modes })
    }

    /// Distance from `x` to the nearest ray of mode `mu` at time `t`.
    pub fn distance_to_rays(&self, mu: usize, t: f64, x: f64) -> f64 {
        self.modes[mu].rays.iter().map(|r| (x - r.position(t)).abs()).fold(f64::INFINITY, f64::min)
    }

    /// Sampled check of `Im phi >= c min(s^2, s0^2/9)` with `c = inf Im Phi / 2`.
    pub fn check_floor(&self, model: &SystemModel, nt: usize, nx: usize) -> Result<f64, PhaseError> {
        let d = model.domain;
        let mut worst = f64::INFINITY;
        for mu in 0..self.modes.len() {
            let c = 0.5 * self.modes[mu].inf_im;
            for it in 0..nt {
                let t = d.t_final * it as f64 / (nt - 1) as f64;
                let hw = d.half_width(t);
                for ix in 0..nx {
                    let x = d.xbar - hw + 2.0 * hw * ix as f64 / (nx - 1) as f64;
                    let s = self.distance_to_rays(mu, t, x);
                    let bound = c * (s * s).min(self.s0 * self.s0 / 9.0);
                    let value = self.mode_local(model, mu, t, x)?.phi.im;
                    if value < bound * (1.0 - 1e-9) - 1e-14 {
                        return Err(PhaseError::FloorViolated { t, x, value, bound });
                    }
                    if bound > 0.0 {
                        worst = worst.min(value / bound);
                    }
                }
            }
        }
        Ok(worst)
    }
}

/// Log-log least-squares fit; returns `(slope, intercept, r2)`.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

#[derive(Clone, Debug)]
pub struct EikonalFit {
    pub s: Vec<f64>,
    pub residual: Vec<f64>,
    pub slope: Option<f64>,
    pub initial_mismatch: Vec<f64>,
    pub initial_slope: Option<f64>,
}

/// Threshold below which a sampled quantity counts as identically zero.
pub const EXACT_TOL: f64 = 1e-10;

/// Order of `V phi` and of `phi(0) - psi` in the distance `s` to a ray.
pub fn eikonal_residual(
    field: &PhaseField,
    model: &SystemModel,
    init: &InitialPhaseData,
    mu: usize,
    ray: usize,
) -> Result<EikonalFit, PhaseError> {
    let r = &field.modes[mu].rays[ray];
    let branch = field.modes[mu].branch;
    let tf = model.domain.t_final;
    let ns = 9;
    let s: Vec<f64> = (0..ns).map(|k| 10f64.powf(-3.0 + 2.0 * k as f64 / (ns - 1) as f64)).collect();
    let times: Vec<f64> = (1..=5).map(|k| tf * (2 * k - 1) as f64 / 10.0).collect();
    let mut residual = vec![0.0; ns];
    let mut initial = vec![0.0; ns];
    let psi = &init.modes[mu].psi;
    for (k, &sv) in s.iter().enumerate() {
        for sign in [-1.0, 1.0] {
            for &t in &times {
                let x = r.position(t) + sign * sv;
                let pl = field.mode_local(model, mu, t, x)?;
                let lam = eig_decompose(model, t, x)?.lambda[branch];
                residual[k] = f64::max(residual[k], (pl.phi_t + pl.phi_x * lam).norm());
            }
            let x = r.x0 + sign * sv;
            let pl = field.mode_local(model, mu, 0.0, x)?;
            initial[k] = f64::max(initial[k], (pl.phi - psi.eval_tx(0.0, x)).norm());
        }
    }
    let fit = |v: &[f64]| {
        if v.iter().all(|&r| r <= EXACT_TOL) {
            None
        } else {
            Some(loglog_fit(&s, v).0)
        }
    };
    Ok(EikonalFit { slope: fit(&residual), initial_slope: fit(&initial), s, residual, initial_mismatch: initial })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::model::{Domain, Mode};

    fn model(a11: &str) -> SystemModel {
        let a: Vec<Expr> = [a11, "0", "0", "-1"].iter().map(|s| parse_expr(s).unwrap()).collect();
        let z = [Expr::zero(), Expr::zero()];
        let d = Domain { t_final: 1.0, xbar: 0.0, rho: 8.0, c: 1.6, k_radius: 0.5 };
        SystemModel::new("t", 2, Mode::Semilinear, &a, &z, &z, d).unwrap()
    }

    fn init(psi: &str, zeros: Vec<f64>, branch: usize) -> InitialPhaseData {
        InitialPhaseData {
            modes: vec![ModeData::new(parse_expr(psi).unwrap(), zeros, branch, vec![Expr::num(1.0), Expr::zero()])],
        }
    }

    #[test]
    fn constant_speed_rays() {
        let m = model("1");
        let (ts, xs) = trace_ray(&m, 1, 0.0, 400).unwrap();
        for (t, x) in ts.iter().zip(&xs) {
            assert!((x - t).abs() < 1e-12);
        }
        let (ts, xs) = trace_ray(&m, 0, 0.2, 400).unwrap();
        for (t, x) in ts.iter().zip(&xs) {
            assert!((x - (0.2 - t)).abs() < 1e-12);
        }
    }

    #[test]
    fn variable_speed_ray_step_halving() {
        let m = model("1 + 0.3*sin(x)");
        let (_, x1) = trace_ray(&m, 1, 0.0, 400).unwrap();
        let (_, x2) = trace_ray(&m, 1, 0.0, 800).unwrap();
        for k in 0..x1.len() {
            assert!((x1[k] - x2[2 * k]).abs() < 1e-8);
        }
    }

    #[test]
    fn lateral_escape_detected() {
        let a: Vec<Expr> = ["20", "0", "0", "-1"].iter().map(|s| parse_expr(s).unwrap()).collect();
        let z = [Expr::zero(), Expr::zero()];
        let d = Domain { t_final: 1.0, xbar: 0.0, rho: 8.0, c: 1.6, k_radius: 0.5 };
        let m = SystemModel::new("t", 2, Mode::Semilinear, &a, &z, &z, d).unwrap();
        assert!(matches!(trace_ray(&m, 1, 0.0, 400), Err(PhaseError::RayEscapesLaterally { .. })));
    }

    #[test]
    fn constant_coefficients_keep_taylor_data() {
        let m = model("1");
        let data = init("x + 0.5*i*x^2", vec![0.0], 1);
        let r = solve_phase_ode(&m, 0, 0, &data.modes[0], 400).unwrap();
        for y in &r.y {
            assert!((y[1] - 1.0).abs() < 1e-15 && y[2].abs() < 1e-15 && (y[3] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_speed_closed_form() {
        let a = 0.5;
        let m = model("1 + 0.5*x");
        let data = init("x + 4*i*x^2", vec![0.0], 1);
        let r = solve_phase_ode(&m, 0, 0, &data.modes[0], 400).unwrap();
        for (t, y) in r.t.iter().zip(&r.y) {
            let e = (-a * t).exp();
            assert!((y[1] - e).abs() < 1e-9);
            assert!((y[3] - 8.0 * e * e).abs() < 1e-9);
            assert!(y[2].abs() < 1e-9);
        }
    }

    #[test]
    fn broken_phase_collapses() {
        let m = model("1");
        let data = init("x - 4*i*x^2", vec![0.0], 1);
        assert!(matches!(build_phase_field(&m, &data, 400, None), Err(PhaseError::ImaginaryPartCollapse { .. })));
    }

    #[test]
    fn bump_plateau_and_support() {
        let b = Bump { s0: 3.0 };
        assert_eq!(b.value(0.0), 1.0);
        assert_eq!(b.value(0.99), 1.0);
        assert_eq!(b.value(2.0), 0.0);
        assert_eq!(b.value(-2.5), 0.0);
        let (v, dv) = b.eval(1.4);
        let h = 1e-6;
        let fd = (b.value(1.4 + h) - b.value(1.4 - h)) / (2.0 * h);
        assert!(v > 0.0 && v < 1.0 && (fd - dv).abs() < 1e-7);
    }

    #[test]
    fn quadratic_region_and_floor() {
        let m = model("1");
        let data = init("x + 0.5*i*x^2", vec![0.0], 1);
        let f = build_phase_field(&m, &data, 400, None).unwrap();
        assert_eq!(f.s0, 2.0);
        for s in [-0.6, -0.1, 0.0, 0.3, 0.6] {
            let pl = f.mode_local(&m, 0, 0.5, 0.5 + s).unwrap();
            assert!((pl.phi.im - 0.5 * s * s).abs() < 1e-14);
        }
        let ratio = f.check_floor(&m, 41, 201).unwrap();
        assert!(ratio >= 1.0 - 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = model("1 + 0.3*sin(x)");
        let data = init("x + 4*i*x^2 + 0.3*x^3", vec![0.0], 1);
        let f = build_phase_field(&m, &data, 400, None).unwrap();
        let h = 1e-5;
        for (t, x) in [(0.3, 0.5), (0.5, 1.2), (0.7, 0.1), (0.4, -0.9), (0.6, 2.0)] {
            let pl = f.mode_local(&m, 0, t, x).unwrap();
            let ft =
                (f.mode_local(&m, 0, t + h, x).unwrap().phi - f.mode_local(&m, 0, t - h, x).unwrap().phi) / (2.0 * h);
            let fx =
                (f.mode_local(&m, 0, t, x + h).unwrap().phi - f.mode_local(&m, 0, t, x - h).unwrap().phi) / (2.0 * h);
            assert!((ft - pl.phi_t).norm() < 1e-6, "t at {t},{x}: {ft} vs {}", pl.phi_t);
            assert!((fx - pl.phi_x).norm() < 1e-6, "x at {t},{x}");
        }
    }

    #[test]
    fn eikonal_order_variable_speed() {
        let m = model("1 + 0.3*sin(x)");
        let data = init("x + 4*i*x^2 + 0.3*x^3", vec![0.0], 1);
        let f = build_phase_field(&m, &data, 400, None).unwrap();
        let fit = eikonal_residual(&f, &m, &data, 0, 0).unwrap();
        let slope = fit.slope.unwrap();
        assert!((2.9..=3.5).contains(&slope), "slope {slope}");
        assert!(fit.initial_slope.unwrap() >= 2.9);
        for y in &f.modes[0].rays[0].y {
            assert!(y[3] > 0.0);
        }
    }

    #[test]
    fn eikonal_exact_for_constant_speed_gaussian() {
        let m = model("1");
        let data = init("x + i*x^2", vec![0.0], 1);
        let f = build_phase_field(&m, &data, 400, None).unwrap();
        let fit = eikonal_residual(&f, &m, &data, 0, 0).unwrap();
        assert!(fit.slope.is_none() && fit.initial_slope.is_none());
        assert!(fit.residual.iter().all(|&r| r <= 1e-10));
    }

    #[test]
    fn characteristic_variety_along_ray() {
        let m = model("1 + 0.3*sin(x)");
        let data = init("x + 4*i*x^2", vec![0.0], 1);
        let f = build_phase_field(&m, &data, 400, None).unwrap();
        let r = &f.modes[0].rays[0];
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            let jet = r.jet(&m, t).unwrap();
            let tau = -jet.eig.lambda[1] * jet.xi;
            assert!((tau + jet.eig.lambda[1] * jet.xi).abs() <= 1e-10);
            assert!(jet.xi > 0.0);
            let pl = f.mode_local(&m, 0, t, jet.x).unwrap();
            assert!((pl.phi_t - C64::new(tau, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn two_phase_representatives_independent() {
        let m = model("1");
        let data = InitialPhaseData {
            modes: vec![
                ModeData::new(
                    parse_expr("(x+2) + 4*i*(x+2)^2").unwrap(),
                    vec![-2.0],
                    1,
                    vec![Expr::num(1.0), Expr::zero()],
                ),
                ModeData::new(
                    parse_expr("(x-2) + 4*i*(x-2)^2").unwrap(),
                    vec![2.0],
                    0,
                    vec![Expr::zero(), Expr::num(1.0)],
                ),
            ],
        };
        let f = build_phase_field(&m, &data, 400, None).unwrap();
        assert!((f.s0 - 2.0 / 3.0).abs() < 1e-12);
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            let x2 = f.modes[1].rays[0].position(t);
            assert!(f.mode_local(&m, 0, t, x2).unwrap().phi.im > 0.0);
            let x1 = f.modes[0].rays[0].position(t);
            assert!(f.mode_local(&m, 1, t, x1).unwrap().phi.im > 0.0);
            assert!(f.mode_local(&m, 0, t, x1).unwrap().phi.im.abs() < 1e-14);
        }
        f.check_floor(&m, 21, 201).unwrap();
    }

    #[test]
    fn multi_ray_mode_blends() {
        let m = model("1");
        let data = init("x + i*(x^2 - 9)^2/36", vec![-3.0, 3.0], 1);
        let f = build_phase_field(&m, &data, 400, None).unwrap();
        assert_eq!(f.modes[0].rays.len(), 2);
        let h = 1e-6;
        for x in [-3.0, -1.5, 0.0, 0.7, 3.0] {
            let pl = f.mode_local(&m, 0, 0.4, x + 0.4).unwrap();
            let fx = (f.mode_local(&m, 0, 0.4, x + 0.4 + h).unwrap().phi
                - f.mode_local(&m, 0, 0.4, x + 0.4 - h).unwrap().phi)
                / (2.0 * h);
            assert!((fx - pl.phi_x).norm() < 1e-5);
        }
        f.check_floor(&m, 11, 201).unwrap();
    }
}
