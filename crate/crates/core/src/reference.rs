//! Finite-difference reference solution by the two-step Richtmyer Lax-Wendroff scheme.
//!
//! The scheme is written for the non-conservative form `u_t + A(t,x,u) u_x + F(t,x,u) = 0`.
//! Every step drops the outermost node on each side, so the computed lens stays inside the
//! domain of determinacy of the initial slice and no boundary data is needed.

use serde::{Deserialize, Serialize};

use crate::assemble::AsymptoticSolution;
use crate::error::{CompareError, HarnessError};
use crate::model::{CVec, SystemModel};
use crate::par_map;
use crate::C64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceSettings {
    /// Grid nodes per unit of `eps` on the coarsest level.
    pub nodes_per_eps: f64,
    pub cfl: f64,
    /// Half-width of the final window around each ray.
    pub window: f64,
    /// Smallest accepted ratio of successive level differences.
    pub min_ratio: f64,
}

impl Default for ReferenceSettings {
    fn default() -> Self {
        ReferenceSettings { nodes_per_eps: 20.0, cfl: 0.8, window: 0.75, min_ratio: 3.0 }
    }
}

#[derive(Clone, Debug)]
pub struct ReferenceSolution {
    pub eps: f64,
    pub t_final: f64,
    /// Spacing of the finest level.
    pub dx: f64,
    pub x: Vec<f64>,
    pub u: Vec<CVec>,
    /// Sup differences between levels `(h, h/2)` and `(h/2, h/4)` on the shared nodes.
    pub level_differences: [f64; 2],
    pub ratio: f64,
}

/// One explicit solve on `[x_lo, x_lo + (n-1) dx]` up to `t_final`.
pub fn lax_wendroff(
    model: &SystemModel,
    datum: &(dyn Fn(f64) -> CVec + Sync),
    x_lo: f64,
    nodes: usize,
    dx: f64,
    t_final: f64,
    cfl: f64,
) -> Result<(Vec<f64>, Vec<CVec>), HarnessError> {
    let c = model.domain.c;
    let steps = (t_final * c / (cfl * dx)).ceil().max(1.0) as usize;
    let dt = t_final / steps as f64;
    if nodes <= 2 * steps {
        return Err(HarnessError::CflViolation(format!("lens of {nodes} nodes too short for {steps} steps")));
    }
    let xs: Vec<f64> = (0..nodes).map(|j| x_lo + j as f64 * dx).collect();
    let mut u: Vec<CVec> = par_map(&xs, |&x| datum(x));
    let (half_c, inv_dx) = (C64::new(0.5, 0.0), C64::new(1.0 / dx, 0.0));
    let mut first = 0usize;
    for k in 0..steps {
        let t = k as f64 * dt;
        let th = t + 0.5 * dt;
        let m = u.len();
        if k % 20 == 0 {
            check_speed(model, t, &xs[first..first + m], &u, c * dt / dx)?;
        }
        let half: Vec<usize> = (0..m - 1).collect();
        let mid: Vec<CVec> = par_map(&half, |&j| {
            let x = xs[first + j] + 0.5 * dx;
            let avg = (&u[j] + &u[j + 1]) * half_c;
            let s = avg.as_slice();
            let du = (&u[j + 1] - &u[j]) * inv_dx;
            &avg - (model.a_at(t, x, s) * du + model.f_at(t, x, s)) * C64::new(0.5 * dt, 0.0)
        });
        let inner: Vec<usize> = (1..m - 1).collect();
        u = par_map(&inner, |&j| {
            let x = xs[first + j];
            let star = (&mid[j - 1] + &mid[j]) * half_c;
            let s = star.as_slice();
            let du = (&mid[j] - &mid[j - 1]) * inv_dx;
            &u[j] - (model.a_at(th, x, s) * du + model.f_at(th, x, s)) * C64::new(dt, 0.0)
        });
        first += 1;
    }
    Ok((xs[first..first + u.len()].to_vec(), u))
}

fn check_speed(model: &SystemModel, t: f64, xs: &[f64], u: &[CVec], courant: f64) -> Result<(), HarnessError> {
    for (x, v) in xs.iter().zip(u).step_by(8) {
        let a = model.a_at(t, *x, v.as_slice());
        let speed = a.symmetric_eigenvalues().iter().fold(0.0f64, |m, l| m.max(l.abs()));
        if speed * courant / model.domain.c > 1.0 {
            return Err(HarnessError::CflViolation(format!(
                "speed {speed:.3} at (t={t:.3}, x={x:.3}) exceeds the CFL bound"
            )));
        }
    }
    Ok(())
}

/// Initial interval whose shrinking lens covers `window` around every ray at `t_final`.
pub fn initial_lens(sol: &AsymptoticSolution, t_final: f64, settings: &ReferenceSettings) -> (f64, f64) {
    let shrink = t_final * sol.model.domain.c / settings.cfl;
    let ends = sol.field.modes.iter().flat_map(|m| m.rays.iter()).map(|r| r.position(t_final));
    let (lo, hi) = ends.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let d = sol.model.domain;
    ((lo - settings.window - shrink).max(d.xbar - d.rho), (hi + settings.window + shrink).min(d.xbar + d.rho))
}

/// Reference at `eps` on three levels `h = eps / nodes_per_eps`, `h/2`, `h/4`; the finest is kept.
pub fn solve_reference(
    sol: &AsymptoticSolution,
    eps: f64,
    settings: &ReferenceSettings,
) -> Result<ReferenceSolution, HarnessError> {
    let t_final = sol.transport.t_final;
    let (lo, hi) = initial_lens(sol, t_final, settings);
    let datum = |x: f64| sol.initial_datum(x, eps);
    let h0 = eps / settings.nodes_per_eps;
    let coarse_nodes = ((hi - lo) / h0).floor() as usize + 1;
    let mut levels = Vec::new();
    for l in 0..3 {
        let f = 1usize << l;
        let dx = h0 / f as f64;
        levels.push(lax_wendroff(sol.model, &datum, lo, (coarse_nodes - 1) * f + 1, dx, t_final, settings.cfl)?);
    }
    let diff = |a: &(Vec<f64>, Vec<CVec>), b: &(Vec<f64>, Vec<CVec>)| {
        let mut m: f64 = 0.0;
        for (xa, ua) in a.0.iter().zip(&a.1) {
            let j = ((xa - b.0[0]) / (b.0[1] - b.0[0])).round() as usize;
            if let Some(ub) = b.1.get(j) {
                m = m.max((ua - ub).norm());
            }
        }
        m
    };
    let d1 = diff(&levels[0], &levels[1]);
    let d2 = diff(&levels[1], &levels[2]);
    let ratio = if d2 > 0.0 { d1 / d2 } else { f64::INFINITY };
    if ratio < settings.min_ratio {
        return Err(HarnessError::SelfConvergenceFailed { ratio });
    }
    let (x, u) = levels.pop().expect("three levels");
    Ok(ReferenceSolution { eps, t_final, dx: h0 / 4.0, x, u, level_differences: [d1, d2], ratio })
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareRow {
    pub eps: f64,
    pub sup: f64,
    pub l2: f64,
    pub self_convergence_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
    /// Sup discrepancy decreases as `eps` halves.
    pub monotone: bool,
}

pub fn default_compare_eps() -> Vec<f64> {
    vec![0.2, 0.1, 0.05]
}

/// Pointwise `|v - u|` at time `t` over `(x, u)` pairs.
pub fn discrepancy(
    sol: &AsymptoticSolution,
    eps: f64,
    t: f64,
    nodes: &[(f64, &CVec)],
) -> Result<Vec<f64>, CompareError> {
    let errs: Result<Vec<f64>, _> =
        par_map(nodes, |&(x, u)| sol.point(t, x).map(|d| (d.evaluate(eps, sol.p).0 - u).norm())).into_iter().collect();
    Ok(errs?)
}

/// `v` against the reference at the final time on the lens nodes within `window` of a ray.
pub fn compare(
    sol: &AsymptoticSolution,
    eps_list: &[f64],
    settings: &ReferenceSettings,
) -> Result<Comparison, CompareError> {
    let mut rows = Vec::new();
    for &eps in eps_list {
        let r = solve_reference(sol, eps, settings)?;
        let t = r.t_final;
        let rays: Vec<f64> = sol.field.modes.iter().flat_map(|m| m.rays.iter()).map(|ray| ray.position(t)).collect();
        // compare on a sub-grid of spacing about eps / 20
        let stride = ((eps / 20.0) / r.dx).round().max(1.0) as usize;
        let nodes: Vec<(f64, &CVec)> =
            r.x.iter()
                .zip(&r.u)
                .step_by(stride)
                .filter(|(x, _)| rays.iter().any(|rx| (*x - rx).abs() <= settings.window))
                .map(|(x, u)| (*x, u))
                .collect();
        let errs = discrepancy(sol, eps, t, &nodes)?;
        let sup = errs.iter().cloned().fold(0.0, f64::max);
        let l2 = (errs.iter().map(|e| e * e).sum::<f64>() * r.dx * stride as f64).sqrt();
        rows.push(CompareRow { eps, sup, l2, self_convergence_ratio: r.ratio });
    }
    let monotone = rows.windows(2).all(|w| w[1].sup < w[0].sup);
    Ok(Comparison { rows, monotone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::phase::build_phase_field;
    use crate::transport::solve_transport;

    fn with_solution<R>(name: &str, t_final: Option<f64>, f: impl FnOnce(&AsymptoticSolution) -> R) -> R {
        let mut cfg = ModelConfig::registry(name).unwrap();
        if let Some(t) = t_final {
            cfg.system.t_final = Some(t);
        }
        let model = cfg.build_model().unwrap();
        let init = cfg.initial_data().unwrap();
        let field = build_phase_field(&model, &init, cfg.numerics.rk_steps, None).unwrap();
        let ts = cfg.transport_settings();
        let tr = solve_transport(&model, &field, &init, &ts).unwrap();
        let sol = AsymptoticSolution::new(&model, &field, &init, &tr, ts.rect_tol);
        f(&sol)
    }

    #[test]
    fn linear_transport_is_second_order() {
        with_solution("L1", Some(0.5), |sol| {
            let datum = |x: f64| CVec::from_vec(vec![C64::new((-x * x).exp(), 0.0), C64::new(x.cos(), x.sin())]);
            let exact = |t: f64, x: f64| [datum(x - t)[0], datum(x + t)[1]];
            let err = |dx: f64| {
                let (xs, u) = lax_wendroff(sol.model, &datum, -4.0, (8.0 / dx) as usize + 1, dx, 0.5, 0.8).unwrap();
                xs.iter().zip(&u).fold(0.0f64, |m, (x, v)| {
                    let e = exact(0.5, *x);
                    m.max((v[0] - e[0]).norm()).max((v[1] - e[1]).norm())
                })
            };
            let (e1, e2) = (err(0.04), err(0.02));
            assert!(e1 < 1e-3, "{e1}");
            let ratio = e1 / e2;
            assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
        });
    }

    #[test]
    fn semilinear_reference_self_converges() {
        with_solution("S1", Some(0.25), |sol| {
            let r = solve_reference(sol, 0.1, &ReferenceSettings::default()).unwrap();
            assert!((3.5..4.5).contains(&r.ratio), "ratio {}", r.ratio);
            assert!(r.level_differences[1] < r.level_differences[0]);
        });
    }

    #[test]
    fn solution_against_itself_is_zero() {
        with_solution("S1", None, |sol| {
            let (eps, t) = (0.1, 0.5);
            let xs: Vec<f64> = (0..41).map(|j| -1.0 + 0.05 * j as f64).collect();
            let v: Vec<CVec> = xs.iter().map(|&x| sol.point(t, x).unwrap().evaluate(eps, sol.p).0).collect();
            let nodes: Vec<(f64, &CVec)> = xs.iter().cloned().zip(&v).collect();
            let errs = discrepancy(sol, eps, t, &nodes).unwrap();
            assert!(errs.iter().all(|e| *e == 0.0));
        });
    }

    #[test]
    fn short_lens_is_rejected() {
        with_solution("L1", None, |sol| {
            let datum = |_: f64| CVec::zeros(2);
            let r = lax_wendroff(sol.model, &datum, 0.0, 10, 0.01, 1.0, 0.8);
            assert!(matches!(r, Err(HarnessError::CflViolation(_))));
        });
    }
}
