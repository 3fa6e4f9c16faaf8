//! Acceptance suite: one PASS/FAIL line per criterion, with pinned tolerances.
//!
//! Lines are written straight to stdout so they appear in `cargo test` output without
//! `--nocapture`. Criterion 10 is a diagnostic and never fails the suite.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use cgo_core::assemble::AsymptoticSolution;
use cgo_core::config::{registry_names, ModelConfig};
use cgo_core::harness::{evaluation_points, lemma_constant_check, SweepOutcome, SweepReport};
use cgo_core::model::SystemModel;
use cgo_core::phase::{build_phase_field, eikonal_residual, InitialPhaseData, PhaseField};
use cgo_core::pipeline::{run_command, Command, RunOptions};
use cgo_core::profile::{Keep, Profile, Shape, DEFAULT_G};
use cgo_core::report::Report;
use cgo_core::transport::{solve_transport, TransportSolution};
use cgo_core::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EIKONAL_MIN_SLOPE: f64 = 2.9;
const CLOSED_FORM_TOL: f64 = 1e-9;
const PRODUCT_REL_TOL: f64 = 1e-10;
const LEIBNIZ_TOL: f64 = 1e-12;
/// `d_theta - d_z - d_zbar` on generic coefficients: four roundings of the half-integer products.
const THETA_REL_TOL: f64 = 4.0 * f64::EPSILON;
const PROFILE_PAIRS: usize = 50;
const PROFILE_POINTS: usize = 100;
const LEMMA_SAMPLES: usize = 10_000;
const SLOPE_3_2: f64 = 1.4;
const SLOPE_1_2: f64 = 0.45;
const R2_MIN: f64 = 0.97;
const ENERGY_SLACK: f64 = 1.05;
const CONTRACTION_MAX: f64 = 0.8;
const PICARD_DIRECT_TOL: f64 = 1e-8;
const MAIN_SLACK: f64 = 0.45;
const ALL_RUNTIME_MAX: Duration = Duration::from_secs(600);
const EXACT_RESIDUAL_TOL: f64 = 1e-10;
const RECT_TOL: f64 = 1e-12;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn emit(n: usize, title: &str, o: &Outcome, gating: bool) {
    let status = if o.passed { "PASS" } else { "FAIL" };
    let note = if gating { "" } else { " (non-gating)" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "{status} criterion {n:>2}{note}: {title}: {}", o.detail).unwrap();
    out.flush().unwrap();
}

struct Setup {
    cfg: ModelConfig,
    model: SystemModel,
    init: InitialPhaseData,
    field: PhaseField,
}

fn setup(cfg: ModelConfig) -> Setup {
    let model = cfg.build_model().unwrap();
    let init = cfg.initial_data().unwrap();
    let field = build_phase_field(&model, &init, cfg.numerics.rk_steps, cfg.numerics.s0).unwrap();
    Setup { cfg, model, init, field }
}

fn registry(name: &str) -> Setup {
    setup(ModelConfig::registry(name).unwrap())
}

fn transport(s: &Setup) -> TransportSolution {
    solve_transport(&s.model, &s.field, &s.init, &s.cfg.transport_settings()).unwrap()
}

/// Runs the full `all` command for a shipped model; returns the report and wall time.
fn run_all(name: &str, out: &Path) -> (Report, Duration) {
    let cfg = ModelConfig::registry(name).unwrap();
    let started = Instant::now();
    let outcome = run_command(&cfg, Command::All, &RunOptions::new(out.join(name))).unwrap();
    (outcome.report, started.elapsed())
}

fn sweep<'a>(report: &'a Report, label: &str) -> &'a SweepReport {
    report.sweeps.iter().find(|s| s.label == label).unwrap_or_else(|| panic!("no sweep `{label}`"))
}

/// A genuine power-law fit: slope at or above `min_slope` and `R^2 >= R2_MIN`.
fn fit_clears(s: &SweepReport, min_slope: f64) -> (bool, String) {
    let passed =
        s.outcome == SweepOutcome::Pass && s.slope.is_some_and(|v| v >= min_slope) && s.r2.is_some_and(|r| r >= R2_MIN);
    let text = match (s.slope, s.r2) {
        (Some(v), Some(r)) => format!("{} slope {v:.3} (>= {min_slope}), R^2 {r:.4}", s.label),
        _ => format!("{} {:?}", s.label, s.outcome),
    };
    (passed, text)
}

fn fits(report: &Report, wanted: &[(&str, f64)]) -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for (label, min_slope) in wanted {
        let (ok, text) = fit_clears(sweep(report, label), *min_slope);
        passed &= ok;
        parts.push(text);
    }
    outcome(passed, parts.join("; "))
}

fn criterion_1() -> Outcome {
    let s = registry("S3");
    let fit = eikonal_residual(&s.field, &s.model, &s.init, 0, 0).unwrap();
    let (a, b) = (fit.slope.unwrap_or(f64::NAN), fit.initial_slope.unwrap_or(f64::NAN));
    outcome(
        a >= EIKONAL_MIN_SLOPE && b >= EIKONAL_MIN_SLOPE,
        format!("S3 |V phi| slope {a:.3}, |phi(0) - psi| slope {b:.3} over s in [1e-3, 1e-1] (>= {EIKONAL_MIN_SLOPE})"),
    )
}

fn criterion_2() -> Outcome {
    let mut min_im = f64::INFINITY;
    let mut nodes = 0;
    for name in registry_names() {
        let s = registry(name);
        for r in s.field.modes.iter().flat_map(|m| m.rays.iter()) {
            nodes += r.y.len() - 1;
            min_im = r.y.iter().map(|y| y[3]).fold(min_im, f64::min);
        }
    }
    // lambda = 1 + 0.5 x gives alpha = 0.5 and beta = 0 along every ray
    let cfg = ModelConfig::parse(
        "[system]\nn = 2\nmode = \"semilinear\"\nA11 = \"1 + 0.5*x\"\nA22 = \"-1\"\n\n\
         [[phases]]\npsi = \"x + 4*i*x^2\"\nzeros = [0.0]\nbranch = 2\nh = [\"1\", \"0\"]\n",
    )
    .unwrap();
    let s = setup(cfg);
    let ray = &s.field.modes[0].rays[0];
    let mut err: f64 = 0.0;
    for (t, y) in ray.t.iter().zip(&ray.y) {
        let xi = (-0.5 * t).exp();
        let phi = C64::new(0.0, 8.0) * (-t).exp();
        err = err.max((y[1] - xi).abs()).max((C64::new(y[2], y[3]) - phi).norm());
    }
    outcome(
        min_im > 0.0 && err <= CLOSED_FORM_TOL,
        format!(
            "min Im Phi {min_im:.3} over {nodes} time nodes on {} shipped models; closed form error {err:.1e} (<= {CLOSED_FORM_TOL:.0e})",
            registry_names().len()
        ),
    )
}

fn factor(rng: &mut ChaCha8Rng, shape: Shape) -> Profile {
    let mut p = Profile::new(2, DEFAULT_G, shape);
    for mu in 0..2 {
        let mut part = Profile::random_mode(rng, 2, mu, 2, shape, 1.0);
        part.gmax = DEFAULT_G;
        p = p.add(&part).unwrap();
    }
    p
}

fn criterion_3() -> Outcome {
    let s = registry("S1-two-phase");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = s.model.domain;
    let (mut product_err, mut leibniz_err, mut theta_err, mut symbol_err): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..PROFILE_PAIRS {
        let a = factor(&mut rng, Shape::Scalar);
        let b = factor(&mut rng, Shape::Vector(2));
        let (ab, _) = a.product(&b, Keep::Full).unwrap();
        for _ in 0..PROFILE_POINTS {
            // points within sqrt(eps) of a ray, where the harmonics are not underflowed
            let t = rng.gen::<f64>() * d.t_final;
            let eps = 0.0125 + rng.gen::<f64>() * (0.2 - 0.0125);
            let mode = &s.field.modes[rng.gen_range(0..2)];
            let x = mode.rays[0].position(t) + (2.0 * rng.gen::<f64>() - 1.0) * eps.sqrt();
            let phases = s.field.local(&s.model, t, x).unwrap().phases();
            let lhs = ab.evaluate(&phases, eps);
            let ea = a.evaluate(&phases, eps)[0];
            let scale: f64 = ab
                .map(|_, c| c.iter().map(|z| C64::new(z.norm(), 0.0)).collect())
                .evaluate(&phases.iter().map(|z| C64::new(0.0, z.im)).collect::<Vec<_>>(), eps)
                .iter()
                .map(|z| z.norm())
                .sum();
            for (l, rb) in lhs.iter().zip(b.evaluate(&phases, eps)) {
                product_err = product_err.max((l - ea * rb).norm() / scale.max(f64::MIN_POSITIVE));
            }
        }
        for mu in 0..2 {
            let lhs = ab.dz(mu);
            let rhs =
                a.dz(mu).product(&b, Keep::Full).unwrap().0.add(&a.product(&b.dz(mu), Keep::Full).unwrap().0).unwrap();
            leibniz_err = leibniz_err.max(lhs.sub(&rhs).unwrap().sup_norm());
            let theta = ab.dtheta(mu).sub(&ab.dz(mu).add(&ab.dzbar(mu)).unwrap()).unwrap();
            theta_err = theta_err.max(theta.sup_norm() / ab.dtheta(mu).sup_norm().max(f64::MIN_POSITIVE));
            // on unit coefficients the half-integer symbols are exact
            let unit = ab.map(|_, c| vec![C64::new(1.0, 0.0); c.len()]);
            let symbol = unit.dtheta(mu).sub(&unit.dz(mu).add(&unit.dzbar(mu)).unwrap()).unwrap();
            symbol_err = symbol_err.max(symbol.sup_norm());
        }
    }
    outcome(
        product_err <= PRODUCT_REL_TOL && leibniz_err <= LEIBNIZ_TOL && symbol_err == 0.0 && theta_err <= THETA_REL_TOL,
        format!(
            "{PROFILE_PAIRS} pairs x {PROFILE_POINTS} points: product relative error {product_err:.1e} (<= {PRODUCT_REL_TOL:.0e}), \
             Leibniz {leibniz_err:.1e} (<= {LEIBNIZ_TOL:.0e}), d_theta - d_z - d_zbar symbols {symbol_err:.0e} (exact), \
             on coefficients {theta_err:.1e} relative (<= 4 ulp)"
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for name in ["S1", "S3"] {
        let s = registry(name);
        let checks = lemma_constant_check(&s.model, &s.field, 0, LEMMA_SAMPLES, 1, s.field.modes[0].c_floor).unwrap();
        let violations: usize = checks.iter().map(|c| c.violations).sum();
        let samples = checks.iter().map(|c| c.samples).min().unwrap_or(0);
        let worst = checks.iter().map(|c| c.worst_ratio).fold(0.0, f64::max);
        passed &= violations == 0 && samples == LEMMA_SAMPLES;
        parts.push(format!(
            "{name}: {violations} violations for k = 1,2,3 on {samples} samples, worst ratio {worst:.3}"
        ));
    }
    outcome(passed, parts.join("; "))
}

fn criterion_7() -> Outcome {
    let mut cfg = ModelConfig::registry("S1").unwrap();
    cfg.system.t_final = Some(0.5);
    cfg.phases[0].h = vec!["0.1".into(), "0".into()];
    let s = setup(cfg);
    let tr = transport(&s);
    let h_norm = s.init.modes[0].h_at(s.field.modes[0].rays[0].x0).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let (mut energy, mut contraction, mut direct): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut iterates = 0;
    for r in tr.all() {
        energy = energy.max(r.energy_ratio);
        direct = direct.max(r.direct_difference);
        iterates = iterates.max(r.history.len() + 1);
        // history starts at nu = 2, so ratio k compares nu = k + 3 with nu = k + 2
        contraction = r.contraction_ratios().into_iter().skip(1).fold(contraction, f64::max);
    }
    outcome(
        energy <= ENERGY_SLACK && contraction <= CONTRACTION_MAX && direct <= PICARD_DIRECT_TOL && tr.t_final == 0.5,
        format!(
            "S1, |H| = {h_norm}, T = {}: max energy ratio {energy:.4} (<= {ENERGY_SLACK}), contraction after nu = 3 {contraction:.2e} \
             (<= {CONTRACTION_MAX}) over {iterates} iterates, Picard vs direct {direct:.1e} (<= {PICARD_DIRECT_TOL:.0e})",
            tr.t_final
        ),
    )
}

fn criterion_9(runs: &[(&str, Report, Duration)]) -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for (name, report, elapsed) in runs {
        let p = if *name == "S1" { 0.0 } else { 1.0 };
        for label in ["initial mismatch", "residual L(v)"] {
            let (ok, text) = fit_clears(sweep(report, label), p + MAIN_SLACK);
            passed &= ok;
            parts.push(format!("{name} {text}"));
        }
        passed &= *elapsed <= ALL_RUNTIME_MAX;
        parts.push(format!("{name} `all` in {:.0} s (<= {} s)", elapsed.as_secs_f64(), ALL_RUNTIME_MAX.as_secs()));
    }
    outcome(passed, parts.join("; "))
}

fn criterion_10(out: &Path) -> Outcome {
    let text = std::fs::read_to_string(out.join("S1").join("compare.csv")).unwrap_or_default();
    let rows: Vec<(f64, f64)> = text
        .lines()
        .skip(1)
        .filter_map(|l| {
            let v: Vec<f64> = l.split(',').filter_map(|f| f.parse().ok()).collect();
            (v.len() == 4).then(|| (v[0], v[1]))
        })
        .collect();
    let monotone = rows.len() == 3 && rows.windows(2).all(|w| w[1].1 < w[0].1);
    let table: Vec<String> = rows.iter().map(|(e, s)| format!("eps {e}: {s:.2e}")).collect();
    outcome(monotone, format!("S1 sup discrepancy {}", table.join(", ")))
}

fn criterion_11() -> Outcome {
    let s = registry("L1");
    let tr = transport(&s);
    let sol = AsymptoticSolution::new(&s.model, &s.field, &s.init, &tr, s.cfg.numerics.rect_tol);
    let pts = evaluation_points(&s.model, &s.field, &s.cfg.numerics.grid);
    let data = sol.sample(&pts).unwrap();
    let residual = s
        .cfg
        .numerics
        .eps
        .iter()
        .flat_map(|&eps| data.iter().map(move |d| (d, eps)))
        .map(|(d, eps)| d.residual(&s.model, eps))
        .fold(0.0, f64::max);
    let mut rect: f64 = 0.0;
    for name in registry_names() {
        let m = registry(name);
        rect = transport(&m).all().map(|r| r.rect_mass.abs()).fold(rect, f64::max);
    }
    outcome(
        residual <= EXACT_RESIDUAL_TOL && rect <= RECT_TOL,
        format!(
            "L1 max |L(v)| {residual:.1e} over {} points x {} eps (<= {EXACT_RESIDUAL_TOL:.0e}); max rectification mass {rect:.1e} on {} shipped models",
            data.len(),
            s.cfg.numerics.eps.len(),
            registry_names().len()
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let mut failed = Vec::new();
    let mut record = |n: usize, title: &str, o: Outcome, gating: bool| {
        emit(n, title, &o, gating);
        if gating && !o.passed {
            failed.push(n);
        }
    };
    record(1, "eikonal order", criterion_1(), true);
    record(2, "phase positivity", criterion_2(), true);
    record(3, "profile algebra oracle", criterion_3(), true);
    record(4, "off-ray constant", criterion_4(), true);
    let runs: Vec<(&str, Report, Duration)> = ["S1", "S2", "S3"]
        .into_iter()
        .map(|name| {
            let (report, elapsed) = run_all(name, tmp.path());
            (name, report, elapsed)
        })
        .collect();
    let s3 = &runs[2].1;
    record(
        5,
        "operator identities (S3)",
        fits(s3, &[("E^2-E", SLOPE_3_2), ("PE", SLOPE_3_2), ("PQ-(I-E)", SLOPE_1_2)]),
        true,
    );
    record(6, "class stability (S3)", fits(s3, &[("class k=0 (Q)", SLOPE_1_2), ("class k=2 (E)", SLOPE_3_2)]), true);
    record(7, "transport well-posedness", criterion_7(), true);
    record(8, "profile equations (S3)", fits(s3, &[("(I-E)U0", SLOPE_3_2), ("E N(U0)", SLOPE_1_2)]), true);
    record(9, "main theorem", criterion_9(&runs), true);
    record(10, "reference diagnostic", criterion_10(tmp.path()), false);
    record(11, "degenerate exactness", criterion_11(), true);
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
