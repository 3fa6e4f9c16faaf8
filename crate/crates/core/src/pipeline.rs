//! Stage orchestration for the `check`, `phase`, `transport`, `assemble`, `sweep`,
//! `compare` and `all` commands.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::assemble::{
    field_rows, initial_mismatch_sweep, profile_sweeps, residual_sweep, AsymptoticSolution, PointData,
};
use crate::config::ModelConfig;
use crate::error::PhaseError;
use crate::harness::{evaluation_points, lemma_constant_check, lemma_order_sweeps, GridSpec};
use crate::model::{validate_system, SystemModel};
use crate::multiplier::{certify, class_stability_sweep, verify_operator_identities, Multiplier};
use crate::phase::{build_phase_field, eikonal_residual, InitialPhaseData, PhaseField};
use crate::reference::{compare, default_compare_eps, ReferenceSettings};
use crate::report::{compare_csv, csv_string, phase_csv, transport_csv, write_artifact, Check, Report};
use crate::transport::{solve_transport, TransportSolution};
use crate::CgoError;

/// Smallest accepted log-log slope of the eikonal residual and the initial phase mismatch.
pub const EIKONAL_SLOPE: f64 = 2.9;
/// Largest accepted Picard contraction ratio from the third iterate on.
pub const CONTRACTION_MAX: f64 = 0.8;
/// Largest accepted gap between the Picard and direct transport solutions.
pub const DIRECT_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Command {
    Check,
    Phase,
    Transport,
    Assemble,
    Sweep,
    Compare,
    All,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Check,
        Command::Phase,
        Command::Transport,
        Command::Assemble,
        Command::Sweep,
        Command::Compare,
        Command::All,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Phase => "phase",
            Command::Transport => "transport",
            Command::Assemble => "assemble",
            Command::Sweep => "sweep",
            Command::Compare => "compare",
            Command::All => "all",
        }
    }

    fn needs(self, stage: Command) -> bool {
        match self {
            Command::All => true,
            Command::Compare => stage <= Command::Transport || stage == Command::Compare,
            c => stage <= c,
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Command::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            format!("unknown command `{s}` (expected one of check, phase, transport, assemble, sweep, compare, all)")
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    pub compare_eps: Vec<f64>,
    /// Side of the uniform grid of the field dump.
    pub field_grid: usize,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> RunOptions {
        RunOptions { out: out.into(), compare_eps: default_compare_eps(), field_grid: 41 }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: Report,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        self.report.exit_code()
    }
}

struct Run<'c> {
    cfg: &'c ModelConfig,
    out: &'c Path,
    report: Report,
    files: Vec<PathBuf>,
}

/// Runs `command` and writes its artifacts to `opts.out`. A stage error still leaves a
/// `summary.txt` with everything measured before it.
pub fn run_command(cfg: &ModelConfig, command: Command, opts: &RunOptions) -> Result<RunOutcome, CgoError> {
    std::fs::create_dir_all(&opts.out)?;
    let mut run = Run {
        cfg,
        out: &opts.out,
        report: Report {
            model: cfg.system.model.clone().unwrap_or_else(|| "custom".into()),
            command: command.name().into(),
            ..Report::default()
        },
        files: Vec::new(),
    };
    let result = run.stages(command, opts);
    if let Err(e) = &result {
        run.report.error = Some(e.to_string());
    }
    let summary = run.report.summary_text();
    let path = write_artifact(run.out, "summary.txt", &summary)?;
    run.files.push(path);
    result?;
    Ok(RunOutcome { report: run.report, files: run.files })
}

impl Run<'_> {
    fn write(&mut self, name: &str, text: &str) -> Result<(), CgoError> {
        let path = write_artifact(self.out, name, text)?;
        self.files.push(path);
        Ok(())
    }

    fn stages(&mut self, command: Command, opts: &RunOptions) -> Result<(), CgoError> {
        let model = self.cfg.build_model()?;
        let init = self.cfg.initial_data()?;
        self.check(&model, &init)?;
        if !command.needs(Command::Phase) {
            return Ok(());
        }
        let field = self.phase(&model, &init)?;
        if !command.needs(Command::Transport) {
            return Ok(());
        }
        let transport = self.transport(&model, &field, &init)?;
        let sol = AsymptoticSolution::new(&model, &field, &init, &transport, self.cfg.numerics.rect_tol);
        if command.needs(Command::Assemble) {
            let data = self.assemble(&sol, opts)?;
            if command.needs(Command::Sweep) {
                self.sweep(&sol, &data)?;
                self.write("report.csv", &self.report.sweep_csv()?)?;
            }
        }
        if command.needs(Command::Compare) {
            self.compare(&sol, opts)?;
        }
        Ok(())
    }

    fn check(&mut self, model: &SystemModel, init: &InitialPhaseData) -> Result<(), CgoError> {
        let v = validate_system(model, &self.cfg.sample_plan())?;
        self.report.checks.push(Check::gated(
            "system validation",
            2,
            v.passed,
            format!(
                "{} samples, Hermitian deviation {:.1e}, min gap {:.3}, max speed {:.3}",
                v.samples, v.max_hermitian_deviation, v.min_gap, v.max_speed
            ),
        ));
        init.validate(model)?;
        self.report.checks.push(Check::gated("initial phase data", 3, true, format!("{} phase(s)", init.m())));
        Ok(())
    }

    fn phase(&mut self, model: &SystemModel, init: &InitialPhaseData) -> Result<PhaseField, CgoError> {
        let n = &self.cfg.numerics;
        let field = build_phase_field(model, init, n.rk_steps, n.s0)?;
        let min_im =
            field.modes.iter().flat_map(|m| m.rays.iter()).map(|r| r.inf_im_phi()).fold(f64::INFINITY, f64::min);
        let nodes: usize = field.modes.iter().flat_map(|m| m.rays.iter()).map(|r| r.t.len()).sum();
        self.report.checks.push(Check::gated(
            "Im Phi positive",
            3,
            min_im > 0.0,
            format!("min Im Phi {min_im:.4} over {nodes} ray nodes"),
        ));
        let floor = field.check_floor(model, 41, 201)?;
        self.report.checks.push(Check::gated("imaginary floor", 3, true, format!("worst margin ratio {floor:.3}")));
        for (mu, m) in field.modes.iter().enumerate() {
            for l in 0..m.rays.len() {
                let fit = eikonal_residual(&field, model, init, mu, l)?;
                for (what, slope) in [("eikonal order", fit.slope), ("initial phase order", fit.initial_slope)] {
                    let label = format!("{what} ({},{})", mu + 1, l + 1);
                    let (passed, detail) = match slope {
                        Some(s) => (s >= EIKONAL_SLOPE, format!("slope {s:.3} (threshold {EIKONAL_SLOPE})")),
                        None => (true, "exact".to_string()),
                    };
                    self.report.checks.push(Check::gated(&label, 3, passed, detail));
                    if !passed {
                        return Err(PhaseError::OrderTooLow { slope: slope.unwrap_or(f64::NAN) }.into());
                    }
                }
            }
        }
        let cert = certify(model, &field, n.g)?;
        self.report.checks.push(Check::gated(
            "small-divisor separation",
            5,
            cert.c_min >= 0.9 * cert.separation_bound && cert.c_min > 0.0,
            format!("C_min {:.4}, gap bound {:.4}, max det {:.1e}", cert.c_min, cert.separation_bound, cert.max_det),
        ));
        self.write("phase.csv", &phase_csv(&field)?)?;
        Ok(field)
    }

    fn transport(
        &mut self,
        model: &SystemModel,
        field: &PhaseField,
        init: &InitialPhaseData,
    ) -> Result<TransportSolution, CgoError> {
        let ts = self.cfg.transport_settings();
        let tr = solve_transport(model, field, init, &ts)?;
        let mut energy: f64 = 0.0;
        let mut contraction: f64 = 0.0;
        let mut direct: f64 = 0.0;
        let mut rect: f64 = 0.0;
        for r in tr.all() {
            energy = energy.max(r.energy_ratio);
            direct = direct.max(r.direct_difference);
            rect = rect.max(r.rect_mass);
            contraction = r.contraction_ratios().into_iter().skip(1).fold(contraction, f64::max);
        }
        self.report.checks.push(Check::gated(
            "transport horizon",
            4,
            tr.halvings == 0,
            format!("T = {} after {} halving(s)", tr.t_final, tr.halvings),
        ));
        self.report.checks.push(Check::gated(
            "linear energy estimate",
            4,
            energy <= ts.energy_slack,
            format!("max |U|^2 / (e^(Ct) |H|^2) = {energy:.4} (bound {})", ts.energy_slack),
        ));
        self.report.checks.push(Check::gated(
            "Picard contraction",
            4,
            contraction <= CONTRACTION_MAX,
            format!("max ratio from the third iterate {contraction:.2e} (bound {CONTRACTION_MAX})"),
        ));
        self.report.checks.push(Check::gated(
            "Picard vs direct",
            4,
            direct <= DIRECT_TOL,
            format!("max difference {direct:.2e} (bound {DIRECT_TOL:.0e})"),
        ));
        self.report.checks.push(Check::gated(
            "no rectification",
            4,
            rect <= ts.rect_tol,
            format!("zero-frequency mass {:.1e}", rect.abs()),
        ));
        self.write("transport.csv", &transport_csv(&tr)?)?;
        Ok(tr)
    }

    fn assemble(&mut self, sol: &AsymptoticSolution, opts: &RunOptions) -> Result<Vec<PointData>, CgoError> {
        let pts = evaluation_points(sol.model, sol.field, &self.cfg.numerics.grid);
        let data = sol.sample(&pts)?;
        let eu1 = data.iter().map(PointData::on_ray_eu1).fold(0.0, f64::max);
        self.report.checks.push(Check::info(
            "assembly",
            true,
            format!("{} evaluation points, max on-ray |E U1| {eu1:.1e}", data.len()),
        ));
        let dump_spec = GridSpec { nt: 0, ns: 0, uniform: opts.field_grid };
        let dump = sol.sample(&evaluation_points(sol.model, sol.field, &dump_spec))?;
        let rows = field_rows(sol.model, &dump, &self.cfg.numerics.eps);
        self.write("field.csv", &csv_string(&rows)?)?;
        Ok(data)
    }

    fn sweep(&mut self, sol: &AsymptoticSolution, data: &[PointData]) -> Result<(), CgoError> {
        let (model, field) = (sol.model, sol.field);
        let n = &self.cfg.numerics;
        let settings = self.cfg.sweep_settings();
        let setup = self.cfg.identity_setup();
        for (mu, m) in field.modes.iter().enumerate() {
            for c in lemma_constant_check(model, field, mu, n.lemma_samples, n.seed, m.c_floor)? {
                self.report.checks.push(Check::gated(
                    &format!("off-ray constant k={} (mode {})", c.k, mu + 1),
                    5,
                    c.violations == 0,
                    format!("{} violations in {} samples, worst ratio {:.3}", c.violations, c.samples, c.worst_ratio),
                ));
            }
            for mut r in lemma_order_sweeps(model, field, mu, &n.grid, &settings)? {
                r.label = format!("{} (mode {})", r.label, mu + 1);
                self.report.sweeps.push(r);
            }
        }
        let pts: Vec<(f64, f64)> = data.iter().map(|d| (d.t, d.x)).collect();
        self.report.sweeps.extend(verify_operator_identities(model, field, &pts, &setup, &settings)?);
        for (base, k) in [(Multiplier::Q, 0), (Multiplier::E { outside: setup.outside }, 2)] {
            self.report.sweeps.push(class_stability_sweep(model, field, &pts, &base, k, &setup, &settings)?);
        }
        let solve_tol = self.cfg.transport_settings().tol;
        self.report.sweeps.extend(profile_sweeps(data, model.n, &setup, &settings, solve_tol)?);
        self.report.sweeps.push(initial_mismatch_sweep(sol, data, &settings));
        self.report.sweeps.push(residual_sweep(model, data, &settings));
        Ok(())
    }

    fn compare(&mut self, sol: &AsymptoticSolution, opts: &RunOptions) -> Result<(), CgoError> {
        match compare(sol, &opts.compare_eps, &ReferenceSettings::default()) {
            Ok(c) => {
                let sups: Vec<String> = c.rows.iter().map(|r| format!("{:.2e}", r.sup)).collect();
                let ratios: Vec<String> = c.rows.iter().map(|r| format!("{:.2}", r.self_convergence_ratio)).collect();
                self.report.checks.push(Check::info(
                    "reference discrepancy decreases",
                    c.monotone,
                    format!("sup [{}], self-convergence ratios [{}]", sups.join(", "), ratios.join(", ")),
                ));
                self.write("compare.csv", &compare_csv(&c)?)?;
            }
            Err(e) => self.report.checks.push(Check::info("reference discrepancy decreases", false, e.to_string())),
        }
        Ok(())
    }
}
