//! Browser demo over the built-in models: the complex phase along a time slice, the
//! assembled wave `v` at a chosen `eps`, and a coarse residual sweep.
//!
//! The exported functions are thin wrappers over plain Rust functions so the numerics
//! are testable natively.

use std::cell::RefCell;

use cgo_core::assemble::{initial_mismatch_sweep, residual_sweep, AsymptoticSolution};
use cgo_core::config::{registry_names, ModelConfig};
use cgo_core::harness::{evaluation_points, GridSpec};
use cgo_core::model::SystemModel;
use cgo_core::phase::{build_phase_field, InitialPhaseData, PhaseField};
use cgo_core::transport::{solve_transport, TransportSolution};
use wasm_bindgen::prelude::*;

/// Everything up to the transport stage for one model.
pub struct Built {
    pub name: String,
    pub cfg: ModelConfig,
    pub model: SystemModel,
    pub init: InitialPhaseData,
    pub field: PhaseField,
    pub transport: TransportSolution,
}

impl Built {
    pub fn new(name: &str) -> Result<Built, String> {
        let cfg = ModelConfig::registry(name).map_err(|e| e.to_string())?;
        let model = cfg.build_model().map_err(|e| e.to_string())?;
        let init = cfg.initial_data().map_err(|e| e.to_string())?;
        let field =
            build_phase_field(&model, &init, cfg.numerics.rk_steps, cfg.numerics.s0).map_err(|e| e.to_string())?;
        let transport = solve_transport(&model, &field, &init, &cfg.transport_settings()).map_err(|e| e.to_string())?;
        Ok(Built { name: name.to_string(), cfg, model, init, field, transport })
    }

    fn solution(&self) -> AsymptoticSolution<'_> {
        AsymptoticSolution::new(&self.model, &self.field, &self.init, &self.transport, self.cfg.numerics.rect_tol)
    }

    fn grid(&self, t: f64, samples: usize) -> Result<Vec<f64>, String> {
        let d = self.model.domain;
        if !(0.0..=self.transport.t_final).contains(&t) {
            return Err(format!("t must lie in [0, {}]", self.transport.t_final));
        }
        let hw = d.half_width(t);
        let n = samples.max(2);
        Ok((0..n).map(|k| d.xbar - hw + 2.0 * hw * k as f64 / (n - 1) as f64).collect())
    }
}

thread_local! {
    static CACHE: RefCell<Option<Built>> = const { RefCell::new(None) };
}

fn with_model<R>(name: &str, f: impl FnOnce(&Built) -> Result<R, String>) -> Result<R, String> {
    CACHE.with(|cache| {
        let mut cache = cache.borrow_mut();
        if cache.as_ref().is_none_or(|b| b.name != name) {
            *cache = Some(Built::new(name)?);
        }
        f(cache.as_ref().expect("model cached"))
    })
}

/// Rows `(x, Re phi, Im phi)` of phase `mode` (1-based) at time `t`, flattened.
pub fn phase_samples(b: &Built, mode: usize, t: f64, samples: usize) -> Result<Vec<f64>, String> {
    if mode == 0 || mode > b.field.modes.len() {
        return Err(format!("model {} has {} phase(s)", b.name, b.field.modes.len()));
    }
    let mut out = Vec::with_capacity(3 * samples);
    for x in b.grid(t, samples)? {
        let pl = b.field.mode_local(&b.model, mode - 1, t, x).map_err(|e| e.to_string())?;
        out.extend([x, pl.phi.re, pl.phi.im]);
    }
    Ok(out)
}

/// Rows `(x, Re v_1, Im v_1, |v|)` of the assembled solution at `(t, eps)`, flattened.
pub fn wave_samples(b: &Built, eps: f64, t: f64, samples: usize) -> Result<Vec<f64>, String> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err("eps must lie in (0, 1]".into());
    }
    let sol = b.solution();
    let mut out = Vec::with_capacity(4 * samples);
    for x in b.grid(t, samples)? {
        let v = sol.point(t, x).map_err(|e| e.to_string())?.evaluate(eps, sol.p).0;
        out.extend([x, v[0].re, v[0].im, v.norm()]);
    }
    Ok(out)
}

/// Residual and initial-mismatch sweeps on a coarse grid, one summary line each.
pub fn sweep_summary(b: &Built) -> Result<String, String> {
    let sol = b.solution();
    let spec = GridSpec { nt: 11, ns: 81, uniform: 21 };
    let data = sol.sample(&evaluation_points(&b.model, &b.field, &spec)).map_err(|e| e.to_string())?;
    let settings = b.cfg.sweep_settings();
    let mut text = String::new();
    for r in [residual_sweep(&b.model, &data, &settings), initial_mismatch_sweep(&sol, &data, &settings)] {
        text += &r.summary_line();
        text += "\n";
        for (e, s) in r.eps.iter().zip(&r.sup) {
            text += &format!("  eps {e:<8} sup {s:.3e}\n");
        }
    }
    Ok(text)
}

#[wasm_bindgen(js_name = modelNames)]
pub fn model_names() -> String {
    registry_names().join(",")
}

#[wasm_bindgen(js_name = phaseCount)]
pub fn phase_count(model: &str) -> Result<usize, JsError> {
    with_model(model, |b| Ok(b.field.modes.len())).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = phaseField)]
pub fn phase_field(model: &str, mode: usize, t: f64, samples: usize) -> Result<Vec<f64>, JsError> {
    with_model(model, |b| phase_samples(b, mode, t, samples)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = waveField)]
pub fn wave_field(model: &str, eps: f64, t: f64, samples: usize) -> Result<Vec<f64>, JsError> {
    with_model(model, |b| wave_samples(b, eps, t, samples)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = residualSweep)]
pub fn residual_sweep_text(model: &str) -> Result<String, JsError> {
    with_model(model, sweep_summary).map_err(|e| JsError::new(&e))
}
