//! Model configuration: TOML sections `[system]`, `[[phases]]`, `[numerics]`, `[run]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, ExprError};
use crate::expr::{parse_expr, Expr};
use crate::harness::{default_eps, GridSpec, SweepSettings};
use crate::model::{Domain, Mode, SamplePlan, SystemModel};
use crate::multiplier::{IdentitySetup, OutsideRule};
use crate::phase::{InitialPhaseData, ModeData, DEFAULT_RK_STEPS};
use crate::profile::DEFAULT_G;
use crate::transport::TransportSettings;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub system: SystemConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub phases: Vec<PhaseConfig>,
    #[serde(default)]
    pub numerics: NumericsConfig,
    #[serde(default)]
    pub run: RunConfig,
}

/// Matrix entries `Aij`, source entries `Fi` and background entries `u0_i` are expression strings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xbar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_radius: Option<f64>,
    #[serde(flatten)]
    pub entries: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    /// Initial phase `psi(x)`.
    pub psi: String,
    /// Zeros of `Im psi`, one ray each.
    pub zeros: Vec<f64>,
    /// 1-based index into the ascending eigenvalues.
    pub branch: usize,
    /// Amplitude entries `h(x)`.
    pub h: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsConfig {
    #[serde(rename = "G")]
    pub g: u32,
    pub rk_steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s0: Option<f64>,
    pub eps: Vec<f64>,
    pub seed: u64,
    pub e_outside: OutsideRule,
    /// Amplitude of the generic class members used by the identity and class sweeps.
    pub delta: f64,
    pub min_gap: f64,
    pub slack: f64,
    pub r2_min: f64,
    pub exact_tol: f64,
    pub picard_tol: f64,
    pub max_iter: usize,
    pub rect_tol: f64,
    pub max_halvings: u32,
    pub polarization_tol: f64,
    pub energy_slack: f64,
    pub lemma_samples: usize,
    pub grid: GridSpec,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        let t = TransportSettings::default();
        let s = SweepSettings::default();
        NumericsConfig {
            g: DEFAULT_G,
            rk_steps: DEFAULT_RK_STEPS,
            s0: None,
            eps: default_eps(),
            seed: 1,
            e_outside: OutsideRule::default(),
            delta: 1.0,
            min_gap: SamplePlan::default().min_gap,
            slack: s.slack,
            r2_min: s.r2_min,
            exact_tol: s.exact_tol,
            picard_tol: t.tol,
            max_iter: t.max_iter,
            rect_tol: t.rect_tol,
            max_halvings: t.max_halvings,
            polarization_tol: t.polarization_tol,
            energy_slack: t.energy_slack,
            lemma_samples: 10_000,
            grid: GridSpec::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

/// Built-in models.
pub const REGISTRY: &[(&str, &str)] = &[("S1", S1), ("S2", S2), ("S3", S3), ("L1", L1), ("S1-two-phase", S1_TWO_PHASE)];

const DOMAIN: &str = "T = 1.0\nxbar = 0.0\nrho = 8.0\nc = 1.6\nk_radius = 0.5\n";

const S1: &str = r#"
[system]
n = 2
mode = "semilinear"
A11 = "1"
A12 = "0"
A21 = "0"
A22 = "-1"
F1 = "i*(conj(u1)*u1 + conj(u2)*u2)*u1"
F2 = "i*(conj(u1)*u1 + conj(u2)*u2)*u2 + 0.5*conj(u1)*u1^2"

[[phases]]
psi = "x + 4*i*x^2 + 0.3*x^3"
zeros = [0.0]
branch = 2
h = ["0.5", "0"]
"#;

const S2: &str = r#"
[system]
n = 2
mode = "quasilinear"
A11 = "1"
A12 = "0.3*conj(u1)"
A21 = "0.3*u1"
A22 = "-1"
F1 = "0.5*u1"
F2 = "0.5*u2"

[[phases]]
psi = "x + 4*i*x^2 + 0.3*x^3"
zeros = [0.0]
branch = 2
h = ["1", "0"]
"#;

const S3: &str = r#"
[system]
n = 2
mode = "quasilinear"
A11 = "1 + 0.3*sin(x)"
A12 = "0.3*conj(u1)"
A21 = "0.3*u1"
A22 = "-1"
F1 = "(0.3 + 0.2*sin(x))*u1"
F2 = "(0.3 + 0.2*sin(x))*u2"

[[phases]]
psi = "x + 4*i*x^2 + 0.3*x^3"
zeros = [0.0]
branch = 2
h = ["1", "0"]
"#;

const L1: &str = r#"
[system]
n = 2
mode = "semilinear"
A11 = "1"
A12 = "0"
A21 = "0"
A22 = "-1"
F1 = "0"
F2 = "0"

[[phases]]
psi = "x + 4*i*x^2"
zeros = [0.0]
branch = 2
h = ["1", "0"]
"#;

const S1_TWO_PHASE: &str = r#"
[system]
n = 2
mode = "semilinear"
A11 = "1"
A12 = "0"
A21 = "0"
A22 = "-1"
F1 = "i*(conj(u1)*u1 + conj(u2)*u2)*u1"
F2 = "i*(conj(u1)*u1 + conj(u2)*u2)*u2 + 0.5*conj(u1)*u1^2"

[[phases]]
psi = "(x + 2) + 4*i*(x + 2)^2"
zeros = [-2.0]
branch = 2
h = ["0.5", "0"]

[[phases]]
psi = "-(x - 2) + 4*i*(x - 2)^2"
zeros = [2.0]
branch = 1
h = ["0", "0.5"]
"#;

pub fn registry_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|(k, _)| *k).collect()
}

/// Full config text of a registry model, including the domain.
pub fn registry_text(name: &str) -> Option<String> {
    REGISTRY.iter().find(|(k, _)| *k == name).map(|(_, body)| {
        let body = body.trim_start();
        let (head, rest) = body.split_once('\n').expect("registry text has a [system] header");
        format!("{head}\n{DOMAIN}{rest}")
    })
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

fn classify(text: &str, err: toml::de::Error) -> ConfigError {
    let (line, col) = err.span().map_or((1, 1), |s| line_col(text, s.start));
    let msg = err.message().trim().to_string();
    if msg.contains("unknown field") {
        ConfigError::UnknownKey { line, col, msg }
    } else if msg.contains("invalid type") || msg.contains("invalid value") || msg.contains("unknown variant") {
        ConfigError::TypeMismatch { line, col, msg }
    } else {
        ConfigError::Syntax { line, col, msg }
    }
}

/// Byte offset of the value string of `key`, counted from the character after its opening quote.
fn value_offset(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut in_section = false;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if trimmed.starts_with('[') {
            in_section = trimmed.trim_matches(|c| c == '[' || c == ']').trim() == section;
        } else if in_section {
            if let Some((k, v)) = line.split_once('=') {
                if k.trim() == key {
                    let q = v.find('"')?;
                    return Some(offset + k.len() + 1 + q + 1);
                }
            }
        }
        offset += line.len();
    }
    None
}

fn is_entry_key(key: &str, n: usize) -> bool {
    let digit = |c: u8| (b'1'..=b'9').contains(&c) && ((c - b'0') as usize) <= n;
    let b = key.as_bytes();
    match b {
        [b'A', i, j] => digit(*i) && digit(*j),
        [b'F', i] => digit(*i),
        [b'u', b'0', b'_', i] => digit(*i),
        _ => false,
    }
}

impl ModelConfig {
    /// Parse and validate; a `system.model` key pulls in the registry model, whose
    /// `[system]` keys and phases are overridden by those given explicitly.
    pub fn parse(text: &str) -> Result<ModelConfig, ConfigError> {
        let mut cfg: ModelConfig = toml::from_str(text).map_err(|e| classify(text, e))?;
        if let Some(name) = cfg.system.model.clone() {
            let base_text =
                registry_text(&name).ok_or_else(|| ConfigError::Invalid(format!("unknown model `{name}`")))?;
            let base: ModelConfig = toml::from_str(&base_text).map_err(|e| classify(&base_text, e))?;
            cfg = cfg.merged_over(base);
        }
        cfg.validate(text)?;
        Ok(cfg)
    }

    pub fn registry(name: &str) -> Result<ModelConfig, ConfigError> {
        ModelConfig::parse(&format!("[system]\nmodel = \"{name}\"\n"))
    }

    fn merged_over(self, base: ModelConfig) -> ModelConfig {
        let s = self.system;
        let b = base.system;
        let mut entries = b.entries;
        entries.extend(s.entries);
        ModelConfig {
            system: SystemConfig {
                model: s.model,
                n: s.n.or(b.n),
                mode: s.mode.or(b.mode),
                t_final: s.t_final.or(b.t_final),
                xbar: s.xbar.or(b.xbar),
                rho: s.rho.or(b.rho),
                c: s.c.or(b.c),
                k_radius: s.k_radius.or(b.k_radius),
                entries,
            },
            phases: if self.phases.is_empty() { base.phases } else { self.phases },
            numerics: self.numerics,
            run: self.run,
        }
    }

    fn validate(&self, text: &str) -> Result<(), ConfigError> {
        let s = &self.system;
        let n = s.n.ok_or_else(|| ConfigError::Invalid("system.n is required".into()))?;
        if n == 0 || n > 9 {
            return Err(ConfigError::Invalid("system.n must be between 1 and 9".into()));
        }
        for key in s.entries.keys() {
            if !is_entry_key(key, n) {
                let (line, col) = text.find(&format!("\n{key}")).map_or((1, 1), |o| line_col(text, o + 1));
                return Err(ConfigError::UnknownKey { line, col, msg: format!("unknown key `{key}` in [system]") });
            }
        }
        for (key, value) in &s.entries {
            parse_expr(value).map_err(|e| self.expr_error(text, "system", key, e))?;
        }
        if s.mode.is_none() {
            return Err(ConfigError::Invalid("system.mode is required".into()));
        }
        if self.phases.is_empty() {
            return Err(ConfigError::Invalid("at least one [[phases]] entry is required".into()));
        }
        for (k, ph) in self.phases.iter().enumerate() {
            let key = format!("phases[{k}].psi");
            parse_expr(&ph.psi).map_err(|e| self.expr_error(text, "phases", "psi", e).with_key(&key))?;
            for (j, h) in ph.h.iter().enumerate() {
                parse_expr(h).map_err(|e| ConfigError::Expr { key: format!("phases[{k}].h[{j}]"), source: e })?;
            }
            if ph.h.len() != n {
                return Err(ConfigError::Invalid(format!("phases[{k}].h needs {n} entries")));
            }
            if ph.branch == 0 || ph.branch > n {
                return Err(ConfigError::Invalid(format!("phases[{k}].branch must be in 1..={n}")));
            }
            if ph.zeros.is_empty() {
                return Err(ConfigError::Invalid(format!("phases[{k}].zeros must not be empty")));
            }
        }
        let num = &self.numerics;
        let positive = [
            ("numerics.rk_steps", num.rk_steps as f64),
            ("numerics.G", num.g as f64),
            ("numerics.picard_tol", num.picard_tol),
            ("numerics.max_iter", num.max_iter as f64),
            ("numerics.min_gap", num.min_gap),
            ("numerics.lemma_samples", num.lemma_samples as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        if num.eps.len() < 2 || num.eps.windows(2).any(|w| !(w[1] < w[0])) || num.eps.iter().any(|&e| !(e > 0.0)) {
            return Err(ConfigError::Invalid("numerics.eps must be positive and strictly decreasing".into()));
        }
        if num.s0.is_some_and(|s| !(s > 0.0)) {
            return Err(ConfigError::Invalid("numerics.s0 must be positive".into()));
        }
        Ok(())
    }

    fn expr_error(&self, text: &str, section: &str, key: &str, e: ExprError) -> ConfigError {
        match (&e, value_offset(text, section, key)) {
            (ExprError::Syntax { pos, msg }, Some(start)) => {
                let (line, col) = line_col(text, start + pos);
                ConfigError::Syntax { line, col, msg: format!("in `{key}`: {msg}") }
            }
            _ => ConfigError::Expr { key: key.to_string(), source: e },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn n(&self) -> usize {
        self.system.n.unwrap_or(0)
    }

    fn entry(&self, key: &str) -> Result<Expr, ConfigError> {
        match self.system.entries.get(key) {
            Some(v) => parse_expr(v).map_err(|e| ConfigError::Expr { key: key.to_string(), source: e }),
            None => Ok(Expr::zero()),
        }
    }

    pub fn domain(&self) -> Domain {
        let s = &self.system;
        Domain {
            t_final: s.t_final.unwrap_or(1.0),
            xbar: s.xbar.unwrap_or(0.0),
            rho: s.rho.unwrap_or(8.0),
            c: s.c.unwrap_or(1.6),
            k_radius: s.k_radius.unwrap_or(0.5),
        }
    }

    pub fn build_model(&self) -> Result<SystemModel, crate::CgoError> {
        let n = self.n();
        let mut a = Vec::with_capacity(n * n);
        for i in 1..=n {
            for j in 1..=n {
                a.push(self.entry(&format!("A{i}{j}"))?);
            }
        }
        let f: Vec<Expr> = (1..=n).map(|i| self.entry(&format!("F{i}"))).collect::<Result<_, _>>()?;
        let u0: Vec<Expr> = (1..=n).map(|i| self.entry(&format!("u0_{i}"))).collect::<Result<_, _>>()?;
        let name = self.system.model.clone().unwrap_or_else(|| "custom".into());
        let mode = self.system.mode.unwrap_or(Mode::Semilinear);
        Ok(SystemModel::new(&name, n, mode, &a, &f, &u0, self.domain())?)
    }

    pub fn initial_data(&self) -> Result<InitialPhaseData, ConfigError> {
        let modes = self
            .phases
            .iter()
            .enumerate()
            .map(|(k, ph)| {
                let psi = parse_expr(&ph.psi)
                    .map_err(|e| ConfigError::Expr { key: format!("phases[{k}].psi"), source: e })?;
                let h = ph
                    .h
                    .iter()
                    .enumerate()
                    .map(|(j, s)| {
                        parse_expr(s).map_err(|e| ConfigError::Expr { key: format!("phases[{k}].h[{j}]"), source: e })
                    })
                    .collect::<Result<_, _>>()?;
                Ok(ModeData::new(psi, ph.zeros.clone(), ph.branch - 1, h))
            })
            .collect::<Result<_, ConfigError>>()?;
        Ok(InitialPhaseData { modes })
    }

    pub fn transport_settings(&self) -> TransportSettings {
        let n = &self.numerics;
        TransportSettings {
            steps: n.rk_steps,
            gmax: n.g,
            tol: n.picard_tol,
            max_iter: n.max_iter,
            rect_tol: n.rect_tol,
            max_halvings: n.max_halvings,
            polarization_tol: n.polarization_tol,
            energy_slack: n.energy_slack,
        }
    }

    pub fn sweep_settings(&self) -> SweepSettings {
        let n = &self.numerics;
        SweepSettings { eps: n.eps.clone(), slack: n.slack, r2_min: n.r2_min, exact_tol: n.exact_tol }
    }

    pub fn identity_setup(&self) -> IdentitySetup {
        let n = &self.numerics;
        IdentitySetup { outside: n.e_outside, amplitude: n.delta, seed: n.seed, gmax: n.g }
    }

    pub fn sample_plan(&self) -> SamplePlan {
        SamplePlan { seed: self.numerics.seed, min_gap: self.numerics.min_gap, ..SamplePlan::default() }
    }
}

impl ConfigError {
    fn with_key(self, key: &str) -> ConfigError {
        match self {
            ConfigError::Expr { source, .. } => ConfigError::Expr { key: key.to_string(), source },
            other => other,
        }
    }
}
