use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at offset {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("state variable u{index} out of range for a system of size {n}")]
    StateIndex { index: usize, n: usize },
    #[error("expression is not polynomial in the state: {0}")]
    NotPolynomial(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("coefficient matrix not Hermitian at (t={t}, x={x}): deviation {deviation:.3e}")]
    NonHermitian { t: f64, x: f64, deviation: f64 },
    #[error("eigenvalue gap {gap:.3e} below threshold at (t={t}, x={x})")]
    EigenvalueCollision { t: f64, x: f64, gap: f64 },
    #[error("background state is not a solution: residual {residual:.3e}")]
    BackgroundNotSolution { residual: f64 },
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("unknown registry model `{0}`")]
    UnknownModel(String),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhaseError {
    #[error("ray ({mode},{ray}) leaves the domain laterally at t={t}, x={x}")]
    RayEscapesLaterally { mode: usize, ray: usize, t: f64, x: f64 },
    #[error("rays closer than the required margin: distance {distance:.3e} < {margin:.3e}")]
    RayCollision { distance: f64, margin: f64 },
    #[error("Im Phi collapsed to {value:.3e} at t={t} on ray ({mode},{ray})")]
    ImaginaryPartCollapse { mode: usize, ray: usize, t: f64, value: f64 },
    #[error("imaginary floor violated at (t={t}, x={x}): {value:.3e} < {bound:.3e}")]
    FloorViolated { t: f64, x: f64, value: f64, bound: f64 },
    #[error("eikonal order too low: slope {slope:.3}")]
    OrderTooLow { slope: f64 },
    #[error("invalid initial phase data: {0}")]
    InvalidData(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("aliasing detected: relative energy {energy:.3e} outside the admissible spectrum")]
    AliasingDetected { energy: f64 },
    #[error("lattice too small: {size} < {required}")]
    LatticeTooSmall { size: usize, required: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MultiplierError {
    #[error("small divisor {value:.3e} below bound {bound:.3e}")]
    SmallDivisor { value: f64, bound: f64 },
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("initial amplitude not polarized: residual {residual:.3e}")]
    PolarizationViolated { residual: f64 },
    #[error("rectification detected: zero-frequency mass {mass:.3e}")]
    RectificationDetected { mass: f64 },
    #[error("energy blowup at t={t}: {energy:.3e} > {bound:.3e}")]
    EnergyBlowup { t: f64, energy: f64, bound: f64 },
    #[error("Picard iteration does not contract (final horizon {horizon})")]
    NoContraction { horizon: f64 },
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Multiplier(#[from] MultiplierError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssembleError {
    #[error("rectification detected in N(U0): zero-frequency mass {mass:.3e}")]
    RectificationDetected { mass: f64 },
    #[error("point (t={t}, x={x}) outside the domain")]
    OutsideDomain { t: f64, x: f64 },
    #[error("t={t} beyond the transport horizon {horizon}")]
    BeyondHorizon { t: f64, horizon: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Multiplier(#[from] MultiplierError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("{label}: slope {slope:.3} below threshold {threshold:.3}")]
    SlopeBelowThreshold { label: String, slope: f64, threshold: f64 },
    #[error("{label}: noisy fit (R^2 = {r2:.4})")]
    NoisyFit { label: String, r2: f64 },
    #[error("CFL condition violated: {0}")]
    CflViolation(String),
    #[error("reference solver self-convergence failed: ratio {ratio:.3}")]
    SelfConvergenceFailed { ratio: f64 },
    #[error("point (t={t}, x={x}) outside the domain")]
    OutsideDomain { t: f64, x: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Multiplier(#[from] MultiplierError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompareError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Assemble(#[from] AssembleError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("line {line}, column {col}: unknown key: {msg}")]
    UnknownKey { line: usize, col: usize, msg: String },
    #[error("line {line}, column {col}: type mismatch: {msg}")]
    TypeMismatch { line: usize, col: usize, msg: String },
    #[error("key `{key}`: {source}")]
    Expr { key: String, source: ExprError },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Top-level error with an exit-code family.
#[derive(Debug, Error)]
pub enum CgoError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("validation: {0}")]
    Model(#[from] ModelError),
    #[error("phase: {0}")]
    Phase(#[from] PhaseError),
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("multiplier: {0}")]
    Multiplier(#[from] MultiplierError),
    #[error("assemble: {0}")]
    Assemble(#[from] AssembleError),
    #[error("sweep: {0}")]
    Harness(#[from] HarnessError),
    #[error("compare: {0}")]
    Compare(#[from] CompareError),
    #[error("profile: {0}")]
    Profile(#[from] ProfileError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CgoError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CgoError::Config(_) | CgoError::Io(_) => 1,
            CgoError::Model(_) => 2,
            CgoError::Phase(_) => 3,
            CgoError::Transport(_) | CgoError::Assemble(AssembleError::RectificationDetected { .. }) => 4,
            CgoError::Assemble(_) | CgoError::Compare(_) => 5,
            CgoError::Multiplier(_) | CgoError::Harness(_) | CgoError::Profile(_) => 5,
        }
    }
}
