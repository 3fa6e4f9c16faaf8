//! The hyperbolic system, its eigenstructure and the symbol of the
//! linearized operator.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::expr::{Expr, Func, Poly, Var};
use crate::C64;

pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Hermitian tolerance after symmetrization.
pub const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Semilinear,
    Quasilinear,
}

impl Mode {
    /// Amplitude exponent: `v = u0 + eps^p U(phi/eps)`.
    pub fn p(self) -> i32 {
        match self {
            Mode::Semilinear => 0,
            Mode::Quasilinear => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    pub t_final: f64,
    pub xbar: f64,
    pub rho: f64,
    pub c: f64,
    pub k_radius: f64,
}

impl Domain {
    pub fn half_width(&self, t: f64) -> f64 {
        self.rho - self.c * t
    }

    pub fn contains(&self, t: f64, x: f64) -> bool {
        t >= -1e-12 && t <= self.t_final + 1e-12 && (x - self.xbar).abs() <= self.half_width(t) + 1e-12
    }
}

#[derive(Clone, Debug)]
pub struct SystemModel {
    pub name: String,
    pub n: usize,
    pub mode: Mode,
    pub domain: Domain,
    pub a: Vec<Poly>,
    pub f: Vec<Poly>,
    pub u0: Vec<Expr>,
    a0: Vec<Expr>,
    a0_t: Vec<Expr>,
    a0_x: Vec<Expr>,
    a0_xx: Vec<Expr>,
    u0_t: Vec<Expr>,
    u0_x: Vec<Expr>,
    da: Vec<Vec<Poly>>,
    dab: Vec<Vec<Poly>>,
    df: Vec<Vec<Poly>>,
    dfb: Vec<Vec<Poly>>,
}

fn substitute(p: &Poly, u0: &[Expr]) -> Expr {
    let mut acc = Expr::zero();
    for (m, c) in &p.terms {
        let mut term = c.clone();
        for k in 0..p.n {
            if m.u[k] > 0 {
                term = Expr::mul(term, Expr::pow(u0[k].clone(), m.u[k] as i32));
            }
            if m.ubar[k] > 0 {
                term = Expr::mul(term, Expr::pow(Expr::call(Func::Conj, u0[k].clone()), m.ubar[k] as i32));
            }
        }
        acc = Expr::add(acc, term);
    }
    acc
}

fn eval_mat(entries: &[Expr], n: usize, t: f64, x: f64) -> CMat {
    CMat::from_fn(n, n, |i, j| entries[i * n + j].eval_tx(t, x))
}

fn eval_vec(entries: &[Expr], t: f64, x: f64) -> CVec {
    CVec::from_iterator(entries.len(), entries.iter().map(|e| e.eval_tx(t, x)))
}

impl SystemModel {
    /// Build a model from entry expressions: `a` is row-major `n*n`.
    pub fn new(
        name: &str,
        n: usize,
        mode: Mode,
        a: &[Expr],
        f: &[Expr],
        u0: &[Expr],
        domain: Domain,
    ) -> Result<SystemModel, ModelError> {
        if n == 0 {
            return Err(ModelError::Invalid("system dimension must be positive".into()));
        }
        if a.len() != n * n || f.len() != n || u0.len() != n {
            return Err(ModelError::Invalid(format!(
                "expected {} matrix entries, {n} source terms and {n} background entries",
                n * n
            )));
        }
        for e in u0 {
            if e.depends_on_state() {
                return Err(ModelError::Invalid("background u0 must not depend on the state".into()));
            }
        }
        let a: Vec<Poly> = a.iter().map(|e| Poly::from_expr(e, n)).collect::<Result<_, _>>()?;
        let f: Vec<Poly> = f.iter().map(|e| Poly::from_expr(e, n)).collect::<Result<_, _>>()?;
        if !(domain.t_final > 0.0 && domain.rho > 0.0 && domain.c > 0.0 && domain.k_radius >= 0.0) {
            return Err(ModelError::Invalid("T, rho, c must be positive and K_radius nonnegative".into()));
        }
        if mode == Mode::Semilinear {
            if a.iter().any(|p| !p.is_state_free()) {
                return Err(ModelError::Assumption("semilinear mode requires A independent of u".into()));
            }
            if f.iter().any(|p| !p.at_zero().is_zero()) {
                return Err(ModelError::Assumption("semilinear mode requires F(t,x,0) = 0".into()));
            }
            if u0.iter().any(|e| !e.is_zero()) {
                return Err(ModelError::Assumption("semilinear mode requires u0 = 0".into()));
            }
        }
        let a0: Vec<Expr> = a.iter().map(|p| substitute(p, u0)).collect();
        let a0_t = a0.iter().map(|e| e.diff(Var::T)).collect();
        let a0_x: Vec<Expr> = a0.iter().map(|e| e.diff(Var::X)).collect();
        let a0_xx = a0_x.iter().map(|e| e.diff(Var::X)).collect();
        let u0_t = u0.iter().map(|e| e.diff(Var::T)).collect();
        let u0_x = u0.iter().map(|e| e.diff(Var::X)).collect();
        let da = (0..n).map(|k| a.iter().map(|p| p.partial(k, false)).collect()).collect();
        let dab = (0..n).map(|k| a.iter().map(|p| p.partial(k, true)).collect()).collect();
        let df = (0..n).map(|k| f.iter().map(|p| p.partial(k, false)).collect()).collect();
        let dfb = (0..n).map(|k| f.iter().map(|p| p.partial(k, true)).collect()).collect();
        Ok(SystemModel {
            name: name.to_string(),
            n,
            mode,
            domain,
            a,
            f,
            u0: u0.to_vec(),
            a0,
            a0_t,
            a0_x,
            a0_xx,
            u0_t,
            u0_x,
            da,
            dab,
            df,
            dfb,
        })
    }

    pub fn a_at(&self, t: f64, x: f64, u: &[C64]) -> CMat {
        let n = self.n;
        CMat::from_fn(n, n, |i, j| self.a[i * n + j].eval(t, x, u))
    }

    pub fn f_at(&self, t: f64, x: f64, u: &[C64]) -> CVec {
        CVec::from_iterator(self.n, self.f.iter().map(|p| p.eval(t, x, u)))
    }

    /// `A0(t,x) = A(t,x,u0(t,x))`.
    pub fn a0(&self, t: f64, x: f64) -> CMat {
        eval_mat(&self.a0, self.n, t, x)
    }

    pub fn a0_dt(&self, t: f64, x: f64) -> CMat {
        eval_mat(&self.a0_t, self.n, t, x)
    }

    pub fn a0_dx(&self, t: f64, x: f64) -> CMat {
        eval_mat(&self.a0_x, self.n, t, x)
    }

    pub fn a0_dxx(&self, t: f64, x: f64) -> CMat {
        eval_mat(&self.a0_xx, self.n, t, x)
    }

    pub fn u0_at(&self, t: f64, x: f64) -> CVec {
        eval_vec(&self.u0, t, x)
    }

    pub fn u0_dt(&self, t: f64, x: f64) -> CVec {
        eval_vec(&self.u0_t, t, x)
    }

    pub fn u0_dx(&self, t: f64, x: f64) -> CVec {
        eval_vec(&self.u0_x, t, x)
    }

    /// `dA/du_k` (or `dA/dconj(u_k)` when `conj`) at state `u`.
    pub fn da_du(&self, k: usize, conj: bool, t: f64, x: f64, u: &[C64]) -> CMat {
        let n = self.n;
        let polys = if conj { &self.dab[k] } else { &self.da[k] };
        CMat::from_fn(n, n, |i, j| polys[i * n + j].eval(t, x, u))
    }

    /// Jacobian `J[j][k] = dF_j/du_k` (or with respect to `conj(u_k)`).
    pub fn df_du(&self, conj: bool, t: f64, x: f64, u: &[C64]) -> CMat {
        let polys = if conj { &self.dfb } else { &self.df };
        CMat::from_fn(self.n, self.n, |j, k| polys[k][j].eval(t, x, u))
    }

    /// `L(u) = u_t + A(t,x,u) u_x + F(t,x,u)`.
    pub fn apply_operator(&self, t: f64, x: f64, u: &CVec, ut: &CVec, ux: &CVec) -> CVec {
        let us = u.as_slice();
        ut + self.a_at(t, x, us) * ux + self.f_at(t, x, us)
    }

    pub fn is_state_dependent(&self) -> bool {
        self.a.iter().any(|p| !p.is_state_free())
    }
}

/// Eigen data of `A0` at one node.
#[derive(Clone, Debug)]
pub struct EigenNode {
    /// Ascending eigenvalues.
    pub lambda: Vec<f64>,
    /// Orthonormal eigenvectors as columns, phase fixed.
    pub vectors: CMat,
    pub proj: Vec<CMat>,
    /// `d lambda / dx`.
    pub alpha: Vec<f64>,
    /// `d^2 lambda / dx^2`.
    pub beta: Vec<f64>,
}

impl EigenNode {
    pub fn min_gap(&self) -> f64 {
        self.lambda.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    /// Derivatives of all projectors in the direction whose matrix derivative is `da`.
    pub fn projector_derivative(&self, da: &CMat) -> Vec<CMat> {
        let n = self.lambda.len();
        (0..n)
            .map(|l| {
                let mut acc = CMat::zeros(n, n);
                for k in 0..n {
                    if k == l {
                        continue;
                    }
                    let w = 1.0 / (self.lambda[l] - self.lambda[k]);
                    acc += (&self.proj[k] * da * &self.proj[l] + &self.proj[l] * da * &self.proj[k]) * C64::new(w, 0.0);
                }
                acc
            })
            .collect()
    }
}

pub fn hermitian_deviation(a: &CMat) -> f64 {
    let d = a - a.adjoint();
    let scale = 1.0f64.max(a.iter().map(|z| z.norm()).fold(0.0, f64::max));
    d.iter().map(|z| z.norm()).fold(0.0, f64::max) / scale
}

/// Eigen-decompose a Hermitian matrix with optional x-derivatives for the
/// perturbation formulas of the first and second eigenvalue derivatives.
pub fn eig_hermitian(
    a: &CMat,
    da: Option<&CMat>,
    dda: Option<&CMat>,
    min_gap: f64,
    at: (f64, f64),
) -> Result<EigenNode, ModelError> {
    let deviation = hermitian_deviation(a);
    if deviation > HERMITIAN_TOL {
        return Err(ModelError::NonHermitian { t: at.0, x: at.1, deviation });
    }
    let n = a.nrows();
    let h = (a + a.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let lambda: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let norm = v.norm();
        v /= C64::new(norm, 0.0);
        let mut best = 0;
        for k in 1..n {
            if v[k].norm() > v[best].norm() + 1e-12 {
                best = k;
            }
        }
        let c = v[best];
        v *= c.conj() / c.norm();
        v[best] = C64::new(v[best].re, 0.0);
        vectors.set_column(col, &v);
    }
    let node_gap = lambda.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if node_gap < min_gap {
        return Err(ModelError::EigenvalueCollision { t: at.0, x: at.1, gap: node_gap });
    }
    let proj: Vec<CMat> = (0..n)
        .map(|l| {
            let v = vectors.column(l);
            &v * v.adjoint()
        })
        .collect();
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    if let Some(da) = da {
        let m1 = vectors.adjoint() * da * &vectors;
        for l in 0..n {
            alpha[l] = m1[(l, l)].re;
        }
        let m2 = dda.map(|d| vectors.adjoint() * d * &vectors);
        for l in 0..n {
            let mut b = m2.as_ref().map(|m| m[(l, l)].re).unwrap_or(0.0);
            for k in 0..n {
                if k != l {
                    b += 2.0 * m1[(k, l)].norm_sqr() / (lambda[l] - lambda[k]);
                }
            }
            beta[l] = b;
        }
    }
    Ok(EigenNode { lambda, vectors, proj, alpha, beta })
}

/// Minimal eigenvalue gap accepted by `eig_decompose`.
pub const DEFAULT_MIN_GAP: f64 = 1e-6;

pub fn eig_decompose(model: &SystemModel, t: f64, x: f64) -> Result<EigenNode, ModelError> {
    let a = model.a0(t, x);
    let da = model.a0_dx(t, x);
    let dda = model.a0_dxx(t, x);
    eig_hermitian(&a, Some(&da), Some(&dda), DEFAULT_MIN_GAP, (t, x))
}

/// `sigma(t,x,tau,xi) = i (tau I + A0(t,x) xi)` for complex `tau`, `xi`.
pub fn symbol(model: &SystemModel, t: f64, x: f64, tau: C64, xi: C64) -> CMat {
    symbol_from(&model.a0(t, x), tau, xi)
}

pub fn symbol_from(a0: &CMat, tau: C64, xi: C64) -> CMat {
    let n = a0.nrows();
    (CMat::identity(n, n) * tau + a0 * xi) * C64::new(0.0, 1.0)
}

#[derive(Clone, Copy, Debug)]
pub struct SamplePlan {
    pub nt: usize,
    pub nx: usize,
    /// Random states per node drawn from the ball `K`.
    pub nk: usize,
    pub seed: u64,
    pub min_gap: f64,
}

impl Default for SamplePlan {
    fn default() -> Self {
        SamplePlan { nt: 21, nx: 41, nk: 6, seed: 0, min_gap: DEFAULT_MIN_GAP }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub samples: usize,
    pub max_hermitian_deviation: f64,
    pub min_gap: f64,
    pub max_speed: f64,
    pub background_residual: f64,
    pub source_at_zero: f64,
    pub passed: bool,
}

pub fn validate_system(model: &SystemModel, plan: &SamplePlan) -> Result<ValidationReport, ModelError> {
    let d = model.domain;
    if d.rho <= d.c * d.t_final {
        return Err(ModelError::Assumption(format!("rho = {} must exceed c T = {}", d.rho, d.c * d.t_final)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let n = model.n;
    let mut report = ValidationReport {
        samples: 0,
        max_hermitian_deviation: 0.0,
        min_gap: f64::INFINITY,
        max_speed: 0.0,
        background_residual: 0.0,
        source_at_zero: 0.0,
        passed: false,
    };
    for it in 0..plan.nt {
        let t = d.t_final * it as f64 / (plan.nt.max(2) - 1) as f64;
        let hw = d.half_width(t);
        for ix in 0..plan.nx {
            let x = d.xbar - hw + 2.0 * hw * ix as f64 / (plan.nx.max(2) - 1) as f64;
            let u0 = model.u0_at(t, x);
            let mut states = vec![u0.clone()];
            for _ in 0..plan.nk {
                let mut du =
                    CVec::from_fn(n, |_, _| C64::new(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0));
                let norm = du.norm();
                if norm > 0.0 {
                    let r = d.k_radius * rng.gen::<f64>().powf(1.0 / (2 * n) as f64);
                    du *= C64::new(r / norm, 0.0);
                }
                states.push(&u0 + du);
            }
            for u in &states {
                let a = model.a_at(t, x, u.as_slice());
                let dev = hermitian_deviation(&a);
                report.max_hermitian_deviation = report.max_hermitian_deviation.max(dev);
                let node = eig_hermitian(&a, None, None, 0.0, (t, x))?;
                let gap = node.min_gap();
                if gap < plan.min_gap {
                    return Err(ModelError::EigenvalueCollision { t, x, gap });
                }
                if n > 1 {
                    report.min_gap = report.min_gap.min(gap);
                }
                for l in &node.lambda {
                    report.max_speed = report.max_speed.max(l.abs());
                }
                report.samples += 1;
            }
            match model.mode {
                Mode::Semilinear => {
                    let zero = vec![C64::new(0.0, 0.0); n];
                    report.source_at_zero = report.source_at_zero.max(model.f_at(t, x, &zero).norm());
                }
                Mode::Quasilinear => {
                    let r = model.apply_operator(t, x, &u0, &model.u0_dt(t, x), &model.u0_dx(t, x));
                    report.background_residual = report.background_residual.max(r.norm());
                }
            }
        }
    }
    if report.background_residual > 1e-10 {
        return Err(ModelError::BackgroundNotSolution { residual: report.background_residual });
    }
    if report.source_at_zero > 0.0 {
        return Err(ModelError::Assumption(format!("F(t,x,0) = {:.3e} != 0", report.source_at_zero)));
    }
    if report.max_speed > d.c {
        return Err(ModelError::Assumption(format!(
            "propagation speed {} exceeds the bound c = {}",
            report.max_speed, d.c
        )));
    }
    report.passed = true;
    Ok(report)
}
