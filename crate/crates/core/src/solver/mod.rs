//! Bound-constrained augmented Lagrangian solver for
//!
//! ```text
//! min psi(w)  subject to  c(w) = 0,  l <= w <= u.
//! ```
//!
//! The outer loop updates equality multipliers and the penalty; the inner loop
//! minimizes the augmented Lagrangian over the box, either by projected Newton
//! with a banded finite-difference Hessian or by projected L-BFGS.

mod banded;
mod inner;

use std::fmt::Write as _;

use nalgebra::DVector;
use nalgebra_sparse::CsrMatrix;

pub use banded::{BandCholesky, SymBand};

use crate::error::{Error, Result};
use crate::trajectory::write_float;

/// A smooth NLP with equality constraints and simple bounds.
pub trait NlpProblem: Sync {
    fn n_vars(&self) -> usize;
    fn n_constraints(&self) -> usize;
    fn lower_bounds(&self) -> &DVector<f64>;
    fn upper_bounds(&self) -> &DVector<f64>;
    fn objective(&self, w: &DVector<f64>) -> Result<f64>;
    fn gradient(&self, w: &DVector<f64>) -> Result<DVector<f64>>;
    fn constraints(&self, w: &DVector<f64>) -> Result<DVector<f64>>;
    fn jacobian(&self, w: &DVector<f64>) -> Result<CsrMatrix<f64>>;

    /// Half-bandwidth of the Lagrangian Hessian, if it is banded.
    fn hessian_bandwidth(&self) -> Option<usize> {
        None
    }

    /// Characteristic magnitude of each variable.
    fn variable_scales(&self) -> Option<DVector<f64>> {
        None
    }

    /// Characteristic magnitude of each constraint.
    fn constraint_scales(&self) -> Option<DVector<f64>> {
        None
    }
}

/// `J^T v` for a CSR matrix.
pub fn transpose_mul(jac: &CsrMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(jac.ncols());
    for (r, row) in jac.row_iter().enumerate() {
        let vr = v[r];
        if vr == 0.0 {
            continue;
        }
        for (&c, &a) in row.col_indices().iter().zip(row.values()) {
            out[c] += a * vr;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerMethod {
    /// Newton when the Hessian is banded or the problem is small, L-BFGS otherwise.
    Auto,
    Newton,
    Lbfgs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub max_outer_iterations: usize,
    pub max_inner_iterations: usize,
    pub tol_stationarity: f64,
    pub tol_feasibility: f64,
    pub tol_complementarity: f64,
    /// Multiply the stationarity tolerance by `max(1, |grad psi(w0)|_inf)` (scaled).
    pub relative_stationarity: bool,
    pub penalty_init: f64,
    pub penalty_factor: f64,
    pub penalty_max: f64,
    /// Required feasibility reduction per outer iteration to keep the penalty.
    pub feasibility_reduction: f64,
    pub inner_method: InnerMethod,
    pub lbfgs_memory: usize,
    /// Use the problem's declared variable and constraint scales.
    pub use_scaling: bool,
    pub verbose: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_outer_iterations: 60,
            max_inner_iterations: 200,
            tol_stationarity: 1e-5,
            tol_feasibility: 1e-6,
            tol_complementarity: 1e-6,
            relative_stationarity: true,
            penalty_init: 10.0,
            penalty_factor: 10.0,
            penalty_max: 1e10,
            feasibility_reduction: 0.25,
            inner_method: InnerMethod::Auto,
            lbfgs_memory: 10,
            use_scaling: true,
            verbose: false,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tol_stationarity", self.tol_stationarity),
            ("tol_feasibility", self.tol_feasibility),
            ("tol_complementarity", self.tol_complementarity),
            ("penalty_init", self.penalty_init),
            ("penalty_max", self.penalty_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.penalty_factor > 1.0) {
            return Err(Error::Config("penalty_factor must exceed 1".into()));
        }
        if !(self.feasibility_reduction > 0.0 && self.feasibility_reduction < 1.0) {
            return Err(Error::Config("feasibility_reduction must lie in (0, 1)".into()));
        }
        if self.max_outer_iterations == 0 || self.max_inner_iterations == 0 || self.lbfgs_memory == 0 {
            return Err(Error::Config("iteration caps and L-BFGS memory must be positive".into()));
        }
        Ok(())
    }
}

/// Diagonal scaling `w = S w_hat`, `c_hat = c / r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    pub variables: DVector<f64>,
    pub constraints: DVector<f64>,
}

impl Scaling {
    pub fn identity(n_vars: usize, n_constraints: usize) -> Self {
        Scaling { variables: DVector::from_element(n_vars, 1.0), constraints: DVector::from_element(n_constraints, 1.0) }
    }

    /// Problem-supplied scales, with each constraint row further equilibrated so
    /// that its largest scaled Jacobian entry at `w0` is at most one.
    pub fn from_problem(problem: &dyn NlpProblem, w0: &DVector<f64>) -> Result<Self> {
        let (n, m) = (problem.n_vars(), problem.n_constraints());
        let variables = problem.variable_scales().unwrap_or_else(|| DVector::from_element(n, 1.0));
        let mut constraints = problem.constraint_scales().unwrap_or_else(|| DVector::from_element(m, 1.0));
        if variables.len() != n || constraints.len() != m {
            return Err(Error::Dimension { what: "scaling", expected: n + m, got: variables.len() + constraints.len() });
        }
        if variables.iter().chain(constraints.iter()).any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("scales must be positive and finite".into()));
        }
        if m > 0 {
            let jac = problem.jacobian(w0)?;
            for (r, row) in jac.row_iter().enumerate() {
                let big = row.col_indices().iter().zip(row.values()).map(|(&j, v)| (v * variables[j]).abs()).fold(0.0, f64::max);
                if big.is_finite() {
                    constraints[r] = constraints[r].max(big);
                }
            }
        }
        Ok(Scaling { variables, constraints })
    }
}

/// Equality and bound multipliers in the problem's own units.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub equality: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

/// Infinity norms of the first-order optimality conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    /// `|S (grad psi + J^T mu - nu_lo + nu_hi)|_inf`.
    pub stationarity: f64,
    /// `|c(w)|_inf`.
    pub feasibility: f64,
    /// Largest bound-complementarity product or multiplier sign violation.
    pub complementarity: f64,
}

/// KKT residual norms at `(w, multipliers)`; stationarity is measured in scaled variables.
pub fn kkt_residual(
    problem: &dyn NlpProblem,
    w: &DVector<f64>,
    multipliers: &Multipliers,
    scaling: &Scaling,
) -> Result<KktResidual> {
    let n = problem.n_vars();
    if w.len() != n || multipliers.equality.len() != problem.n_constraints() {
        return Err(Error::Dimension { what: "kkt point", expected: n, got: w.len() });
    }
    let grad = problem.gradient(w)?;
    let c = problem.constraints(w)?;
    let jac = problem.jacobian(w)?;
    let mut g = grad + transpose_mul(&jac, &multipliers.equality);
    g -= &multipliers.lower;
    g += &multipliers.upper;
    let stationarity = g.component_mul(&scaling.variables).amax();
    let feasibility = if c.is_empty() { 0.0 } else { c.amax() };
    let (lo, hi) = (problem.lower_bounds(), problem.upper_bounds());
    let mut comp = 0.0_f64;
    for i in 0..n {
        let (nl, nu) = (multipliers.lower[i], multipliers.upper[i]);
        let s = scaling.variables[i];
        comp = comp.max((-nl * s).max(0.0)).max((-nu * s).max(0.0));
        if nl != 0.0 {
            comp = comp.max((nl * (w[i] - lo[i])).abs());
        }
        if nu != 0.0 {
            comp = comp.max((nu * (hi[i] - w[i])).abs());
        }
    }
    Ok(KktResidual { stationarity, feasibility, complementarity: comp })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    LineSearchFailure,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIterations => "max-iter",
            SolveStatus::LineSearchFailure => "line-search-failure",
        }
    }
}

/// One row of the outer-iteration log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLog {
    pub iter: usize,
    pub objective: f64,
    pub feas: f64,
    pub stat: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub w: DVector<f64>,
    pub multipliers: Multipliers,
    pub kkt: KktResidual,
    pub scaling: Scaling,
    /// Stationarity tolerance after relative scaling.
    pub tol_stationarity: f64,
    pub status: SolveStatus,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub objective_history: Vec<f64>,
    /// Augmented Lagrangian values after each accepted inner step, per outer iteration.
    pub merit_history: Vec<Vec<f64>>,
    pub log: Vec<IterationLog>,
    pub message: String,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn objective(&self) -> f64 {
        self.objective_history.last().copied().unwrap_or(f64::NAN)
    }

    /// CSV with columns `iter,objective,feas,stat,penalty`.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("iter,objective,feas,stat,penalty\n");
        for row in &self.log {
            let _ = write!(out, "{}", row.iter);
            for v in [row.objective, row.feas, row.stat, row.penalty] {
                out.push(',');
                write_float(&mut out, v);
            }
            out.push('\n');
        }
        out
    }
}

/// Minimizes `problem` from `w0` (projected onto the bounds).
pub fn solve(problem: &dyn NlpProblem, w0: &DVector<f64>, opts: &SolveOptions) -> Result<SolveReport> {
    opts.validate()?;
    if w0.len() != problem.n_vars() {
        return Err(Error::Dimension { what: "initial point", expected: problem.n_vars(), got: w0.len() });
    }
    let (lo, hi) = (problem.lower_bounds(), problem.upper_bounds());
    if (0..lo.len()).any(|i| !(lo[i] <= hi[i])) {
        return Err(Error::Config("lower bound above upper bound".into()));
    }
    let scaling = if opts.use_scaling {
        let start = DVector::from_fn(w0.len(), |i, _| w0[i].clamp(lo[i], hi[i]));
        Scaling::from_problem(problem, &start)?
    } else {
        Scaling::identity(problem.n_vars(), problem.n_constraints())
    };
    inner::AugmentedLagrangian::new(problem, scaling, opts).run(w0)
}
