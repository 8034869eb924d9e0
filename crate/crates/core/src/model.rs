//! The delay-differential model abstraction.
//!
//! A model describes
//!
//! ```text
//! x'(t) = f(x(t), z(t), u(t), d(t))
//! z(t)  = [h_1(x(t - tau_1(u))); ...; h_m(x(t - tau_m(u)))]
//! ```
//!
//! where the delays depend on the manipulated inputs only. Parameters are
//! owned by the implementing type. Every evaluator is a pure function of its
//! arguments, so a model can be shared read-only across threads.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// Jacobians of the right-hand side with respect to its vector arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct RhsJacobians {
    /// `df/dx`, `n_x x n_x`.
    pub dx: DMatrix<f64>,
    /// `df/dz`, `n_x x dim(z)`.
    pub dz: DMatrix<f64>,
    /// `df/du`, `n_x x n_u`.
    pub du: DMatrix<f64>,
}

pub trait DdeModel: Send + Sync {
    fn n_states(&self) -> usize;

    fn n_inputs(&self) -> usize;

    /// Number of disturbance entries the right-hand side reads. May be zero.
    fn n_disturbances(&self) -> usize {
        0
    }

    /// Dimension of each delayed quantity `r_i = h_i(x)`, one entry per delay.
    fn delayed_dims(&self) -> Vec<usize>;

    fn n_delays(&self) -> usize {
        self.delayed_dims().len()
    }

    /// Total memory-state dimension, `sum_i dim(r_i)`.
    fn memory_dim(&self) -> usize {
        self.delayed_dims().iter().sum()
    }

    /// Delay `tau_i(u)` in seconds.
    fn delay(&self, i: usize, u: &DVector<f64>) -> Result<f64>;

    /// Gradient `d tau_i / du`.
    fn delay_gradient(&self, i: usize, u: &DVector<f64>) -> Result<DVector<f64>>;

    fn delayed_quantity(&self, i: usize, x: &DVector<f64>) -> DVector<f64>;

    fn delayed_quantity_jacobian(&self, i: usize, x: &DVector<f64>) -> DMatrix<f64>;

    fn rhs(
        &self,
        x: &DVector<f64>,
        z: &DVector<f64>,
        u: &DVector<f64>,
        d: &DVector<f64>,
    ) -> Result<DVector<f64>>;

    fn rhs_jacobians(
        &self,
        x: &DVector<f64>,
        z: &DVector<f64>,
        u: &DVector<f64>,
        d: &DVector<f64>,
    ) -> Result<RhsJacobians>;

    /// Upper bound of `tau_i(u)` over the box `u_min <= u <= u_max`.
    ///
    /// The default samples a tensor grid (vertices included); models with a
    /// closed-form maximum should override it.
    fn delay_upper_bound(&self, i: usize, u_min: &DVector<f64>, u_max: &DVector<f64>) -> Result<f64> {
        let n_u = u_min.len();
        let per_axis: usize = match n_u {
            0 => 1,
            1 => 201,
            2 => 101,
            3 => 21,
            _ => 5,
        };
        let total = per_axis.saturating_pow(n_u as u32).max(1);
        let mut best = f64::NEG_INFINITY;
        let mut u = u_min.clone();
        for flat in 0..total {
            let mut rem = flat;
            for j in 0..n_u {
                let step = rem % per_axis;
                rem /= per_axis;
                let s = if per_axis == 1 { 0.0 } else { step as f64 / (per_axis - 1) as f64 };
                u[j] = u_min[j] + s * (u_max[j] - u_min[j]);
            }
            best = best.max(self.delay(i, &u)?);
        }
        Ok(best)
    }

    fn state_names(&self) -> Vec<String> {
        (0..self.n_states()).map(|j| format!("x{j}")).collect()
    }

    fn input_names(&self) -> Vec<String> {
        (0..self.n_inputs()).map(|j| format!("u{j}")).collect()
    }

    /// Names of derived outputs attached to trajectories.
    fn output_names(&self) -> Vec<String> {
        Vec::new()
    }

    /// Derived outputs at one grid point, in the order of [`DdeModel::output_names`].
    fn outputs(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> Vec<f64> {
        Vec::new()
    }
}

/// Largest delay over the input box, `max_i max_u tau_i(u)`.
pub fn tau_max(model: &dyn DdeModel, u_min: &DVector<f64>, u_max: &DVector<f64>) -> Result<f64> {
    let mut best = 0.0_f64;
    for i in 0..model.n_delays() {
        best = best.max(model.delay_upper_bound(i, u_min, u_max)?);
    }
    Ok(best)
}

/// Concatenates `h_i(x)` for all delays.
pub fn memory_at(model: &dyn DdeModel, x: &DVector<f64>) -> DVector<f64> {
    let mut z = DVector::zeros(model.memory_dim());
    let mut offset = 0;
    for i in 0..model.n_delays() {
        let r = model.delayed_quantity(i, x);
        z.rows_mut(offset, r.len()).copy_from(&r);
        offset += r.len();
    }
    z
}

/// Initial state function `x0(t)` on `[t0 - tau_max, t0]`.
#[derive(Debug, Clone, PartialEq)]
pub enum HistoryFunction {
    Constant(DVector<f64>),
    /// Piecewise-linear interpolation of stored states.
    Tabulated(Trajectory),
}

impl HistoryFunction {
    /// The span on which the history is defined. Constant histories span the real line.
    pub fn span(&self) -> (f64, f64) {
        match self {
            HistoryFunction::Constant(_) => (f64::NEG_INFINITY, f64::INFINITY),
            HistoryFunction::Tabulated(traj) => (traj.times[0], *traj.times.last().unwrap()),
        }
    }

    pub fn covers(&self, start: f64, end: f64) -> bool {
        let (a, b) = self.span();
        let slack = 1e-12 * (1.0 + start.abs().max(end.abs()));
        a <= start + slack && end <= b + slack
    }

    pub fn dim(&self) -> usize {
        match self {
            HistoryFunction::Constant(x) => x.len(),
            HistoryFunction::Tabulated(traj) => traj.states[0].len(),
        }
    }

    /// Evaluates the history; `None` outside the span.
    pub fn eval(&self, t: f64) -> Option<DVector<f64>> {
        match self {
            HistoryFunction::Constant(x) => Some(x.clone()),
            HistoryFunction::Tabulated(traj) => traj.interpolate_state(t),
        }
    }
}

/// Evaluates `z(t)` from a history function, delays evaluated at `u`.
pub fn eval_memory_state(
    model: &dyn DdeModel,
    history: &HistoryFunction,
    t: f64,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (start, end) = history.span();
    let mut z = DVector::zeros(model.memory_dim());
    let mut offset = 0;
    for i in 0..model.n_delays() {
        let delayed_t = t - model.delay(i, u)?;
        let x = history.eval(delayed_t).ok_or(Error::HistoryUnderflow {
            delay: i,
            time: delayed_t,
            start,
            end,
        })?;
        let r = model.delayed_quantity(i, &x);
        z.rows_mut(offset, r.len()).copy_from(&r);
        offset += r.len();
    }
    Ok(z)
}

pub(crate) fn check_finite(context: &str, v: &DVector<f64>, point: &[&DVector<f64>]) -> Result<()> {
    if v.iter().all(|a| a.is_finite()) {
        Ok(())
    } else {
        Err(Error::Evaluation {
            context: context.to_string(),
            point: point.iter().flat_map(|p| p.iter().copied()).collect(),
        })
    }
}

/// Linear system `x' = A x + sum_i B_i x(t - tau_i) + E u` with constant delays.
#[derive(Debug, Clone)]
pub struct LinearDde {
    pub a: DMatrix<f64>,
    pub b: Vec<DMatrix<f64>>,
    pub e: DMatrix<f64>,
    pub taus: Vec<f64>,
}

impl LinearDde {
    pub fn new(a: DMatrix<f64>, b: Vec<DMatrix<f64>>, e: DMatrix<f64>, taus: Vec<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || e.nrows() != n || b.iter().any(|m| m.shape() != (n, n)) {
            return Err(Error::Config("linear model blocks must be n x n (E: n x n_u)".into()));
        }
        if b.len() != taus.len() {
            return Err(Error::Dimension { what: "delay list", expected: b.len(), got: taus.len() });
        }
        if taus.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::Config("delays must be positive and finite".into()));
        }
        Ok(LinearDde { a, b, e, taus })
    }

    /// `x' = a x + b x(t - tau)`.
    pub fn scalar(a: f64, b: f64, tau: f64) -> Self {
        LinearDde {
            a: DMatrix::from_element(1, 1, a),
            b: vec![DMatrix::from_element(1, 1, b)],
            e: DMatrix::zeros(1, 0),
            taus: vec![tau],
        }
    }
}

impl DdeModel for LinearDde {
    fn n_states(&self) -> usize {
        self.a.nrows()
    }
    fn n_inputs(&self) -> usize {
        self.e.ncols()
    }
    fn delayed_dims(&self) -> Vec<usize> {
        vec![self.a.nrows(); self.taus.len()]
    }
    fn delay(&self, i: usize, _u: &DVector<f64>) -> Result<f64> {
        Ok(self.taus[i])
    }
    fn delay_gradient(&self, _i: usize, _u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(self.n_inputs()))
    }
    fn delayed_quantity(&self, _i: usize, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }
    fn delayed_quantity_jacobian(&self, _i: usize, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(x.len(), x.len())
    }
    fn rhs(&self, x: &DVector<f64>, z: &DVector<f64>, u: &DVector<f64>, _d: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.n_states();
        let mut out = &self.a * x + &self.e * u;
        for (i, b) in self.b.iter().enumerate() {
            out += b * z.rows(i * n, n);
        }
        Ok(out)
    }
    fn rhs_jacobians(&self, _x: &DVector<f64>, _z: &DVector<f64>, _u: &DVector<f64>, _d: &DVector<f64>) -> Result<RhsJacobians> {
        let n = self.n_states();
        let mut dz = DMatrix::zeros(n, n * self.b.len());
        for (i, b) in self.b.iter().enumerate() {
            dz.columns_mut(i * n, n).copy_from(b);
        }
        Ok(RhsJacobians { dx: self.a.clone(), dz, du: self.e.clone() })
    }
}
