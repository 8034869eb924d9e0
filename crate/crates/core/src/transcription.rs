//! Implicit-Euler transcription of the delay-linearized optimal control problem.
//!
//! Each delayed state is replaced by the backward-difference estimate
//!
//! ```text
//! v_i = x_{k,n+1} - (x_{k,n+1} - x_{k,n}) / dt * tau_i(u_k)
//! ```
//!
//! so the discretized dynamics only couple neighbouring grid points. The
//! decision vector holds, per control interval `k`, the states
//! `x_{k,1}, ..., x_{k,M}` followed by `u_k`; the initial state comes from the
//! history and interval boundaries are shared, so continuity never appears as
//! an explicit constraint.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{check_finite, DdeModel};
use crate::ocp::OcpSpec;
use crate::solver::NlpProblem;
use crate::trajectory::{Schedule, Trajectory};

/// Backward-difference estimate of `x(t - tau)` over one step.
pub fn delayed_state_estimate(x_prev: &DVector<f64>, x_next: &DVector<f64>, dt: f64, tau: f64) -> DVector<f64> {
    x_next - (x_next - x_prev) * (tau / dt)
}

fn memory_estimate(
    model: &dyn DdeModel,
    x_prev: &DVector<f64>,
    x_next: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
) -> Result<(DVector<f64>, Vec<f64>, Vec<DVector<f64>>)> {
    let mut z = DVector::zeros(model.memory_dim());
    let mut taus = Vec::with_capacity(model.n_delays());
    let mut vs = Vec::with_capacity(model.n_delays());
    let mut offset = 0;
    for i in 0..model.n_delays() {
        let tau = model.delay(i, u)?;
        let v = delayed_state_estimate(x_prev, x_next, dt, tau);
        let r = model.delayed_quantity(i, &v);
        z.rows_mut(offset, r.len()).copy_from(&r);
        offset += r.len();
        taus.push(tau);
        vs.push(v);
    }
    Ok((z, taus, vs))
}

/// `R = x_next - x_prev - f(x_next, z, u, d) dt` with `z` from the delay linearization.
///
/// `d` may be wider than the model's disturbance vector; only the leading
/// entries are passed on.
pub fn step_residual(
    model: &dyn DdeModel,
    x_prev: &DVector<f64>,
    x_next: &DVector<f64>,
    u: &DVector<f64>,
    d: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    let d = d.rows(0, model.n_disturbances()).into_owned();
    let (z, _, _) = memory_estimate(model, x_prev, x_next, u, dt)?;
    let f = model.rhs(x_next, &z, u, &d)?;
    check_finite("step residual", &f, &[x_prev, x_next, u])?;
    Ok(x_next - x_prev - f * dt)
}

/// Blocks of the step residual Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct StepJacobians {
    pub next: DMatrix<f64>,
    pub prev: DMatrix<f64>,
    pub input: DMatrix<f64>,
}

pub fn step_jacobians(
    model: &dyn DdeModel,
    x_prev: &DVector<f64>,
    x_next: &DVector<f64>,
    u: &DVector<f64>,
    d: &DVector<f64>,
    dt: f64,
) -> Result<StepJacobians> {
    let n = model.n_states();
    let d = d.rows(0, model.n_disturbances()).into_owned();
    let (z, taus, vs) = memory_estimate(model, x_prev, x_next, u, dt)?;
    let jac = model.rhs_jacobians(x_next, &z, u, &d)?;
    let slope = (x_next - x_prev) / dt;

    let mut dfdx_next = jac.dx.clone();
    let mut dfdx_prev = DMatrix::zeros(n, n);
    let mut dfdu = jac.du.clone();
    let mut offset = 0;
    for (i, (tau, v)) in taus.iter().zip(&vs).enumerate() {
        let h = model.delayed_quantity_jacobian(i, v);
        let fz_h = jac.dz.columns(offset, h.nrows()) * &h;
        dfdx_next += &fz_h * (1.0 - tau / dt);
        dfdx_prev += &fz_h * (tau / dt);
        let grad = model.delay_gradient(i, u)?;
        dfdu -= (&fz_h * &slope) * grad.transpose();
        offset += h.nrows();
    }
    Ok(StepJacobians {
        next: DMatrix::identity(n, n) - dfdx_next * dt,
        prev: -DMatrix::identity(n, n) - dfdx_prev * dt,
        input: -dfdu * dt,
    })
}

/// The NLP obtained from an [`OcpSpec`] with `M` implicit-Euler steps per interval.
pub struct TranscribedNlp<'a> {
    model: &'a dyn DdeModel,
    ocp: &'a OcpSpec,
    steps: usize,
    x_init: DVector<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
}

impl std::fmt::Debug for TranscribedNlp<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TranscribedNlp")
            .field("n_intervals", &self.ocp.n_intervals)
            .field("steps", &self.steps)
            .field("n_vars", &self.n_vars())
            .field("n_constraints", &self.n_constraints())
            .finish()
    }
}

/// Location of one implicit-Euler step in the decision vector.
#[derive(Debug, Clone, Copy)]
struct StepIndex {
    k: usize,
    /// Start of `x_{k,n}`, `None` for the fixed initial state.
    prev: Option<usize>,
    next: usize,
    input: usize,
}

impl<'a> TranscribedNlp<'a> {
    pub fn new(model: &'a dyn DdeModel, ocp: &'a OcpSpec, steps: usize) -> Result<Self> {
        if steps < 1 {
            return Err(Error::Config("need at least one step per control interval".into()));
        }
        ocp.validate(model)?;
        let x_init = ocp
            .history
            .eval(ocp.t0)
            .ok_or_else(|| Error::Config("history does not cover t0".into()))?;
        let (n_x, n_u) = (model.n_states(), model.n_inputs());
        let block = steps * n_x + n_u;
        let n_vars = ocp.n_intervals * block;
        let mut lower = DVector::zeros(n_vars);
        let mut upper = DVector::zeros(n_vars);
        for k in 0..ocp.n_intervals {
            for n in 0..steps {
                let at = k * block + n * n_x;
                lower.rows_mut(at, n_x).copy_from(&ocp.x_min);
                upper.rows_mut(at, n_x).copy_from(&ocp.x_max);
            }
            lower.rows_mut(k * block + steps * n_x, n_u).copy_from(&ocp.u_min);
            upper.rows_mut(k * block + steps * n_x, n_u).copy_from(&ocp.u_max);
        }
        let mut nlp = TranscribedNlp {
            model,
            ocp,
            steps,
            x_init,
            lower,
            upper,
            row_offsets: Vec::new(),
            col_indices: Vec::new(),
        };
        nlp.build_pattern();
        Ok(nlp)
    }

    fn build_pattern(&mut self) {
        let (n_x, n_u) = (self.n_x(), self.n_u());
        let mut offsets = vec![0];
        let mut cols = Vec::new();
        for s in 0..self.n_steps() {
            let idx = self.step_index(s);
            for _ in 0..n_x {
                if let Some(p) = idx.prev {
                    cols.extend(p..p + n_x);
                }
                cols.extend(idx.next..idx.next + n_x);
                cols.extend(idx.input..idx.input + n_u);
                offsets.push(cols.len());
            }
        }
        self.row_offsets = offsets;
        self.col_indices = cols;
    }

    pub fn model(&self) -> &'a dyn DdeModel {
        self.model
    }

    pub fn ocp(&self) -> &'a OcpSpec {
        self.ocp
    }

    pub fn n_x(&self) -> usize {
        self.model.n_states()
    }

    pub fn n_u(&self) -> usize {
        self.model.n_inputs()
    }

    pub fn steps_per_interval(&self) -> usize {
        self.steps
    }

    pub fn n_intervals(&self) -> usize {
        self.ocp.n_intervals
    }

    /// Variables per control interval, `M n_x + n_u`.
    pub fn block_size(&self) -> usize {
        self.steps * self.n_x() + self.n_u()
    }

    fn n_steps(&self) -> usize {
        self.ocp.n_intervals * self.steps
    }

    /// Uniform step `dt / M`.
    pub fn step_size(&self) -> f64 {
        self.ocp.dt() / self.steps as f64
    }

    /// The initial state `x_{0,0}` taken from the history at `t0`.
    pub fn initial_state(&self) -> &DVector<f64> {
        &self.x_init
    }

    /// Offset of `x_{k,n}` for `n >= 1`.
    pub fn state_offset(&self, k: usize, n: usize) -> usize {
        debug_assert!(n >= 1 && n <= self.steps);
        k * self.block_size() + (n - 1) * self.n_x()
    }

    pub fn input_offset(&self, k: usize) -> usize {
        k * self.block_size() + self.steps * self.n_x()
    }

    fn step_index(&self, s: usize) -> StepIndex {
        let (k, n) = (s / self.steps, s % self.steps);
        let prev = match (k, n) {
            (0, 0) => None,
            (_, 0) => Some(self.state_offset(k - 1, self.steps)),
            _ => Some(self.state_offset(k, n)),
        };
        StepIndex { k, prev, next: self.state_offset(k, n + 1), input: self.input_offset(k) }
    }

    fn check_len(&self, w: &DVector<f64>) -> Result<()> {
        if w.len() != self.n_vars() {
            return Err(Error::Dimension { what: "decision vector", expected: self.n_vars(), got: w.len() });
        }
        Ok(())
    }

    fn step_data(&self, w: &DVector<f64>, idx: StepIndex) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let (n_x, n_u) = (self.n_x(), self.n_u());
        let prev = match idx.prev {
            Some(p) => w.rows(p, n_x).into_owned(),
            None => self.x_init.clone(),
        };
        (prev, w.rows(idx.next, n_x).into_owned(), w.rows(idx.input, n_u).into_owned())
    }

    /// Input `u_k`.
    pub fn input(&self, w: &DVector<f64>, k: usize) -> DVector<f64> {
        w.rows(self.input_offset(k), self.n_u()).into_owned()
    }

    /// Stacked residuals `R_{k,n}`, ordered by step.
    pub fn residual(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(w)?;
        let n_x = self.n_x();
        let dt = self.step_size();
        let blocks: Vec<Result<DVector<f64>>> = (0..self.n_steps())
            .into_par_iter()
            .map(|s| {
                let idx = self.step_index(s);
                let (prev, next, u) = self.step_data(w, idx);
                step_residual(self.model, &prev, &next, &u, &self.ocp.disturbances[idx.k], dt)
            })
            .collect();
        let mut out = DVector::zeros(self.n_constraints());
        for (s, block) in blocks.into_iter().enumerate() {
            out.rows_mut(s * n_x, n_x).copy_from(&block?);
        }
        Ok(out)
    }

    /// Sparse Jacobian of [`TranscribedNlp::residual`]; the pattern does not depend on `w`.
    pub fn jacobian(&self, w: &DVector<f64>) -> Result<CsrMatrix<f64>> {
        self.check_len(w)?;
        let (n_x, n_u) = (self.n_x(), self.n_u());
        let dt = self.step_size();
        let blocks: Vec<Result<StepJacobians>> = (0..self.n_steps())
            .into_par_iter()
            .map(|s| {
                let idx = self.step_index(s);
                let (prev, next, u) = self.step_data(w, idx);
                step_jacobians(self.model, &prev, &next, &u, &self.ocp.disturbances[idx.k], dt)
            })
            .collect();
        let mut values = Vec::with_capacity(self.col_indices.len());
        for (s, block) in blocks.into_iter().enumerate() {
            let jac = block?;
            let has_prev = self.step_index(s).prev.is_some();
            for r in 0..n_x {
                if has_prev {
                    values.extend(jac.prev.row(r).iter());
                }
                values.extend(jac.next.row(r).iter());
                values.extend((0..n_u).map(|c| jac.input[(r, c)]));
            }
        }
        CsrMatrix::try_from_csr_data(
            self.n_constraints(),
            self.n_vars(),
            self.row_offsets.clone(),
            self.col_indices.clone(),
            values,
        )
        .map_err(|e| Error::Config(format!("jacobian assembly: {e}")))
    }

    fn delta_u(&self, w: &DVector<f64>, k: usize) -> DVector<f64> {
        let prev = if k == 0 { self.ocp.u_ref.clone() } else { self.input(w, k - 1) };
        self.input(w, k) - prev
    }

    /// `psi = psi_x + phi_du`: right-rectangle Lagrange term plus input-rate penalty.
    pub fn objective(&self, w: &DVector<f64>) -> Result<f64> {
        self.check_len(w)?;
        let (dt, big_dt) = (self.step_size(), self.ocp.dt());
        let mut psi = 0.0;
        for s in 0..self.n_steps() {
            let idx = self.step_index(s);
            let (_, x, u) = self.step_data(w, idx);
            psi += self.ocp.stage_cost.value(&x, &u, &self.ocp.disturbances[idx.k]) * dt;
        }
        for k in 0..self.n_intervals() {
            let du = self.delta_u(w, k);
            psi += 0.5 * du.dot(&(&self.ocp.rate_weights[k] * &du)) / big_dt;
        }
        if !psi.is_finite() {
            return Err(Error::Evaluation { context: "objective".into(), point: w.iter().copied().collect() });
        }
        Ok(psi)
    }

    pub fn gradient(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(w)?;
        let (n_x, n_u) = (self.n_x(), self.n_u());
        let (dt, big_dt) = (self.step_size(), self.ocp.dt());
        let cost = &self.ocp.stage_cost;
        let mut g = DVector::zeros(self.n_vars());
        for s in 0..self.n_steps() {
            let idx = self.step_index(s);
            let (_, x, u) = self.step_data(w, idx);
            let d = &self.ocp.disturbances[idx.k];
            let mut gx = g.rows_mut(idx.next, n_x);
            gx += cost.gradient_x(&x, &u, d) * dt;
            let mut gu = g.rows_mut(idx.input, n_u);
            gu += cost.gradient_u(&x, &u, d) * dt;
        }
        let n = self.n_intervals();
        let weighted: Vec<DVector<f64>> =
            (0..n).map(|k| &self.ocp.rate_weights[k] * self.delta_u(w, k)).collect();
        for k in 0..n {
            let mut reg = weighted[k].clone();
            if k + 1 < n {
                reg -= &weighted[k + 1];
            }
            let mut gu = g.rows_mut(self.input_offset(k), n_u);
            gu += reg / big_dt;
        }
        check_finite("objective gradient", &g, &[w])?;
        Ok(g)
    }

    /// Time of grid point `j = k M + n`.
    pub fn time(&self, j: usize) -> f64 {
        self.ocp.t0 + j as f64 * self.step_size()
    }

    /// States on the full grid `t_0, ..., t_f` and the inputs active there.
    pub fn extract_trajectory(&self, w: &DVector<f64>) -> Result<Trajectory> {
        self.check_len(w)?;
        let total = self.n_steps() + 1;
        let mut times = Vec::with_capacity(total);
        let mut states = Vec::with_capacity(total);
        let mut inputs = Vec::with_capacity(total);
        for j in 0..total {
            times.push(self.time(j));
            let x = if j == 0 {
                self.x_init.clone()
            } else {
                let (k, n) = ((j - 1) / self.steps, (j - 1) % self.steps + 1);
                w.rows(self.state_offset(k, n), self.n_x()).into_owned()
            };
            states.push(x);
            inputs.push(self.input(w, (j / self.steps).min(self.n_intervals() - 1)));
        }
        let names = self.model.output_names();
        let mut outputs: Vec<(String, Vec<f64>)> = names.into_iter().map(|n| (n, Vec::with_capacity(total))).collect();
        for (x, u) in states.iter().zip(&inputs) {
            for (col, v) in outputs.iter_mut().zip(self.model.outputs(x, u)) {
                col.1.push(v);
            }
        }
        Trajectory::new(times, states, inputs, self.model.state_names(), self.model.input_names(), outputs)
    }

    /// Inverse of [`TranscribedNlp::extract_trajectory`] on the interior grid points.
    pub fn pack(&self, traj: &Trajectory) -> Result<DVector<f64>> {
        let total = self.n_steps() + 1;
        if traj.len() != total {
            return Err(Error::Dimension { what: "trajectory grid", expected: total, got: traj.len() });
        }
        let mut w = DVector::zeros(self.n_vars());
        for j in 1..total {
            let (k, n) = ((j - 1) / self.steps, (j - 1) % self.steps + 1);
            w.rows_mut(self.state_offset(k, n), self.n_x()).copy_from(&traj.states[j]);
        }
        for k in 0..self.n_intervals() {
            w.rows_mut(self.input_offset(k), self.n_u()).copy_from(&traj.inputs[k * self.steps]);
        }
        Ok(w)
    }

    /// Decision vector from a state guess `x(t)` and per-interval inputs.
    pub fn initial_guess<F>(&self, state: F, inputs: &[DVector<f64>]) -> Result<DVector<f64>>
    where
        F: Fn(f64) -> DVector<f64>,
    {
        if inputs.len() != self.n_intervals() {
            return Err(Error::Dimension { what: "input guess", expected: self.n_intervals(), got: inputs.len() });
        }
        let mut w = DVector::zeros(self.n_vars());
        for k in 0..self.n_intervals() {
            for n in 1..=self.steps {
                let x = state(self.time(k * self.steps + n));
                if x.len() != self.n_x() {
                    return Err(Error::Dimension { what: "state guess", expected: self.n_x(), got: x.len() });
                }
                w.rows_mut(self.state_offset(k, n), self.n_x()).copy_from(&x);
            }
            w.rows_mut(self.input_offset(k), self.n_u()).copy_from(&inputs[k]);
        }
        Ok(w)
    }

    /// The optimized inputs as a zero-order-hold schedule.
    pub fn input_schedule(&self, w: &DVector<f64>) -> Schedule {
        let values = (0..self.n_intervals()).map(|k| self.input(w, k)).collect();
        Schedule::uniform(self.ocp.t0, self.ocp.dt(), values)
    }

    /// Disturbances as a zero-order-hold schedule.
    pub fn disturbance_schedule(&self) -> Schedule {
        Schedule::uniform(self.ocp.t0, self.ocp.dt(), self.ocp.disturbances.clone())
    }

    /// Per-variable magnitudes from the problem's declared scales.
    pub fn variable_scales(&self) -> DVector<f64> {
        let xs = self.ocp.state_scales.clone().unwrap_or_else(|| DVector::from_element(self.n_x(), 1.0));
        let us = self.ocp.input_scales.clone().unwrap_or_else(|| DVector::from_element(self.n_u(), 1.0));
        let mut s = DVector::zeros(self.n_vars());
        for k in 0..self.n_intervals() {
            for n in 1..=self.steps {
                s.rows_mut(self.state_offset(k, n), self.n_x()).copy_from(&xs);
            }
            s.rows_mut(self.input_offset(k), self.n_u()).copy_from(&us);
        }
        s
    }

    /// Per-row magnitudes: each residual row carries the units of its state.
    pub fn constraint_scales(&self) -> DVector<f64> {
        let xs = self.ocp.state_scales.clone().unwrap_or_else(|| DVector::from_element(self.n_x(), 1.0));
        DVector::from_fn(self.n_constraints(), |r, _| xs[r % self.n_x()])
    }
}

impl NlpProblem for TranscribedNlp<'_> {
    fn n_vars(&self) -> usize {
        self.ocp.n_intervals * self.block_size()
    }

    fn n_constraints(&self) -> usize {
        self.n_steps() * self.n_x()
    }

    fn lower_bounds(&self) -> &DVector<f64> {
        &self.lower
    }

    fn upper_bounds(&self) -> &DVector<f64> {
        &self.upper
    }

    fn objective(&self, w: &DVector<f64>) -> Result<f64> {
        TranscribedNlp::objective(self, w)
    }

    fn gradient(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        TranscribedNlp::gradient(self, w)
    }

    fn constraints(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.residual(w)
    }

    fn jacobian(&self, w: &DVector<f64>) -> Result<CsrMatrix<f64>> {
        TranscribedNlp::jacobian(self, w)
    }

    /// Variables sharing a residual row lie within `b + n_x + n_u - 1` of each
    /// other; the input-rate penalty couples `u_k` with `u_{k+1}`, `b` apart.
    fn hessian_bandwidth(&self) -> Option<usize> {
        let b = self.block_size();
        Some((b + self.n_x() + self.n_u() - 1).max(b).min(self.n_vars().saturating_sub(1)))
    }

    fn variable_scales(&self) -> Option<DVector<f64>> {
        Some(TranscribedNlp::variable_scales(self))
    }

    fn constraint_scales(&self) -> Option<DVector<f64>> {
        Some(TranscribedNlp::constraint_scales(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testing::LinearDde;
    use crate::model::HistoryFunction;
    use crate::ocp::ZeroCost;
    use nalgebra::{dmatrix, dvector};
    use std::sync::Arc;

    fn scalar_ocp(model: &LinearDde, n: usize, tf: f64, w: f64) -> OcpSpec {
        OcpSpec::new(
            model,
            0.0,
            tf,
            n,
            Arc::new(ZeroCost),
            DMatrix::from_element(model.n_inputs(), model.n_inputs(), w),
            DVector::zeros(model.n_inputs()),
            DVector::from_element(model.n_inputs(), -10.0),
            DVector::from_element(model.n_inputs(), 10.0),
            HistoryFunction::Constant(DVector::from_element(model.n_states(), 1.0)),
        )
    }

    #[test]
    fn zero_dynamics_root_is_initial_state() {
        let model = LinearDde::scalar(0.0, 0.0, 0.7);
        let ocp = scalar_ocp(&model, 1, 1.0, 1.0);
        let nlp = TranscribedNlp::new(&model, &ocp, 1).unwrap();
        assert_eq!(nlp.n_vars(), 1);
        assert_eq!(nlp.residual(&dvector![1.0]).unwrap()[0], 0.0);
        assert_eq!(nlp.residual(&dvector![1.5]).unwrap()[0], 0.5);
    }

    #[test]
    fn backward_difference_estimate() {
        let v = delayed_state_estimate(&dvector![1.0], &dvector![2.0], 1.0, 0.5);
        assert_eq!(v[0], 1.5);
        let v = delayed_state_estimate(&dvector![1.0, -3.0], &dvector![2.0, 4.0], 0.1, 0.0);
        assert_eq!(v, dvector![2.0, 4.0]);
    }

    #[test]
    fn linear_blocks_in_closed_form() {
        let model = LinearDde {
            a: dmatrix![-1.0, 0.5; 0.2, -2.0],
            b: vec![dmatrix![0.3, 0.0; -0.1, 0.4]],
            e: DMatrix::zeros(2, 0),
            taus: vec![0.25],
        };
        let (xp, xn) = (dvector![1.0, 2.0], dvector![0.5, -1.0]);
        let dt = 0.5;
        let jac = step_jacobians(&model, &xp, &xn, &DVector::zeros(0), &DVector::zeros(0), dt).unwrap();
        let expected_next = DMatrix::identity(2, 2) - (&model.a + &model.b[0] * (1.0 - 0.25 / dt)) * dt;
        assert!((jac.next - expected_next).amax() < 1e-15);
        let expected_prev = -DMatrix::identity(2, 2) - &model.b[0] * 0.25;
        assert!((jac.prev - expected_prev).amax() < 1e-15);

        let model = LinearDde { taus: vec![0.0], ..model };
        let jac = step_jacobians(&model, &xp, &xn, &DVector::zeros(0), &DVector::zeros(0), dt).unwrap();
        assert_eq!(jac.prev, -DMatrix::identity(2, 2));
    }

    #[test]
    fn rate_penalty_gradient_last_interval() {
        let mut model = LinearDde::scalar(0.0, 0.0, 1.0);
        model.e = DMatrix::zeros(1, 2);
        let mut ocp = scalar_ocp(&model, 1, 2.0, 0.0);
        ocp.rate_weights = vec![DMatrix::identity(2, 2)];
        let nlp = TranscribedNlp::new(&model, &ocp, 1).unwrap();
        // layout: x_{0,1}, u_0
        let g = nlp.gradient(&dvector![1.0, 2.0, -4.0]).unwrap();
        assert_eq!(g, dvector![0.0, 1.0, -2.0]);
    }

    #[test]
    fn constant_inputs_have_zero_rate_gradient() {
        let mut model = LinearDde::scalar(0.0, 0.0, 1.0);
        model.e = DMatrix::zeros(1, 1);
        let ocp = scalar_ocp(&model, 2, 2.0, 1.0);
        let nlp = TranscribedNlp::new(&model, &ocp, 1).unwrap();
        let g = nlp.gradient(&dvector![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(g[1], 0.0);
        assert_eq!(g[3], 0.0);
    }

    #[test]
    fn pattern_matches_block_layout() {
        let mut model = LinearDde::scalar(-1.0, 0.5, 0.3);
        model.e = dmatrix![1.0];
        let ocp = scalar_ocp(&model, 3, 3.0, 1.0);
        let nlp = TranscribedNlp::new(&model, &ocp, 2).unwrap();
        assert_eq!(nlp.n_vars(), 3 * (2 + 1));
        assert_eq!(nlp.n_constraints(), 3 * 2);
        let j = nlp.jacobian(&DVector::from_element(9, 0.3)).unwrap();
        let rows: Vec<Vec<usize>> = j.row_iter().map(|r| r.col_indices().to_vec()).collect();
        assert_eq!(rows[0], vec![0, 2]);
        assert_eq!(rows[1], vec![0, 1, 2]);
        assert_eq!(rows[2], vec![1, 3, 5]);
        assert_eq!(rows[3], vec![3, 4, 5]);
        assert_eq!(rows[4], vec![4, 6, 8]);
        assert_eq!(rows[5], vec![6, 7, 8]);
    }

    #[test]
    fn single_interval_trajectory_has_two_points() {
        let model = LinearDde::scalar(-1.0, 0.0, 0.5);
        let ocp = scalar_ocp(&model, 1, 1.0, 1.0);
        let nlp = TranscribedNlp::new(&model, &ocp, 1).unwrap();
        let traj = nlp.extract_trajectory(&dvector![0.25]).unwrap();
        assert_eq!(traj.times, vec![0.0, 1.0]);
        assert_eq!(traj.states[0], dvector![1.0]);
        assert_eq!(traj.states[1], dvector![0.25]);
        assert_eq!(nlp.pack(&traj).unwrap(), dvector![0.25]);
    }

    #[test]
    fn rejects_zero_steps() {
        let model = LinearDde::scalar(-1.0, 0.0, 0.5);
        let ocp = scalar_ocp(&model, 1, 1.0, 1.0);
        assert!(TranscribedNlp::new(&model, &ocp, 0).is_err());
    }
}
