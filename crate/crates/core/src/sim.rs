//! Fixed-step implicit-Euler simulators for the delay system (method of
//! steps with a dense piecewise-linear history) and for its delay-linearized
//! form, plus trajectory comparison.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{DdeModel, HistoryFunction};
use crate::trajectory::{Schedule, Trajectory};
use crate::transcription::{step_jacobians, step_residual};

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    /// Largest step (s). Steps shrink so every schedule breakpoint is a step boundary.
    pub h: f64,
    /// Newton stops when every update satisfies `|dx_i| <= tol max(1, |x_i|)`.
    pub newton_tol: f64,
    pub max_newton_iterations: usize,
    /// How far back (s) the delay simulator keeps its own history.
    pub retention: f64,
    /// Keep every `record_every`-th step in the returned trajectory (the last step is always kept).
    pub record_every: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { h: 0.01, newton_tol: 1e-10, max_newton_iterations: 50, retention: f64::INFINITY, record_every: 1 }
    }
}

impl SimOptions {
    pub fn with_step(h: f64) -> Self {
        SimOptions { h, ..Default::default() }
    }

    fn check(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::Config(format!("step h must be positive, got {}", self.h)));
        }
        if !(self.newton_tol > 0.0) || self.max_newton_iterations == 0 {
            return Err(Error::Config("Newton tolerance and iteration limit must be positive".into()));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Step boundaries on `[t0, tf]`: each span between consecutive breakpoints is
/// split into equal steps no longer than `h`.
pub fn step_grid(t0: f64, tf: f64, h: f64, breakpoints: &[f64]) -> Result<Vec<f64>> {
    if !(tf > t0) {
        return Err(Error::Config(format!("empty time span [{t0}, {tf}]")));
    }
    let mut cuts: Vec<f64> = breakpoints.iter().copied().filter(|&t| t > t0 && t < tf).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * (1.0 + b.abs()));
    let mut grid = vec![t0];
    let mut a = t0;
    for b in cuts.into_iter().chain(std::iter::once(tf)) {
        if b - a <= 1e-9 * (1.0 + b.abs()) {
            continue;
        }
        let n = ((b - a) / h - 1e-9).ceil().max(1.0) as usize;
        for i in 1..n {
            grid.push(a + (b - a) * i as f64 / n as f64);
        }
        grid.push(b);
        a = b;
    }
    Ok(grid)
}

fn breakpoints(inputs: &Schedule, d: &Schedule, t0: f64, tf: f64) -> Vec<f64> {
    inputs.breakpoints_within(t0, tf).chain(d.breakpoints_within(t0, tf)).collect()
}

fn disturbance(model: &dyn DdeModel, d: &Schedule, t: f64) -> Result<DVector<f64>> {
    let v = d.value_at(t);
    let n = model.n_disturbances();
    if v.len() < n {
        return Err(Error::Dimension { what: "disturbance", expected: n, got: v.len() });
    }
    Ok(v.rows(0, n).into_owned())
}

fn check_dims(model: &dyn DdeModel, x0: usize, inputs: &Schedule) -> Result<()> {
    if x0 != model.n_states() {
        return Err(Error::Dimension { what: "initial state", expected: model.n_states(), got: x0 });
    }
    if inputs.dim() != model.n_inputs() {
        return Err(Error::Dimension { what: "input schedule", expected: model.n_inputs(), got: inputs.dim() });
    }
    Ok(())
}

/// Damped Newton on `g(x) = 0` started from `x`.
fn newton<G, J>(mut x: DVector<f64>, time: f64, opts: &SimOptions, g: G, jac: J) -> Result<DVector<f64>>
where
    G: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    J: Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    let scaled = |r: &DVector<f64>, x: &DVector<f64>| (0..r.len()).map(|i| r[i].abs() / x[i].abs().max(1.0)).fold(0.0, f64::max);
    let fail = |reason: String| Error::StepFailure { time, reason };
    let mut r = g(&x)?;
    for _ in 0..opts.max_newton_iterations {
        let lu = jac(&x)?.lu();
        let dx = lu.solve(&(-&r)).ok_or_else(|| fail("singular step Jacobian".into()))?;
        let norm = scaled(&r, &x);
        let mut alpha = 1.0;
        let (next, r_next) = loop {
            let trial = &x + &dx * alpha;
            if let Ok(rt) = g(&trial) {
                if rt.iter().all(|v| v.is_finite()) && (scaled(&rt, &trial) <= norm || alpha < 1.0 / 1024.0) {
                    break (trial, rt);
                }
            }
            alpha *= 0.5;
            if alpha < 1e-10 {
                return Err(fail("line search found no admissible point".into()));
            }
        };
        let step = scaled(&(&next - &x), &next);
        x = next;
        r = r_next;
        if step <= opts.newton_tol {
            return Ok(x);
        }
    }
    Err(fail(format!("no convergence in {} iterations", opts.max_newton_iterations)))
}

/// Piecewise-linear record of committed steps, backed by the initial history.
struct DenseHistory<'a> {
    initial: &'a HistoryFunction,
    t0: f64,
    times: VecDeque<f64>,
    states: VecDeque<DVector<f64>>,
    retention: f64,
}

impl DenseHistory<'_> {
    fn push(&mut self, t: f64, x: DVector<f64>) {
        self.times.push_back(t);
        self.states.push_back(x);
        // keep one sample at or before the retention horizon for interpolation
        while self.times.len() > 2 && self.times[1] <= t - self.retention {
            self.times.pop_front();
            self.states.pop_front();
        }
    }

    fn eval(&self, s: f64, delay: usize) -> Result<DVector<f64>> {
        if s <= self.t0 {
            let (start, end) = self.initial.span();
            return self.initial.eval(s).ok_or(Error::HistoryUnderflow { delay, time: s, start, end });
        }
        let j = self.times.partition_point(|&t| t <= s);
        if j == 0 {
            return Err(Error::HistoryUnderflow { delay, time: s, start: self.times[0], end: *self.times.back().unwrap() });
        }
        if j == self.times.len() {
            return Ok(self.states[j - 1].clone());
        }
        let (a, b) = (self.times[j - 1], self.times[j]);
        let w = (s - a) / (b - a);
        Ok(&self.states[j - 1] * (1.0 - w) + &self.states[j] * w)
    }
}

struct Recorder {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    inputs: Vec<DVector<f64>>,
}

impl Recorder {
    fn new() -> Self {
        Recorder { times: Vec::new(), states: Vec::new(), inputs: Vec::new() }
    }

    fn push(&mut self, t: f64, x: &DVector<f64>, u: &DVector<f64>) {
        self.times.push(t);
        self.states.push(x.clone());
        self.inputs.push(u.clone());
    }

    fn finish(self, model: &dyn DdeModel) -> Result<Trajectory> {
        let names = model.output_names();
        let mut cols = vec![Vec::with_capacity(self.times.len()); names.len()];
        for (x, u) in self.states.iter().zip(&self.inputs) {
            for (c, v) in cols.iter_mut().zip(model.outputs(x, u)) {
                c.push(v);
            }
        }
        Trajectory::new(
            self.times,
            self.states,
            self.inputs,
            model.state_names(),
            model.input_names(),
            names.into_iter().zip(cols).collect(),
        )
    }
}

/// Integrates the delay system on `[t0, tf]` by implicit Euler with delayed
/// values frozen per step. Each step must be at most half the shortest delay,
/// so delayed arguments always fall in committed history.
pub fn simulate_dde(
    model: &dyn DdeModel,
    history: &HistoryFunction,
    inputs: &Schedule,
    d: &Schedule,
    (t0, tf): (f64, f64),
    opts: &SimOptions,
) -> Result<Trajectory> {
    opts.check()?;
    let x0 = history.eval(t0).ok_or_else(|| Error::Config(format!("history does not cover t0 = {t0}")))?;
    check_dims(model, x0.len(), inputs)?;
    let grid = step_grid(t0, tf, opts.h, &breakpoints(inputs, d, t0, tf))?;

    let mut tau_max = 0.0_f64;
    for j in 0..grid.len() - 1 {
        let (a, b) = (grid[j], grid[j + 1]);
        let u = inputs.value_at(a);
        for i in 0..model.n_delays() {
            let tau = model.delay(i, u)?;
            if b - a > 0.5 * tau * (1.0 + 1e-12) {
                return Err(Error::Config(format!(
                    "step {:.6e} s exceeds half of delay {i} (tau_{} = {tau:.6e} s at t = {a})",
                    b - a,
                    i + 1
                )));
            }
            tau_max = tau_max.max(tau);
        }
    }
    if opts.retention < tau_max + opts.h {
        return Err(Error::Config(format!("retention {} s is shorter than tau_max + h = {} s", opts.retention, tau_max + opts.h)));
    }
    if !history.covers(t0 - tau_max, t0) {
        let (start, end) = history.span();
        return Err(Error::HistoryUnderflow { delay: 0, time: t0 - tau_max, start, end });
    }

    let mut buffer = DenseHistory {
        initial: history,
        t0,
        times: VecDeque::new(),
        states: VecDeque::new(),
        retention: opts.retention,
    };
    buffer.push(t0, x0.clone());
    let mut rec = Recorder::new();
    rec.push(t0, &x0, inputs.value_at(t0));
    let mut x = x0;
    let steps = grid.len() - 1;
    for j in 0..steps {
        let (a, b) = (grid[j], grid[j + 1]);
        let h = b - a;
        let u = inputs.value_at(a).clone();
        let dv = disturbance(model, d, a)?;
        let mut z = DVector::zeros(model.memory_dim());
        let mut offset = 0;
        for i in 0..model.n_delays() {
            let s = b - model.delay(i, &u)?;
            assert!(s <= a + 1e-9 * (1.0 + a.abs()), "delayed time {s} is newer than the committed history end {a}");
            let r = model.delayed_quantity(i, &buffer.eval(s, i)?);
            z.rows_mut(offset, r.len()).copy_from(&r);
            offset += r.len();
        }
        let x_prev = x.clone();
        let n = x.len();
        x = newton(
            x_prev.clone(),
            b,
            opts,
            |y| Ok(y - &x_prev - model.rhs(y, &z, &u, &dv)? * h),
            |y| Ok(DMatrix::identity(n, n) - model.rhs_jacobians(y, &z, &u, &dv)?.dx * h),
        )?;
        buffer.push(b, x.clone());
        if (j + 1) % opts.record_every == 0 || j + 1 == steps {
            rec.push(b, &x, inputs.value_at(b));
        }
    }
    rec.finish(model)
}

/// Integrates the delay-linearized implicit system: each step solves the
/// transcription residual `R(x_j, x_{j+1}, u_j) = 0` by Newton.
pub fn simulate_linearized(
    model: &dyn DdeModel,
    x0: &DVector<f64>,
    inputs: &Schedule,
    d: &Schedule,
    (t0, tf): (f64, f64),
    opts: &SimOptions,
) -> Result<Trajectory> {
    opts.check()?;
    check_dims(model, x0.len(), inputs)?;
    let grid = step_grid(t0, tf, opts.h, &breakpoints(inputs, d, t0, tf))?;
    let mut rec = Recorder::new();
    rec.push(t0, x0, inputs.value_at(t0));
    let mut x = x0.clone();
    let steps = grid.len() - 1;
    for j in 0..steps {
        let (a, b) = (grid[j], grid[j + 1]);
        let h = b - a;
        let u = inputs.value_at(a).clone();
        let dv = disturbance(model, d, a)?;
        let x_prev = x.clone();
        x = newton(
            x_prev.clone(),
            b,
            opts,
            |y| step_residual(model, &x_prev, y, &u, &dv, h),
            |y| Ok(step_jacobians(model, &x_prev, y, &u, &dv, h)?.next),
        )?;
        if (j + 1) % opts.record_every == 0 || j + 1 == steps {
            rec.push(b, &x, inputs.value_at(b));
        }
    }
    rec.finish(model)
}

/// Pointwise difference `a - b` of one column on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    pub output: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub inf_norm: f64,
    /// Euclidean norm of `values`.
    pub two_norm: f64,
}

impl ErrorSeries {
    /// CSV text with header `t,error`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,error\n");
        for (t, v) in self.times.iter().zip(&self.values) {
            crate::trajectory::write_float(&mut out, *t);
            out.push(',');
            crate::trajectory::write_float(&mut out, *v);
            out.push('\n');
        }
        out
    }
}

fn interpolate(times: &[f64], values: &[f64], t: f64) -> f64 {
    if times.len() == 1 {
        return values[0];
    }
    let j = times.partition_point(|&s| s <= t).clamp(1, times.len() - 1);
    let (a, b) = (times[j - 1], times[j]);
    let w = ((t - a) / (b - a)).clamp(0.0, 1.0);
    values[j - 1] * (1.0 - w) + values[j] * w
}

/// Difference of the named column of `a` and `b`, both sampled on the grid
/// of the trajectory with fewer samples, restricted to the common span.
pub fn compare_trajectories(a: &Trajectory, b: &Trajectory, output: &str) -> Result<ErrorSeries> {
    let ca = a.column_or_err(output)?;
    let cb = b.column_or_err(output)?;
    let (start, end) = (a.span().0.max(b.span().0), a.span().1.min(b.span().1));
    let slack = 1e-9 * (1.0 + start.abs().max(end.abs()));
    if start > end + slack {
        return Err(Error::Config(format!(
            "trajectories do not overlap: [{}, {}] and [{}, {}]",
            a.span().0,
            a.span().1,
            b.span().0,
            b.span().1
        )));
    }
    let grid: &Trajectory = if a.len() <= b.len() { a } else { b };
    let times: Vec<f64> = grid.times.iter().copied().filter(|&t| t >= start - slack && t <= end + slack).collect();
    let values: Vec<f64> =
        times.iter().map(|&t| interpolate(&a.times, &ca, t) - interpolate(&b.times, &cb, t)).collect();
    let inf_norm = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let two_norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(ErrorSeries { output: output.to_string(), times, values, inf_norm, two_norm })
}
