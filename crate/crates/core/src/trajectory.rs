//! Time series of states, inputs and derived outputs, piecewise-constant
//! schedules, and their CSV form.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Strictly increasing grid (s).
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// ZOH input value active at each grid point.
    pub inputs: Vec<DVector<f64>>,
    pub state_names: Vec<String>,
    pub input_names: Vec<String>,
    /// Named derived outputs, each with one value per grid point.
    pub outputs: Vec<(String, Vec<f64>)>,
}

impl Trajectory {
    pub fn new(
        times: Vec<f64>,
        states: Vec<DVector<f64>>,
        inputs: Vec<DVector<f64>>,
        state_names: Vec<String>,
        input_names: Vec<String>,
        outputs: Vec<(String, Vec<f64>)>,
    ) -> Result<Self> {
        let traj = Trajectory { times, states, inputs, state_names, input_names, outputs };
        traj.check()?;
        Ok(traj)
    }

    /// States only, with generic names `x0, x1, ...` and empty inputs.
    pub fn from_states(times: Vec<f64>, states: Vec<DVector<f64>>) -> Self {
        let n = states.first().map_or(0, |x| x.len());
        let len = times.len();
        Trajectory {
            times,
            states,
            inputs: vec![DVector::zeros(0); len],
            state_names: (0..n).map(|j| format!("x{j}")).collect(),
            input_names: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn check(&self) -> Result<()> {
        let n = self.times.len();
        if n == 0 {
            return Err(Error::Config("trajectory has no samples".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("trajectory times must be strictly increasing".into()));
        }
        for (what, got) in [("states", self.states.len()), ("inputs", self.inputs.len())] {
            if got != n {
                return Err(Error::Dimension { what, expected: n, got });
            }
        }
        for (_, col) in &self.outputs {
            if col.len() != n {
                return Err(Error::Dimension { what: "output column", expected: n, got: col.len() });
            }
        }
        if self.states.iter().any(|x| x.len() != self.state_names.len()) {
            return Err(Error::Dimension {
                what: "state width",
                expected: self.state_names.len(),
                got: self.states[0].len(),
            });
        }
        if self.inputs.iter().any(|u| u.len() != self.input_names.len()) {
            return Err(Error::Dimension {
                what: "input width",
                expected: self.input_names.len(),
                got: self.inputs[0].len(),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn span(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().unwrap())
    }

    /// Index `j` with `times[j] <= t <= times[j+1]`, or `None` outside the span.
    fn bracket(&self, t: f64) -> Option<usize> {
        let (a, b) = self.span();
        let slack = 1e-12 * (1.0 + a.abs().max(b.abs()));
        if t < a - slack || t > b + slack {
            return None;
        }
        if self.times.len() == 1 {
            return Some(0);
        }
        let j = self.times.partition_point(|&s| s <= t);
        Some(j.saturating_sub(1).min(self.times.len() - 2))
    }

    fn weight(&self, j: usize, t: f64) -> f64 {
        if self.times.len() == 1 {
            return 0.0;
        }
        let (t0, t1) = (self.times[j], self.times[j + 1]);
        ((t - t0) / (t1 - t0)).clamp(0.0, 1.0)
    }

    /// Piecewise-linear state interpolation.
    pub fn interpolate_state(&self, t: f64) -> Option<DVector<f64>> {
        let j = self.bracket(t)?;
        if self.times.len() == 1 {
            return Some(self.states[0].clone());
        }
        let s = self.weight(j, t);
        Some(&self.states[j] * (1.0 - s) + &self.states[j + 1] * s)
    }

    pub fn column_names(&self) -> Vec<String> {
        self.state_names
            .iter()
            .chain(self.input_names.iter())
            .cloned()
            .chain(self.outputs.iter().map(|(n, _)| n.clone()))
            .collect()
    }

    /// A named column: state, input or derived output.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        if let Some(j) = self.state_names.iter().position(|n| n == name) {
            return Some(self.states.iter().map(|x| x[j]).collect());
        }
        if let Some(j) = self.input_names.iter().position(|n| n == name) {
            return Some(self.inputs.iter().map(|u| u[j]).collect());
        }
        self.outputs.iter().find(|(n, _)| n == name).map(|(_, c)| c.clone())
    }

    pub fn column_or_err(&self, name: &str) -> Result<Vec<f64>> {
        self.column(name).ok_or_else(|| Error::UnknownOutput {
            name: name.to_string(),
            available: self.column_names().join(", "),
        })
    }

    /// Keeps every `stride`-th sample and always the last one.
    pub fn decimate(&self, stride: usize) -> Trajectory {
        if stride <= 1 {
            return self.clone();
        }
        let n = self.len();
        let keep: Vec<usize> = (0..n).filter(|j| j % stride == 0 || *j == n - 1).collect();
        Trajectory {
            times: keep.iter().map(|&j| self.times[j]).collect(),
            states: keep.iter().map(|&j| self.states[j].clone()).collect(),
            inputs: keep.iter().map(|&j| self.inputs[j].clone()).collect(),
            state_names: self.state_names.clone(),
            input_names: self.input_names.clone(),
            outputs: self
                .outputs
                .iter()
                .map(|(name, c)| (name.clone(), keep.iter().map(|&j| c[j]).collect()))
                .collect(),
        }
    }

    /// CSV text: `t,<states>,<inputs>,<outputs>`, LF line endings, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push('t');
        for name in self.column_names() {
            out.push(',');
            out.push_str(&name);
        }
        out.push('\n');
        for j in 0..self.len() {
            write_float(&mut out, self.times[j]);
            for v in self.states[j].iter().chain(self.inputs[j].iter()) {
                out.push(',');
                write_float(&mut out, *v);
            }
            for (_, col) in &self.outputs {
                out.push(',');
                write_float(&mut out, col[j]);
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parses CSV written by [`Trajectory::to_csv`]. The first `n_states`
    /// columns after `t` are states, the next `n_inputs` inputs, the rest outputs.
    pub fn from_csv(text: &str, n_states: usize, n_inputs: usize) -> Result<Trajectory> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Parse("empty CSV".into()))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        if header.first().map(String::as_str) != Some("t") {
            return Err(Error::Parse("first CSV column must be `t`".into()));
        }
        let width = header.len() - 1;
        if n_states + n_inputs > width {
            return Err(Error::Parse(format!(
                "CSV has {width} data columns, expected at least {}",
                n_states + n_inputs
            )));
        }
        let mut times = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))?;
            if vals.len() != header.len() {
                return Err(Error::Parse(format!(
                    "line {}: {} fields, header has {}",
                    lineno + 2,
                    vals.len(),
                    header.len()
                )));
            }
            times.push(vals[0]);
            rows.push(vals[1..].to_vec());
        }
        let names = &header[1..];
        let states = rows.iter().map(|r| DVector::from_column_slice(&r[..n_states])).collect();
        let inputs = rows
            .iter()
            .map(|r| DVector::from_column_slice(&r[n_states..n_states + n_inputs]))
            .collect();
        let outputs = (n_states + n_inputs..width)
            .map(|c| (names[c].clone(), rows.iter().map(|r| r[c]).collect()))
            .collect();
        Trajectory::new(
            times,
            states,
            inputs,
            names[..n_states].to_vec(),
            names[n_states..n_states + n_inputs].to_vec(),
            outputs,
        )
    }

    pub fn read_csv(path: &Path, n_states: usize, n_inputs: usize) -> Result<Trajectory> {
        let text = std::fs::read_to_string(path)?;
        Trajectory::from_csv(&text, n_states, n_inputs)
    }
}

pub(crate) fn write_float(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.16e}");
}

/// Piecewise-constant (zero-order-hold) signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    /// Breakpoints; `values[i]` holds on `[times[i], times[i+1])`.
    pub times: Vec<f64>,
    pub values: Vec<DVector<f64>>,
}

impl Schedule {
    pub fn new(times: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::Config("schedule needs one value per breakpoint".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("schedule breakpoints must be strictly increasing".into()));
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::Config("schedule values differ in dimension".into()));
        }
        Ok(Schedule { times, values })
    }

    pub fn constant(value: DVector<f64>) -> Self {
        Schedule { times: vec![f64::NEG_INFINITY], values: vec![value] }
    }

    /// Values held on `[t0 + k dt, t0 + (k+1) dt)`.
    pub fn uniform(t0: f64, dt: f64, values: Vec<DVector<f64>>) -> Self {
        let times = (0..values.len()).map(|k| t0 + k as f64 * dt).collect();
        Schedule { times, values }
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// Right-continuous evaluation; before the first breakpoint the first value holds.
    pub fn value_at(&self, t: f64) -> &DVector<f64> {
        let slack = 1e-9 * (1.0 + t.abs());
        let j = self.times.partition_point(|&s| s <= t + slack);
        &self.values[j.saturating_sub(1)]
    }

    /// Finite breakpoints inside `(a, b)`.
    pub fn breakpoints_within(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        self.times.iter().copied().filter(move |&t| t.is_finite() && t > a && t < b)
    }
}
