//! Optimal control problem data: horizon, stage cost, input-rate weights,
//! bounds, disturbances and the initial history.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{tau_max, DdeModel, HistoryFunction};

/// Lagrange-term integrand `Phi(x, u, d)` with analytic gradients.
pub trait StageCost: Send + Sync {
    fn value(&self, x: &DVector<f64>, u: &DVector<f64>, d: &DVector<f64>) -> f64;
    fn gradient_x(&self, x: &DVector<f64>, u: &DVector<f64>, d: &DVector<f64>) -> DVector<f64>;
    fn gradient_u(&self, x: &DVector<f64>, u: &DVector<f64>, d: &DVector<f64>) -> DVector<f64>;
}

/// `Phi = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroCost;

impl StageCost for ZeroCost {
    fn value(&self, _x: &DVector<f64>, _u: &DVector<f64>, _d: &DVector<f64>) -> f64 {
        0.0
    }
    fn gradient_x(&self, x: &DVector<f64>, _u: &DVector<f64>, _d: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(x.len())
    }
    fn gradient_u(&self, _x: &DVector<f64>, u: &DVector<f64>, _d: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(u.len())
    }
}

/// `Phi = 1/2 (x - x_ref)^T Q (x - x_ref)`.
#[derive(Debug, Clone)]
pub struct QuadraticStateCost {
    pub weight: DMatrix<f64>,
    pub reference: DVector<f64>,
}

impl StageCost for QuadraticStateCost {
    fn value(&self, x: &DVector<f64>, _u: &DVector<f64>, _d: &DVector<f64>) -> f64 {
        let e = x - &self.reference;
        0.5 * e.dot(&(&self.weight * &e))
    }
    fn gradient_x(&self, x: &DVector<f64>, _u: &DVector<f64>, _d: &DVector<f64>) -> DVector<f64> {
        let e = x - &self.reference;
        0.5 * (&self.weight + self.weight.transpose()) * e
    }
    fn gradient_u(&self, _x: &DVector<f64>, u: &DVector<f64>, _d: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(u.len())
    }
}

/// A discretized optimal control problem over `N` equidistant control intervals.
///
/// Disturbances `d_k` may be wider than the model's disturbance vector: the
/// model reads the leading `n_disturbances()` entries and the stage cost sees
/// all of them (e.g. a setpoint).
#[derive(Clone)]
pub struct OcpSpec {
    pub t0: f64,
    pub tf: f64,
    pub n_intervals: usize,
    pub stage_cost: Arc<dyn StageCost>,
    /// Input-rate weights `W_k`, one per interval.
    pub rate_weights: Vec<DMatrix<f64>>,
    /// Reference input `u_{-1}`.
    pub u_ref: DVector<f64>,
    pub x_min: DVector<f64>,
    pub x_max: DVector<f64>,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub disturbances: Vec<DVector<f64>>,
    pub history: HistoryFunction,
    /// Characteristic magnitudes used by the NLP solver to scale variables.
    pub state_scales: Option<DVector<f64>>,
    pub input_scales: Option<DVector<f64>>,
}

impl std::fmt::Debug for OcpSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OcpSpec")
            .field("t0", &self.t0)
            .field("tf", &self.tf)
            .field("n_intervals", &self.n_intervals)
            .field("u_ref", &self.u_ref)
            .finish_non_exhaustive()
    }
}

impl OcpSpec {
    /// Unbounded states, zero disturbances of width `n_d`, equal weights.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &dyn DdeModel,
        t0: f64,
        tf: f64,
        n_intervals: usize,
        stage_cost: Arc<dyn StageCost>,
        rate_weight: DMatrix<f64>,
        u_ref: DVector<f64>,
        u_min: DVector<f64>,
        u_max: DVector<f64>,
        history: HistoryFunction,
    ) -> Self {
        let n_x = model.n_states();
        OcpSpec {
            t0,
            tf,
            n_intervals,
            stage_cost,
            rate_weights: vec![rate_weight; n_intervals],
            u_ref,
            x_min: DVector::from_element(n_x, f64::NEG_INFINITY),
            x_max: DVector::from_element(n_x, f64::INFINITY),
            u_min,
            u_max,
            disturbances: vec![DVector::zeros(model.n_disturbances()); n_intervals],
            history,
            state_scales: None,
            input_scales: None,
        }
    }

    pub fn dt(&self) -> f64 {
        (self.tf - self.t0) / self.n_intervals as f64
    }

    /// Checks dimensions and the invariants of the problem data against `model`.
    pub fn validate(&self, model: &dyn DdeModel) -> Result<()> {
        let (n_x, n_u) = (model.n_states(), model.n_inputs());
        if self.n_intervals == 0 || !(self.tf > self.t0) {
            return Err(Error::Config("need N >= 1 and tf > t0".into()));
        }
        for (what, v, n) in [
            ("u_ref", &self.u_ref, n_u),
            ("u_min", &self.u_min, n_u),
            ("u_max", &self.u_max, n_u),
            ("x_min", &self.x_min, n_x),
            ("x_max", &self.x_max, n_x),
        ] {
            if v.len() != n {
                return Err(Error::Dimension { what, expected: n, got: v.len() });
            }
        }
        if self.rate_weights.len() != self.n_intervals {
            return Err(Error::Dimension { what: "rate weights", expected: self.n_intervals, got: self.rate_weights.len() });
        }
        if self.disturbances.len() != self.n_intervals {
            return Err(Error::Dimension { what: "disturbances", expected: self.n_intervals, got: self.disturbances.len() });
        }
        if self.disturbances.iter().any(|d| d.len() < model.n_disturbances()) {
            return Err(Error::Config("disturbance vectors narrower than the model's".into()));
        }
        for (k, w) in self.rate_weights.iter().enumerate() {
            if w.nrows() != n_u || w.ncols() != n_u {
                return Err(Error::Dimension { what: "rate weight", expected: n_u, got: w.nrows() });
            }
            if (w - w.transpose()).amax() > 1e-12 * w.amax().max(1.0) {
                return Err(Error::Config(format!("W_{k} is not symmetric")));
            }
            if n_u > 0 && w.clone().cholesky().is_none() {
                return Err(Error::Config(format!("W_{k} is not positive definite")));
            }
        }
        for j in 0..n_u {
            if !(self.u_min[j] <= self.u_ref[j] && self.u_ref[j] <= self.u_max[j]) {
                return Err(Error::Config(format!("u_ref[{j}] outside [u_min, u_max]")));
            }
        }
        for j in 0..n_x {
            if !(self.x_min[j] < self.x_max[j]) {
                return Err(Error::Config(format!("x_min[{j}] must be below x_max[{j}]")));
            }
        }
        if self.history.dim() != n_x {
            return Err(Error::Dimension { what: "history", expected: n_x, got: self.history.dim() });
        }
        let tau = tau_max(model, &self.u_min, &self.u_max)?;
        if !self.history.covers(self.t0 - tau, self.t0) {
            let (a, b) = self.history.span();
            return Err(Error::Config(format!(
                "history [{a}, {b}] does not cover [t0 - tau_max, t0] = [{}, {}]",
                self.t0 - tau,
                self.t0
            )));
        }
        for (what, s, n) in [("state scales", &self.state_scales, n_x), ("input scales", &self.input_scales, n_u)] {
            if let Some(s) = s {
                if s.len() != n {
                    return Err(Error::Dimension { what, expected: n, got: s.len() });
                }
                if s.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::Config(format!("{what} must be positive")));
                }
            }
        }
        Ok(())
    }
}
