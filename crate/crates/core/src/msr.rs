//! Molten-salt fission reactor with circulating fuel.
//!
//! Ten states, packed as
//! `x = (C_1..C_6, C_n, rho_th, T_r, T_hx)`, two inputs `u = (rho_ext [pcm], v [m/s])`
//! and two input-dependent delays: the external loop transit `tau_1 = L / v`
//! acting on the precursor concentrations, and the half-loop transit
//! `tau_2 = L / (2 v)` acting on the two temperatures.
//!
//! The thermal reactivity obeys `rho_th' = -kappa T_r'`; the reactor
//! temperature balance is substituted so the right-hand side is explicit.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{DdeModel, HistoryFunction, RhsJacobians};
use crate::ocp::{OcpSpec, StageCost};
use crate::transcription::TranscribedNlp;

pub const N_GROUPS: usize = 6;
pub const N_STATES: usize = N_GROUPS + 4;
pub const C_N: usize = 6;
pub const RHO_TH: usize = 7;
pub const T_R: usize = 8;
pub const T_HX: usize = 9;
pub const RHO_EXT: usize = 0;
pub const VELOCITY: usize = 1;

/// One pcm in absolute reactivity units.
pub const PCM: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct MsrParams {
    /// Precursor decay constants (1/s).
    pub lambda: [f64; N_GROUPS],
    /// Delayed neutron fractions.
    pub beta_groups: [f64; N_GROUPS],
    /// Total delayed fraction. Replaced by the sum of `beta_groups` on build.
    pub beta: f64,
    /// Mean neutron generation time (s).
    pub generation_time: f64,
    /// Specific heat (MJ/(kg K)).
    pub c_p: f64,
    /// Heat-exchanger conductivity (MW/K).
    pub k_hx: f64,
    /// Thermal reactivity coefficient (1/K).
    pub kappa: f64,
    /// Salt density (kg/m^3).
    pub salt_density: f64,
    pub m_r: f64,
    pub m_hx: f64,
    /// Core volume (m^3).
    pub volume: f64,
    /// Pipe cross-section (m^2).
    pub area: f64,
    /// External loop length (m).
    pub loop_length: f64,
    /// Coolant temperature (K).
    pub t_coolant: f64,
    /// Nominal power (MW).
    pub q_nominal: f64,
    /// Neutron concentration at nominal power (1/m^3).
    pub c_n_nominal: f64,
}

impl Default for MsrParams {
    #[allow(clippy::approx_constant)]
    fn default() -> Self {
        MsrParams {
            lambda: [0.0124, 0.0305, 0.1110, 0.3010, 1.1300, 3.0000],
            beta_groups: [0.00021, 0.00141, 0.00127, 0.00255, 0.00074, 0.00027],
            beta: 0.00645,
            generation_time: 5e-5,
            c_p: 2e-3,
            k_hx: 0.5,
            kappa: 5e-5,
            salt_density: 2000.0,
            m_r: 10_000.0,
            m_hx: 2500.0,
            volume: 0.5,
            area: 0.3,
            loop_length: 30.0,
            t_coolant: 723.15,
            q_nominal: 1.0,
            c_n_nominal: 1.0,
        }
    }
}

impl MsrParams {
    fn check(&self) -> Result<()> {
        let scalars = [
            ("generation_time", self.generation_time),
            ("c_p", self.c_p),
            ("k_hx", self.k_hx),
            ("kappa", self.kappa),
            ("salt_density", self.salt_density),
            ("m_r", self.m_r),
            ("m_hx", self.m_hx),
            ("volume", self.volume),
            ("area", self.area),
            ("loop_length", self.loop_length),
            ("t_coolant", self.t_coolant),
            ("q_nominal", self.q_nominal),
            ("c_n_nominal", self.c_n_nominal),
        ];
        for (name, v) in scalars {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("parameter {name} must be positive, got {v}")));
            }
        }
        for i in 0..N_GROUPS {
            if !(self.lambda[i] > 0.0) || !(self.beta_groups[i] > 0.0) {
                return Err(Error::Config(format!("group {} needs positive lambda and beta", i + 1)));
            }
        }
        Ok(())
    }
}

/// Named view of the packed state vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsrState {
    pub precursors: [f64; N_GROUPS],
    pub neutrons: f64,
    /// Absolute units.
    pub rho_th: f64,
    pub t_r: f64,
    pub t_hx: f64,
}

impl MsrState {
    pub fn to_vector(&self) -> DVector<f64> {
        let mut x = DVector::zeros(N_STATES);
        x.rows_mut(0, N_GROUPS).copy_from_slice(&self.precursors);
        x[C_N] = self.neutrons;
        x[RHO_TH] = self.rho_th;
        x[T_R] = self.t_r;
        x[T_HX] = self.t_hx;
        x
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        let mut precursors = [0.0; N_GROUPS];
        precursors.copy_from_slice(&x.as_slice()[..N_GROUPS]);
        MsrState { precursors, neutrons: x[C_N], rho_th: x[RHO_TH], t_r: x[T_R], t_hx: x[T_HX] }
    }
}

/// The reactor as a [`DdeModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct MsrModel {
    params: MsrParams,
}

impl MsrModel {
    /// Builds the model. `beta` is reset to the sum of the group fractions.
    pub fn new(mut params: MsrParams) -> Result<Self> {
        params.check()?;
        let sum: f64 = params.beta_groups.iter().sum();
        if (params.beta - sum).abs() > 1e-12 {
            log::warn!(
                "total delayed fraction {} differs from the group sum {sum}; using the group sum",
                params.beta
            );
        }
        params.beta = sum;
        Ok(MsrModel { params })
    }

    pub fn params(&self) -> &MsrParams {
        &self.params
    }

    fn check_velocity(v: f64) -> Result<()> {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain(format!("salt velocity must be positive, got {v}")))
        }
    }

    /// Dilution rate `D = A v / V` (1/s).
    pub fn dilution_rate(&self, v: f64) -> f64 {
        self.params.area * v / self.params.volume
    }

    /// Mass flow through core and heat exchanger, `rho_s A v` (kg/s).
    pub fn mass_flow(&self, v: f64) -> f64 {
        self.params.salt_density * self.params.area * v
    }

    /// External-loop transit time `L / v`.
    pub fn transit_time(&self, v: f64) -> f64 {
        self.params.loop_length / v
    }

    /// Generated thermal power (MW).
    pub fn power(&self, x: &DVector<f64>) -> f64 {
        self.params.q_nominal * x[C_N] / self.params.c_n_nominal
    }

    /// Per-group loss rate `D (1 - exp(-lambda_i tau))` of the circulation.
    fn loop_loss(&self, v: f64) -> [f64; N_GROUPS] {
        let d = self.dilution_rate(v);
        let tau = self.transit_time(v);
        let mut out = [0.0; N_GROUPS];
        for (i, o) in out.iter_mut().enumerate() {
            *o = -d * (-self.params.lambda[i] * tau).exp_m1();
        }
        out
    }

    /// Total reactivity that keeps the neutron population stationary at velocity `v`.
    pub fn critical_reactivity(&self, v: f64) -> Result<f64> {
        Self::check_velocity(v)?;
        let loss = self.loop_loss(v);
        Ok((0..N_GROUPS)
            .map(|i| self.params.beta_groups[i] * loss[i] / (self.params.lambda[i] + loss[i]))
            .sum())
    }

    /// Closed-form steady state at velocity `v`, external reactivity `rho_ext_pcm`
    /// and power `q_g` (MW).
    pub fn steady_state(&self, v: f64, rho_ext_pcm: f64, q_g: f64) -> Result<MsrState> {
        Self::check_velocity(v)?;
        if !(q_g > 0.0) {
            return Err(Error::Domain(format!("steady power must be positive, got {q_g}")));
        }
        let p = &self.params;
        let c_n = p.c_n_nominal * q_g / p.q_nominal;
        let loss = self.loop_loss(v);
        let mut precursors = [0.0; N_GROUPS];
        for i in 0..N_GROUPS {
            precursors[i] = p.beta_groups[i] * c_n / (p.generation_time * (p.lambda[i] + loss[i]));
        }
        let t_hx = p.t_coolant + q_g / p.k_hx;
        let t_r = t_hx + q_g / (self.mass_flow(v) * p.c_p);
        let rho_th = self.critical_reactivity(v)? - rho_ext_pcm * PCM;
        Ok(MsrState { precursors, neutrons: c_n, rho_th, t_r, t_hx })
    }

    /// Characteristic magnitudes: concentrations 1, reactivity 100 pcm, temperatures 100 K.
    pub fn default_state_scales() -> DVector<f64> {
        let mut s = DVector::from_element(N_STATES, 1.0);
        s[RHO_TH] = 100.0 * PCM;
        s[T_R] = 100.0;
        s[T_HX] = 100.0;
        s
    }

    /// Characteristic magnitudes: 100 pcm and 1 m/s.
    pub fn default_input_scales() -> DVector<f64> {
        DVector::from_vec(vec![100.0, 1.0])
    }

    /// Reactor temperature rate shared by the `T_r` and `rho_th` equations.
    fn core_heating(&self, x: &DVector<f64>, t_hx_delayed: f64, v: f64) -> f64 {
        let p = &self.params;
        self.mass_flow(v) / p.m_r * (t_hx_delayed - x[T_R]) + self.power(x) / (p.m_r * p.c_p)
    }
}

impl DdeModel for MsrModel {
    fn n_states(&self) -> usize {
        N_STATES
    }

    fn n_inputs(&self) -> usize {
        2
    }

    fn delayed_dims(&self) -> Vec<usize> {
        vec![N_GROUPS, 2]
    }

    fn delay(&self, i: usize, u: &DVector<f64>) -> Result<f64> {
        let v = u[VELOCITY];
        Self::check_velocity(v)?;
        Ok(match i {
            0 => self.params.loop_length / v,
            _ => self.params.loop_length / (2.0 * v),
        })
    }

    fn delay_gradient(&self, i: usize, u: &DVector<f64>) -> Result<DVector<f64>> {
        let tau = self.delay(i, u)?;
        Ok(DVector::from_vec(vec![0.0, -tau / u[VELOCITY]]))
    }

    fn delayed_quantity(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        match i {
            0 => x.rows(0, N_GROUPS).into_owned(),
            _ => x.rows(T_R, 2).into_owned(),
        }
    }

    fn delayed_quantity_jacobian(&self, i: usize, _x: &DVector<f64>) -> DMatrix<f64> {
        match i {
            0 => {
                let mut j = DMatrix::zeros(N_GROUPS, N_STATES);
                j.view_mut((0, 0), (N_GROUPS, N_GROUPS)).fill_with_identity();
                j
            }
            _ => {
                let mut j = DMatrix::zeros(2, N_STATES);
                j[(0, T_R)] = 1.0;
                j[(1, T_HX)] = 1.0;
                j
            }
        }
    }

    /// The velocity is only range-checked; the maximum delay is at the slowest flow.
    fn delay_upper_bound(&self, i: usize, u_min: &DVector<f64>, _u_max: &DVector<f64>) -> Result<f64> {
        self.delay(i, u_min)
    }

    fn rhs(&self, x: &DVector<f64>, z: &DVector<f64>, u: &DVector<f64>, _d: &DVector<f64>) -> Result<DVector<f64>> {
        let p = &self.params;
        let v = u[VELOCITY];
        Self::check_velocity(v)?;
        let dil = self.dilution_rate(v);
        let tau = self.transit_time(v);
        let lg = p.generation_time;
        let rho = x[RHO_TH] + u[RHO_EXT] * PCM;

        let mut dx = DVector::zeros(N_STATES);
        let mut delayed_decay = 0.0;
        for i in 0..N_GROUPS {
            let inlet = z[i] * (-p.lambda[i] * tau).exp();
            dx[i] = (inlet - x[i]) * dil - p.lambda[i] * x[i] + p.beta_groups[i] * x[C_N] / lg;
            delayed_decay += p.lambda[i] * x[i];
        }
        dx[C_N] = delayed_decay + (rho - p.beta) * x[C_N] / lg;
        let heating = self.core_heating(x, z[N_GROUPS + 1], v);
        dx[T_R] = heating;
        dx[RHO_TH] = -p.kappa * heating;
        dx[T_HX] = self.mass_flow(v) / p.m_hx * (z[N_GROUPS] - x[T_HX])
            - p.k_hx / (p.m_hx * p.c_p) * (x[T_HX] - p.t_coolant);
        Ok(dx)
    }

    fn rhs_jacobians(&self, x: &DVector<f64>, z: &DVector<f64>, u: &DVector<f64>, _d: &DVector<f64>) -> Result<RhsJacobians> {
        let p = &self.params;
        let v = u[VELOCITY];
        Self::check_velocity(v)?;
        let dil = self.dilution_rate(v);
        let tau = self.transit_time(v);
        let dtau_dv = -tau / v;
        let ddil_dv = p.area / p.volume;
        let lg = p.generation_time;
        let rho = x[RHO_TH] + u[RHO_EXT] * PCM;
        let flow_r = self.mass_flow(v) / p.m_r;
        let flow_hx = self.mass_flow(v) / p.m_hx;
        let dflow_dv = p.salt_density * p.area;
        let heat_gain = p.q_nominal / (p.c_n_nominal * p.m_r * p.c_p);

        let mut dx = DMatrix::zeros(N_STATES, N_STATES);
        let mut dz = DMatrix::zeros(N_STATES, N_GROUPS + 2);
        let mut du = DMatrix::zeros(N_STATES, 2);

        for i in 0..N_GROUPS {
            let decay = (-p.lambda[i] * tau).exp();
            dx[(i, i)] = -dil - p.lambda[i];
            dx[(i, C_N)] = p.beta_groups[i] / lg;
            dz[(i, i)] = decay * dil;
            let ddecay_dv = -p.lambda[i] * decay * dtau_dv;
            du[(i, VELOCITY)] = z[i] * ddecay_dv * dil + (z[i] * decay - x[i]) * ddil_dv;

            dx[(C_N, i)] = p.lambda[i];
        }
        dx[(C_N, C_N)] = (rho - p.beta) / lg;
        dx[(C_N, RHO_TH)] = x[C_N] / lg;
        du[(C_N, RHO_EXT)] = PCM * x[C_N] / lg;

        let t_hx_delayed = z[N_GROUPS + 1];
        let t_r_delayed = z[N_GROUPS];
        // core temperature row, reused (scaled by -kappa) for rho_th
        let mut core = DMatrix::zeros(1, N_STATES);
        core[(0, T_R)] = -flow_r;
        core[(0, C_N)] = heat_gain;
        let core_dz = flow_r;
        let core_dv = dflow_dv / p.m_r * (t_hx_delayed - x[T_R]);
        dx.row_mut(T_R).copy_from(&core.row(0));
        dx.row_mut(RHO_TH).copy_from(&(-p.kappa * core.row(0)));
        dz[(T_R, N_GROUPS + 1)] = core_dz;
        dz[(RHO_TH, N_GROUPS + 1)] = -p.kappa * core_dz;
        du[(T_R, VELOCITY)] = core_dv;
        du[(RHO_TH, VELOCITY)] = -p.kappa * core_dv;

        dx[(T_HX, T_HX)] = -flow_hx - p.k_hx / (p.m_hx * p.c_p);
        dz[(T_HX, N_GROUPS)] = flow_hx;
        du[(T_HX, VELOCITY)] = dflow_dv / p.m_hx * (t_r_delayed - x[T_HX]);

        Ok(RhsJacobians { dx, dz, du })
    }

    fn state_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=N_GROUPS).map(|i| format!("C{i}")).collect();
        names.extend(["Cn", "rho_th", "T_r", "T_hx"].map(String::from));
        names
    }

    fn input_names(&self) -> Vec<String> {
        vec!["rho_ext".into(), "v".into()]
    }

    fn output_names(&self) -> Vec<String> {
        vec!["Q_g".into(), "rho_total".into(), "tau_1".into()]
    }

    fn outputs(&self, x: &DVector<f64>, u: &DVector<f64>) -> Vec<f64> {
        vec![
            self.power(x),
            x[RHO_TH] + u[RHO_EXT] * PCM,
            self.transit_time(u[VELOCITY]),
        ]
    }
}

/// `Phi = 1/2 w_Q (Q_g(x) - Q_sp)^2`, with the setpoint `Q_sp` read from `d[0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTrackingCost {
    pub weight: f64,
    pub q_nominal: f64,
    pub c_n_nominal: f64,
}

impl PowerTrackingCost {
    pub fn new(model: &MsrModel, weight: f64) -> Self {
        PowerTrackingCost {
            weight,
            q_nominal: model.params().q_nominal,
            c_n_nominal: model.params().c_n_nominal,
        }
    }

    fn error(&self, x: &DVector<f64>, d: &DVector<f64>) -> f64 {
        self.q_nominal * x[C_N] / self.c_n_nominal - d[0]
    }
}

impl StageCost for PowerTrackingCost {
    fn value(&self, x: &DVector<f64>, _u: &DVector<f64>, d: &DVector<f64>) -> f64 {
        let e = self.error(x, d);
        0.5 * self.weight * e * e
    }

    fn gradient_x(&self, x: &DVector<f64>, _u: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        g[C_N] = self.weight * self.error(x, d) * self.q_nominal / self.c_n_nominal;
        g
    }

    fn gradient_u(&self, _x: &DVector<f64>, u: &DVector<f64>, _d: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(u.len())
    }
}

/// Power setpoint tracking from the steady state at `q_initial`.
///
/// The setpoint is piecewise constant, carried as the first disturbance
/// entry of each control interval, and penalized by [`PowerTrackingCost`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingSetup {
    pub t0: f64,
    pub tf: f64,
    /// Control interval (s).
    pub dt: f64,
    /// Power of the steady history before `t0` (MW).
    pub q_initial: f64,
    /// `(t_start, Q_sp)` pairs, nondecreasing in time.
    pub setpoints: Vec<(f64, f64)>,
    /// `w_Q` (1/(MW^2 s)).
    pub power_weight: f64,
    /// Diagonal of `W_k`: (s/pcm^2, s^3/m^2).
    pub rate_weight: [f64; 2],
    /// `u_{-1}`, also the input of the steady history.
    pub u_ref: DVector<f64>,
    /// Inputs used for the initial guess on every interval.
    pub u_guess: DVector<f64>,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
}

impl Default for TrackingSetup {
    fn default() -> Self {
        TrackingSetup {
            t0: 0.0,
            tf: 3000.0,
            dt: 30.0,
            q_initial: 1.0,
            setpoints: vec![(0.0, 1.0), (300.0, 2.5)],
            power_weight: 1.0,
            rate_weight: [1e-2, 1e2],
            u_ref: DVector::from_vec(vec![50.0, 4.0]),
            u_guess: DVector::from_vec(vec![50.0, 4.0]),
            u_min: DVector::from_vec(vec![-1000.0, 0.5]),
            u_max: DVector::from_vec(vec![1000.0, 10.0]),
        }
    }
}

impl TrackingSetup {
    pub fn n_intervals(&self) -> Result<usize> {
        let n = (self.tf - self.t0) / self.dt;
        if !(n >= 0.5) || (n - n.round()).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::Config(format!("horizon {} s is not a multiple of dt = {} s", self.tf - self.t0, self.dt)));
        }
        Ok(n.round() as usize)
    }

    /// Setpoint in force at `t`; the first entry also covers earlier times.
    pub fn setpoint_at(&self, t: f64) -> f64 {
        let slack = 1e-9 * (1.0 + t.abs());
        self.setpoints
            .iter()
            .take_while(|(s, _)| *s <= t + slack)
            .last()
            .or(self.setpoints.first())
            .map_or(self.q_initial, |(_, q)| *q)
    }

    pub fn check(&self) -> Result<()> {
        if self.setpoints.is_empty() {
            return Err(Error::Config("at least one setpoint is required".into()));
        }
        if self.setpoints.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(Error::Config("setpoint times must be nondecreasing".into()));
        }
        for &(t, q) in &self.setpoints {
            if t < self.t0 || t > self.tf {
                return Err(Error::Config(format!("setpoint time {t} outside [t0, tf]")));
            }
            if !(q > 0.0) {
                return Err(Error::Config(format!("setpoint {q} MW must be positive")));
            }
        }
        if !(self.power_weight > 0.0) || self.rate_weight.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Config("weights must be positive".into()));
        }
        self.n_intervals().map(|_| ())
    }

    /// Constant history at the steady state for `q_initial` and `u_ref`.
    pub fn history(&self, model: &MsrModel) -> Result<HistoryFunction> {
        let s = model.steady_state(self.u_ref[VELOCITY], self.u_ref[RHO_EXT], self.q_initial)?;
        Ok(HistoryFunction::Constant(s.to_vector()))
    }

    pub fn build_ocp(&self, model: &MsrModel) -> Result<OcpSpec> {
        self.check()?;
        let n = self.n_intervals()?;
        let mut ocp = OcpSpec::new(
            model,
            self.t0,
            self.tf,
            n,
            Arc::new(PowerTrackingCost::new(model, self.power_weight)),
            DMatrix::from_diagonal(&DVector::from_column_slice(&self.rate_weight)),
            self.u_ref.clone(),
            self.u_min.clone(),
            self.u_max.clone(),
            self.history(model)?,
        );
        ocp.disturbances = (0..n)
            .map(|k| DVector::from_element(1, self.setpoint_at(self.t0 + k as f64 * self.dt)))
            .collect();
        ocp.state_scales = Some(MsrModel::default_state_scales());
        ocp.input_scales = Some(MsrModel::default_input_scales());
        Ok(ocp)
    }

    /// States at the steady state for each interval's setpoint under `u_guess`;
    /// inputs equal to `u_guess`.
    pub fn initial_guess(&self, model: &MsrModel, nlp: &TranscribedNlp<'_>) -> Result<DVector<f64>> {
        let inputs = vec![self.u_guess.clone(); nlp.n_intervals()];
        let mut states = Vec::with_capacity(nlp.n_intervals());
        for d in &nlp.ocp().disturbances {
            states.push(model.steady_state(self.u_guess[VELOCITY], self.u_guess[RHO_EXT], d[0])?.to_vector());
        }
        let (t0, dt) = (self.t0, nlp.ocp().dt());
        nlp.initial_guess(
            |t| {
                let k = (((t - t0) / dt - 1e-9).ceil() as usize).saturating_sub(1).min(states.len() - 1);
                states[k].clone()
            },
            &inputs,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::memory_at;
    use crate::validate::{validate_jacobians, SamplePoint};
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> MsrModel {
        MsrModel::new(MsrParams::default()).unwrap()
    }

    #[test]
    fn beta_is_group_sum() {
        assert!((model().params().beta - 0.00645).abs() < 1e-15);
    }

    #[test]
    fn transport_quantities_at_four_metres_per_second() {
        let m = model();
        let u = dvector![50.0, 4.0];
        assert_eq!(m.delay(0, &u).unwrap(), 7.5);
        assert_eq!(m.delay(1, &u).unwrap(), 3.75);
        assert!((m.dilution_rate(4.0) - 2.4).abs() < 1e-12);
        assert!((m.mass_flow(4.0) - 2400.0).abs() < 1e-9);
    }

    #[test]
    fn steady_temperatures_and_neutrons() {
        let s = model().steady_state(4.0, 50.0, 1.0).unwrap();
        assert!((s.t_hx - 725.15).abs() < 1e-10);
        // T_hx + 1 / (2400 * 2e-3)
        assert!((s.t_r - (725.15 + 1.0 / 4.8)).abs() < 1e-10);
        assert!((s.t_r - 725.3583).abs() < 1e-4);
        assert_eq!(s.neutrons, 1.0);
        // group 6 decays almost completely in the loop
        let c6_limit = 0.00027 / (5e-5 * (3.0 + 2.4));
        assert!((s.precursors[5] - c6_limit).abs() < 1e-9);
        assert!((s.precursors[5] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn steady_state_zeroes_rhs() {
        let m = model();
        for q in [1.0, 2.5, 5.0, 7.5, 10.0] {
            for (v, rho) in [(4.0, 50.0), (0.7, -300.0), (9.0, 800.0)] {
                let x = m.steady_state(v, rho, q).unwrap().to_vector();
                let u = dvector![rho, v];
                let f = m.rhs(&x, &memory_at(&m, &x), &u, &DVector::zeros(0)).unwrap();
                for j in 0..N_STATES {
                    assert!(f[j].abs() <= 1e-10 * x[j].abs().max(1.0), "q={q} v={v} comp {j}: {}", f[j]);
                }
            }
        }
    }

    #[test]
    fn power_temperature_relation() {
        let m = model();
        for q in [1.0, 2.5, 5.0, 7.5, 10.0] {
            let s = m.steady_state(3.0, 0.0, q).unwrap();
            assert!((s.t_hx - 723.15 - q / 0.5).abs() < 1e-10);
        }
    }

    /// Independent route: Newton on the precursor and neutron balances for
    /// (C_1..C_6, rho) with C_n pinned, finite-difference Jacobian.
    fn critical_by_newton(m: &MsrModel, v: f64) -> f64 {
        let p = m.params().clone();
        let tau = p.loop_length / v;
        let dil = p.area * v / p.volume;
        let residual = |w: &DVector<f64>| -> DVector<f64> {
            let mut r = DVector::zeros(7);
            let c_n = 1.0;
            let mut decay = 0.0;
            for i in 0..6 {
                r[i] = w[i] * (-p.lambda[i] * tau).exp() * dil - w[i] * dil - p.lambda[i] * w[i]
                    + p.beta_groups[i] * c_n / p.generation_time;
                decay += p.lambda[i] * w[i];
            }
            r[6] = decay + (w[6] - p.beta) * c_n / p.generation_time;
            r
        };
        let mut w = DVector::from_element(7, 1.0);
        w[6] = 0.0;
        for _ in 0..50 {
            let r = residual(&w);
            let jac = crate::validate::central_difference(&w, |w| Ok(residual(w))).unwrap();
            let step = jac.lu().solve(&r).unwrap();
            w -= step;
            if residual(&w).amax() < 1e-13 {
                break;
            }
        }
        w[6]
    }

    #[test]
    fn critical_reactivity_matches_newton() {
        let m = model();
        for v in [0.5, 1.0, 4.0, 10.0] {
            let closed = m.critical_reactivity(v).unwrap();
            let newton = critical_by_newton(&m, v);
            assert!((closed - newton).abs() < 1e-12, "v={v}: {closed} vs {newton}");
        }
        // value at v = 4 m/s, frozen from both routes
        assert!((m.critical_reactivity(4.0).unwrap() - 0.005559648326148286).abs() < 1e-15);
    }

    #[test]
    fn critical_reactivity_limits() {
        let short = MsrModel::new(MsrParams { loop_length: 1e-12, ..MsrParams::default() }).unwrap();
        assert!(short.critical_reactivity(4.0).unwrap().abs() < 1e-12);
        let static_fuel = MsrModel::new(MsrParams { area: 1e-14, ..MsrParams::default() }).unwrap();
        assert!(static_fuel.critical_reactivity(4.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn critical_reactivity_increases_with_velocity() {
        let m = model();
        let grid: Vec<f64> = (0..50).map(|j| 0.5 + 9.5 * j as f64 / 49.0).collect();
        let rho: Vec<f64> = grid.iter().map(|&v| m.critical_reactivity(v).unwrap()).collect();
        assert!(rho.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn nonpositive_velocity_is_domain_error() {
        let m = model();
        let x = m.steady_state(4.0, 50.0, 1.0).unwrap().to_vector();
        let z = memory_at(&m, &x);
        assert!(matches!(m.rhs(&x, &z, &dvector![0.0, 0.0], &DVector::zeros(0)), Err(Error::Domain(_))));
        assert!(matches!(m.delay(0, &dvector![0.0, -1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let points: Vec<SamplePoint> = (0..10)
            .map(|_| {
                let v = rng.gen_range(2.0..6.0);
                let rho = rng.gen_range(0.0..100.0);
                let q = rng.gen_range(0.8..3.0);
                let xs = m.steady_state(v, rho, q).unwrap().to_vector();
                let x = xs.map(|a| a * (1.0 + rng.gen_range(-0.02..0.02)));
                let z = memory_at(&m, &xs).map(|a| a * (1.0 + rng.gen_range(-0.02..0.02)));
                SamplePoint { x, z, u: dvector![rho, v], d: DVector::zeros(0) }
            })
            .collect();
        let report = validate_jacobians(&m, &points, 1e-6).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn tracking_cost_gradient() {
        let m = model();
        let cost = PowerTrackingCost::new(&m, 2.0);
        let x = m.steady_state(4.0, 50.0, 1.5).unwrap().to_vector();
        let d = dvector![2.5];
        let u = dvector![50.0, 4.0];
        assert!((cost.value(&x, &u, &d) - 1.0).abs() < 1e-12);
        let fd = crate::validate::central_difference(&x, |x| Ok(DVector::from_element(1, cost.value(x, &u, &d)))).unwrap();
        let g = cost.gradient_x(&x, &u, &d);
        assert!((fd.transpose() - g).amax() < 1e-8);
    }
}
