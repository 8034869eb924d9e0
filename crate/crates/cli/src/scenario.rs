//! Scenario files: JSON with a mandatory `schema_version`, parsed strictly.

use std::path::{Path, PathBuf};

use ddenoc::msr::{MsrParams, TrackingSetup, N_GROUPS};
use ddenoc::sim::SimOptions;
use ddenoc::solver::{InnerMethod, SolveOptions};
use ddenoc::stability::ScanWindow;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    SteadyState,
    Stability,
    Track,
    Simulate,
    Compare,
}

impl Kind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Kind::SteadyState => "steady-state",
            Kind::Stability => "stability",
            Kind::Track => "track",
            Kind::Simulate => "simulate",
            Kind::Compare => "compare",
        }
    }
}

/// Reactor parameters that differ from the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub lambda: Option<[f64; N_GROUPS]>,
    pub beta_groups: Option<[f64; N_GROUPS]>,
    pub generation_time: Option<f64>,
    pub c_p: Option<f64>,
    pub k_hx: Option<f64>,
    pub kappa: Option<f64>,
    pub salt_density: Option<f64>,
    pub m_r: Option<f64>,
    pub m_hx: Option<f64>,
    pub volume: Option<f64>,
    pub area: Option<f64>,
    pub loop_length: Option<f64>,
    pub t_coolant: Option<f64>,
    pub q_nominal: Option<f64>,
    pub c_n_nominal: Option<f64>,
}

impl ModelOverrides {
    pub fn apply(&self) -> MsrParams {
        let mut p = MsrParams::default();
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { p.$f = v; })* };
        }
        set!(lambda, beta_groups, generation_time, c_p, k_hx, kappa, salt_density, m_r, m_hx, volume, area, loop_length, t_coolant, q_nominal, c_n_nominal);
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatingPoint {
    /// Salt velocity (m/s).
    pub v: f64,
    /// External reactivity (pcm).
    pub rho_ext: f64,
    /// Generated power (MW).
    pub q_g: f64,
}

impl Default for OperatingPoint {
    fn default() -> Self {
        OperatingPoint { v: 4.0, rho_ext: 50.0, q_g: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySettings {
    pub window_re: [f64; 2],
    pub window_im: [f64; 2],
    /// Grid cells along (Re, Im).
    pub grid: [usize; 2],
    /// Also write the sampled characteristic function.
    pub write_field: bool,
}

impl Default for StabilitySettings {
    fn default() -> Self {
        let w = ScanWindow::default();
        StabilitySettings { window_re: [w.re.0, w.re.1], window_im: [w.im.0, w.im.1], grid: [600, 600], write_field: false }
    }
}

impl StabilitySettings {
    pub fn window(&self) -> ScanWindow {
        ScanWindow { re: (self.window_re[0], self.window_re[1]), im: (self.window_im[0], self.window_im[1]) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcpSettings {
    pub t0: f64,
    pub tf: f64,
    /// Control interval (s).
    pub dt: f64,
    /// Implicit-Euler steps per control interval.
    pub steps_per_interval: usize,
    /// Power of the steady history before `t0` (MW).
    pub q_initial: f64,
    pub power_weight: f64,
    /// Diagonal of W: (rho_ext, v).
    pub rate_weight: [f64; 2],
    pub u_ref: [f64; 2],
    pub u_guess: [f64; 2],
    pub u_min: [f64; 2],
    pub u_max: [f64; 2],
}

impl Default for OcpSettings {
    fn default() -> Self {
        let t = TrackingSetup::default();
        let pair = |v: &DVector<f64>| [v[0], v[1]];
        OcpSettings {
            t0: t.t0,
            tf: t.tf,
            dt: t.dt,
            steps_per_interval: 1,
            q_initial: t.q_initial,
            power_weight: t.power_weight,
            rate_weight: t.rate_weight,
            u_ref: pair(&t.u_ref),
            u_guess: pair(&t.u_guess),
            u_min: pair(&t.u_min),
            u_max: pair(&t.u_max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerChoice {
    Auto,
    Newton,
    Lbfgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub max_outer_iterations: usize,
    pub max_inner_iterations: usize,
    pub tol_stationarity: f64,
    pub tol_feasibility: f64,
    pub tol_complementarity: f64,
    pub penalty_init: f64,
    pub penalty_factor: f64,
    pub penalty_max: f64,
    pub inner_method: InnerChoice,
    pub lbfgs_memory: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let o = SolveOptions::default();
        SolverSettings {
            max_outer_iterations: o.max_outer_iterations,
            max_inner_iterations: o.max_inner_iterations,
            tol_stationarity: o.tol_stationarity,
            tol_feasibility: o.tol_feasibility,
            tol_complementarity: o.tol_complementarity,
            penalty_init: o.penalty_init,
            penalty_factor: o.penalty_factor,
            penalty_max: o.penalty_max,
            inner_method: InnerChoice::Auto,
            lbfgs_memory: o.lbfgs_memory,
        }
    }
}

impl SolverSettings {
    pub fn options(&self) -> SolveOptions {
        SolveOptions {
            max_outer_iterations: self.max_outer_iterations,
            max_inner_iterations: self.max_inner_iterations,
            tol_stationarity: self.tol_stationarity,
            tol_feasibility: self.tol_feasibility,
            tol_complementarity: self.tol_complementarity,
            penalty_init: self.penalty_init,
            penalty_factor: self.penalty_factor,
            penalty_max: self.penalty_max,
            inner_method: match self.inner_method {
                InnerChoice::Auto => InnerMethod::Auto,
                InnerChoice::Newton => InnerMethod::Newton,
                InnerChoice::Lbfgs => InnerMethod::Lbfgs,
            },
            lbfgs_memory: self.lbfgs_memory,
            verbose: true,
            ..SolveOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorSettings {
    pub h: f64,
    pub newton_tol: f64,
    pub max_newton_iterations: usize,
    /// History kept by the delay simulator (s); unlimited when absent.
    pub retention: Option<f64>,
    /// Keep every n-th step in the written trajectory.
    pub record_every: usize,
}

impl Default for SimulatorSettings {
    fn default() -> Self {
        let o = SimOptions::default();
        SimulatorSettings {
            h: o.h,
            newton_tol: o.newton_tol,
            max_newton_iterations: o.max_newton_iterations,
            retention: None,
            record_every: 100,
        }
    }
}

impl SimulatorSettings {
    pub fn options(&self) -> SimOptions {
        SimOptions {
            h: self.h,
            newton_tol: self.newton_tol,
            max_newton_iterations: self.max_newton_iterations,
            retention: self.retention.unwrap_or(f64::INFINITY),
            record_every: self.record_every,
        }
    }
}

/// Forward run of the delay system from the steady state at the operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSettings {
    pub t_end: f64,
    /// `[t, rho_ext, v]` rows; the operating-point inputs hold before the first row.
    #[serde(default)]
    pub inputs: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSettings {
    /// Paths relative to the scenario file.
    pub a: PathBuf,
    pub b: PathBuf,
    pub output: String,
    /// Leading state and input columns of both files.
    #[serde(default = "default_states")]
    pub n_states: usize,
    #[serde(default = "default_inputs")]
    pub n_inputs: usize,
}

fn default_states() -> usize {
    ddenoc::msr::N_STATES
}

fn default_inputs() -> usize {
    2
}

fn default_setpoints() -> Vec<(f64, f64)> {
    TrackingSetup::default().setpoints
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    /// Defaults to the file stem.
    #[serde(default)]
    pub name: Option<String>,
    pub kind: Kind,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub model: ModelOverrides,
    #[serde(default)]
    pub operating_point: OperatingPoint,
    #[serde(default)]
    pub stability: StabilitySettings,
    #[serde(default)]
    pub ocp: OcpSettings,
    /// `(t_start, Q_sp)` pairs in s and MW.
    #[serde(default = "default_setpoints")]
    pub setpoints: Vec<(f64, f64)>,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub simulator: SimulatorSettings,
    #[serde(default)]
    pub simulate: Option<SimulateSettings>,
    #[serde(default)]
    pub compare: Option<CompareSettings>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Directory of the scenario file, for resolving relative paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, CliError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Invalid(vec![format!("not valid JSON: {e}")]))?;
        let obj = value.as_object().ok_or_else(|| CliError::Invalid(vec!["top level must be an object".into()]))?;
        let mut problems = Vec::new();
        match obj.get("schema_version") {
            None => problems.push("schema_version: missing (required)".to_string()),
            Some(v) if v.as_u64() != Some(SCHEMA_VERSION as u64) => {
                problems.push(format!("schema_version: unsupported value {v}, expected {SCHEMA_VERSION}"))
            }
            _ => {}
        }
        if !obj.contains_key("kind") {
            problems.push("kind: missing (one of steady-state, stability, track, simulate, compare)".into());
        }
        if !problems.is_empty() {
            return Err(CliError::Invalid(problems));
        }
        let scenario: Scenario = serde_json::from_value(value).map_err(|e| CliError::Invalid(vec![e.to_string()]))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Scenario, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut s = Scenario::parse(&text)?;
        s.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if s.name.is_none() {
            s.name = path.file_stem().map(|n| n.to_string_lossy().into_owned());
        }
        Ok(s)
    }

    pub fn name(&self) -> &str {
        self.name.as_deref().unwrap_or("scenario")
    }

    pub fn tracking_setup(&self) -> TrackingSetup {
        let o = &self.ocp;
        let v = |a: [f64; 2]| DVector::from_vec(a.to_vec());
        TrackingSetup {
            t0: o.t0,
            tf: o.tf,
            dt: o.dt,
            q_initial: o.q_initial,
            setpoints: self.setpoints.clone(),
            power_weight: o.power_weight,
            rate_weight: o.rate_weight,
            u_ref: v(o.u_ref),
            u_guess: v(o.u_guess),
            u_min: v(o.u_min),
            u_max: v(o.u_max),
        }
    }

    /// Field-level checks beyond the JSON shape.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut p = Vec::new();
        if let Some(name) = &self.name {
            if name.is_empty() || name.contains(['/', '\\']) {
                p.push(format!("name: `{name}` must be a non-empty file name"));
            }
        }
        if let Err(e) = ddenoc::msr::MsrModel::new(self.model.apply()) {
            p.push(format!("model: {e}"));
        }
        let op = &self.operating_point;
        if !(op.v > 0.0) {
            p.push(format!("operating_point.v: must be positive, got {}", op.v));
        }
        if !(op.q_g > 0.0) {
            p.push(format!("operating_point.q_g: must be positive, got {}", op.q_g));
        }
        let st = &self.stability;
        if !(st.window_re[0] < st.window_re[1]) || !(st.window_im[0] < st.window_im[1]) {
            p.push("stability.window_re/window_im: lower edge must be below upper edge".into());
        }
        if st.grid.iter().any(|&n| n < 16) {
            p.push(format!("stability.grid: at least 16 cells per axis, got {:?}", st.grid));
        }
        if self.kind == Kind::Track {
            let o = &self.ocp;
            if o.steps_per_interval == 0 {
                p.push("ocp.steps_per_interval: must be at least 1".into());
            }
            if !(o.dt > 0.0) {
                p.push(format!("ocp.dt: must be positive, got {}", o.dt));
            }
            for i in 0..2 {
                if !(o.u_min[i] <= o.u_guess[i] && o.u_guess[i] <= o.u_max[i]) {
                    p.push(format!("ocp.u_guess[{i}]: outside [u_min, u_max]"));
                }
                if !(o.u_min[i] <= o.u_ref[i] && o.u_ref[i] <= o.u_max[i]) {
                    p.push(format!("ocp.u_ref[{i}]: outside [u_min, u_max]"));
                }
            }
            if o.u_min[1] <= 0.0 {
                p.push("ocp.u_min[1]: velocity bound must be positive".into());
            }
            if let Err(e) = self.tracking_setup().check() {
                p.push(format!("setpoints/ocp: {e}"));
            }
        }
        let sm = &self.simulator;
        if !(sm.h > 0.0) || !(sm.newton_tol > 0.0) || sm.max_newton_iterations == 0 || sm.record_every == 0 {
            p.push("simulator: h, newton_tol, max_newton_iterations and record_every must be positive".into());
        }
        if let Err(e) = self.solver.options().validate() {
            p.push(format!("solver: {e}"));
        }
        match (self.kind, &self.simulate) {
            (Kind::Simulate, None) => p.push("simulate: required for kind `simulate`".into()),
            (Kind::Simulate, Some(s)) => {
                if !(s.t_end > 0.0) {
                    p.push(format!("simulate.t_end: must be positive, got {}", s.t_end));
                }
                if s.inputs.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                    p.push("simulate.inputs: times must be strictly increasing".into());
                }
                if s.inputs.iter().any(|r| !(r[2] > 0.0)) {
                    p.push("simulate.inputs: velocities must be positive".into());
                }
            }
            _ => {}
        }
        if self.kind == Kind::Compare && self.compare.is_none() {
            p.push("compare: required for kind `compare`".into());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(CliError::Invalid(p))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_scenario_takes_defaults() {
        let s = Scenario::parse(r#"{"schema_version": 1, "kind": "track"}"#).unwrap();
        assert_eq!(s.ocp.dt, 30.0);
        assert_eq!(s.ocp.steps_per_interval, 1);
        assert_eq!(s.ocp.rate_weight, [1e-2, 1e2]);
        assert_eq!(s.ocp.u_guess, [50.0, 4.0]);
        assert_eq!(s.setpoints, vec![(0.0, 1.0), (300.0, 2.5)]);
    }

    #[test]
    fn missing_kind_is_named() {
        let err = Scenario::parse(r#"{"schema_version": 1}"#).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("kind"));
    }

    #[test]
    fn missing_schema_version_is_named() {
        let err = Scenario::parse(r#"{"kind": "stability"}"#).unwrap_err();
        assert!(err.to_string().contains("schema_version"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = Scenario::parse(r#"{"schema_version": 1, "kind": "stability", "ocp": {"delta_t": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("delta_t"));
    }

    #[test]
    fn decreasing_setpoints_are_rejected() {
        let err = Scenario::parse(r#"{"schema_version": 1, "kind": "track", "setpoints": [[300, 2.5], [0, 1]]}"#).unwrap_err();
        assert!(err.to_string().contains("nondecreasing"));
    }

    #[test]
    fn model_overrides_apply() {
        let s = Scenario::parse(r#"{"schema_version": 1, "kind": "steady-state", "model": {"kappa": 1e-4}}"#).unwrap();
        assert_eq!(s.model.apply().kappa, 1e-4);
        assert_eq!(s.model.apply().c_p, MsrParams::default().c_p);
    }
}
