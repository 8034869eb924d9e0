//! Executes a scenario and writes its artifacts and manifest.

use std::path::{Path, PathBuf};

use ddenoc::msr::{MsrModel, RHO_EXT, RHO_TH, T_R, VELOCITY};
use ddenoc::sim::{compare_trajectories, simulate_dde, simulate_linearized};
use ddenoc::solver::{solve, NlpProblem};
use ddenoc::stability::{find_roots_approx, find_roots_dde, find_roots_dde_with_field, linearize_at_steady_state};
use ddenoc::transcription::TranscribedNlp;
use ddenoc::{DdeModel, HistoryFunction, Schedule, Trajectory};
use log::info;
use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::scenario::{Kind, Scenario, SCHEMA_VERSION};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub scenario: String,
    pub kind: String,
    /// `ok` or `not-converged`.
    pub status: String,
    pub artifacts: Vec<Artifact>,
    pub summary: Map<String, Value>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl RunOutcome {
    pub fn success(&self) -> bool {
        self.manifest.status == "ok"
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }
}

struct Writer {
    dir: PathBuf,
    kind: Kind,
    artifacts: Vec<Artifact>,
}

impl Writer {
    fn write(&mut self, artifact: &str, text: &str) -> Result<(), CliError> {
        let file = format!("{}_{artifact}.csv", self.kind.as_str());
        let path = self.dir.join(&file);
        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        info!("wrote {}", path.display());
        self.artifacts.push(Artifact { file, sha256: hex::encode(Sha256::digest(text.as_bytes())), bytes: text.len() });
        Ok(())
    }
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Largest deviation of `rho_th + kappa T_r` from its initial value.
pub fn thermal_invariant_drift(model: &MsrModel, traj: &Trajectory) -> f64 {
    let kappa = model.params().kappa;
    let first = traj.states[0][RHO_TH] + kappa * traj.states[0][T_R];
    max_abs(traj.states.iter().map(|x| x[RHO_TH] + kappa * x[T_R] - first))
}

fn last(traj: &Trajectory, column: &str) -> Result<f64, CliError> {
    Ok(*traj.column_or_err(column)?.last().unwrap())
}

/// Runs `scenario`, writing into `<out_root>/<name>/`. A solver that stops
/// short of convergence still writes its artifacts; the manifest is flagged.
pub fn run_scenario(scenario: &Scenario, out_root: &Path) -> Result<RunOutcome, CliError> {
    scenario.validate()?;
    let dir = out_root.join(scenario.name());
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let model = MsrModel::new(scenario.model.apply())?;
    let mut w = Writer { dir: dir.clone(), kind: scenario.kind, artifacts: Vec::new() };
    let mut summary = Map::new();
    let mut ok = true;
    match scenario.kind {
        Kind::SteadyState => steady_state(scenario, &model, &mut w, &mut summary)?,
        Kind::Stability => stability(scenario, &model, &mut w, &mut summary)?,
        Kind::Track => ok = track(scenario, &model, &mut w, &mut summary)?,
        Kind::Simulate => simulate(scenario, &model, &mut w, &mut summary)?,
        Kind::Compare => compare(scenario, &mut w, &mut summary)?,
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        scenario: scenario.name().to_string(),
        kind: scenario.kind.as_str().to_string(),
        status: if ok { "ok" } else { "not-converged" }.to_string(),
        artifacts: w.artifacts,
        summary,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))? + "\n";
    let path = dir.join("manifest.json");
    std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(RunOutcome { dir, manifest })
}

fn operating_state(scenario: &Scenario, model: &MsrModel) -> Result<(DVector<f64>, DVector<f64>), CliError> {
    let op = &scenario.operating_point;
    let x = model.steady_state(op.v, op.rho_ext, op.q_g)?.to_vector();
    let mut u = DVector::zeros(2);
    u[RHO_EXT] = op.rho_ext;
    u[VELOCITY] = op.v;
    Ok((x, u))
}

fn steady_state(scenario: &Scenario, model: &MsrModel, w: &mut Writer, summary: &mut Map<String, Value>) -> Result<(), CliError> {
    let (x, u) = operating_state(scenario, model)?;
    let z = ddenoc::memory_at(model, &x);
    let residual = model.rhs(&x, &z, &u, &DVector::zeros(0))?;
    let outputs = model.output_names().into_iter().zip(model.outputs(&x, &u)).map(|(n, v)| (n, vec![v])).collect();
    let traj = Trajectory::new(vec![0.0], vec![x.clone()], vec![u], model.state_names(), model.input_names(), outputs)?;
    for (name, v) in model.state_names().iter().zip(x.iter()) {
        println!("{name} = {v:.16e}");
    }
    w.write("state", &traj.to_csv())?;
    summary.insert("rhs_residual_inf".into(), json!(residual.amax()));
    summary.insert("critical_reactivity".into(), json!(model.critical_reactivity(scenario.operating_point.v)?));
    Ok(())
}

fn stability(scenario: &Scenario, model: &MsrModel, w: &mut Writer, summary: &mut Map<String, Value>) -> Result<(), CliError> {
    let (x, u) = operating_state(scenario, model)?;
    let lin = linearize_at_steady_state(model, &x, &u, &DVector::zeros(0), 1e-8)?;
    let approx = find_roots_approx(&lin)?;
    let settings = &scenario.stability;
    let cells = (settings.grid[0], settings.grid[1]);
    let dde = if settings.write_field {
        let (roots, field) = find_roots_dde_with_field(&lin, settings.window(), cells)?;
        w.write("field", &field.to_csv())?;
        roots
    } else {
        find_roots_dde(&lin, settings.window(), cells)?
    };
    w.write("roots_approx", &approx.to_csv())?;
    w.write("roots_dde", &dde.to_csv())?;
    summary.insert("approx_max_real_part".into(), json!(approx.max_real_part()));
    summary.insert("dde_max_real_part".into(), json!(dde.max_real_part()));
    summary.insert("dde_roots".into(), json!(dde.roots.len()));
    summary.insert("dde_dropped_candidates".into(), json!(dde.dropped));
    let real: Vec<f64> = approx.roots.iter().filter(|r| r.value.im == 0.0).map(|r| r.value.re).collect();
    summary.insert("approx_real_roots".into(), json!(real));
    Ok(())
}

fn track(scenario: &Scenario, model: &MsrModel, w: &mut Writer, summary: &mut Map<String, Value>) -> Result<bool, CliError> {
    let setup = scenario.tracking_setup();
    let ocp = setup.build_ocp(model)?;
    let nlp = TranscribedNlp::new(model, &ocp, scenario.ocp.steps_per_interval)?;
    let w0 = setup.initial_guess(model, &nlp)?;
    let opts = scenario.solver.options();
    info!("solving {} variables, {} constraints", nlp.n_vars(), nlp.n_constraints());
    let report = solve(&nlp, &w0, &opts)?;
    info!("solver: {} ({})", report.status.as_str(), report.message);
    w.write("iterations", &report.log_csv())?;
    let solution = nlp.extract_trajectory(&report.w)?;
    w.write("solution", &solution.to_csv())?;

    let inputs = nlp.input_schedule(&report.w);
    let d = nlp.disturbance_schedule();
    let span = (ocp.t0, ocp.tf);
    let sim = scenario.simulator.options();
    let replay = simulate_dde(model, &ocp.history, &inputs, &d, span, &sim)?;
    w.write("dde_replay", &replay.to_csv())?;
    let lin_opts = ddenoc::sim::SimOptions { h: ocp.dt() / scenario.ocp.steps_per_interval as f64, record_every: 1, ..sim.clone() };
    let lin = simulate_linearized(model, nlp.initial_state(), &inputs, &d, span, &lin_opts)?;
    w.write("linearized_replay", &lin.to_csv())?;
    let err = compare_trajectories(&replay, &lin, "Q_g")?;
    w.write("error", &err.to_csv())?;

    let q_final_sp = setup.setpoint_at(ocp.tf);
    summary.insert("status".into(), json!(report.status.as_str()));
    summary.insert("message".into(), json!(report.message));
    summary.insert("outer_iterations".into(), json!(report.outer_iterations));
    summary.insert("inner_iterations".into(), json!(report.inner_iterations));
    summary.insert("objective".into(), json!(report.objective()));
    summary.insert("stationarity".into(), json!(report.kkt.stationarity));
    summary.insert("feasibility".into(), json!(report.kkt.feasibility));
    summary.insert("complementarity".into(), json!(report.kkt.complementarity));
    summary.insert("final_setpoint".into(), json!(q_final_sp));
    summary.insert("final_q_nlp".into(), json!(last(&solution, "Q_g")?));
    summary.insert("final_q_dde".into(), json!(last(&replay, "Q_g")?));
    summary.insert("max_q_dde".into(), json!(max_abs(replay.column_or_err("Q_g")?)));
    summary.insert("dde_linearized_error_inf".into(), json!(err.inf_norm));
    summary.insert("dde_linearized_error_2".into(), json!(err.two_norm));
    summary.insert("invariant_drift_nlp".into(), json!(thermal_invariant_drift(model, &solution)));
    summary.insert("invariant_drift_dde".into(), json!(thermal_invariant_drift(model, &replay)));
    summary.insert("invariant_drift_linearized".into(), json!(thermal_invariant_drift(model, &lin)));
    Ok(report.converged())
}

fn simulate(scenario: &Scenario, model: &MsrModel, w: &mut Writer, summary: &mut Map<String, Value>) -> Result<(), CliError> {
    let (x, u) = operating_state(scenario, model)?;
    let settings = scenario.simulate.as_ref().expect("validated");
    let mut times = vec![f64::NEG_INFINITY];
    let mut values = vec![u];
    for row in &settings.inputs {
        times.push(row[0]);
        values.push(DVector::from_vec(vec![row[1], row[2]]));
    }
    let inputs = Schedule::new(times, values)?;
    let d = Schedule::constant(DVector::zeros(0));
    let history = HistoryFunction::Constant(x);
    let traj = simulate_dde(model, &history, &inputs, &d, (0.0, settings.t_end), &scenario.simulator.options())?;
    w.write("trajectory", &traj.to_csv())?;
    summary.insert("final_q".into(), json!(last(&traj, "Q_g")?));
    summary.insert("invariant_drift".into(), json!(thermal_invariant_drift(model, &traj)));
    Ok(())
}

fn compare(scenario: &Scenario, w: &mut Writer, summary: &mut Map<String, Value>) -> Result<(), CliError> {
    let c = scenario.compare.as_ref().expect("validated");
    let read = |p: &Path| {
        let path = if p.is_absolute() { p.to_path_buf() } else { scenario.base_dir.join(p) };
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok::<_, CliError>(Trajectory::from_csv(&text, c.n_states, c.n_inputs)?)
    };
    let (a, b) = (read(&c.a)?, read(&c.b)?);
    let err = compare_trajectories(&a, &b, &c.output)?;
    w.write("error", &err.to_csv())?;
    summary.insert("output".into(), json!(c.output));
    summary.insert("inf_norm".into(), json!(err.inf_norm));
    summary.insert("two_norm".into(), json!(err.two_norm));
    summary.insert("samples".into(), json!(err.times.len()));
    Ok(())
}
