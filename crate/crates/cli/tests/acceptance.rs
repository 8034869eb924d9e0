//! One PASS/FAIL line per acceptance criterion, each with its runtime budget.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use ddenoc::msr::{MsrModel, MsrParams, TrackingSetup};
use ddenoc::sim::{simulate_dde, SimOptions};
use ddenoc::solver::{solve, NlpProblem, SolveOptions};
use ddenoc::stability::{char_fn_approx, find_roots_approx, find_roots_dde, linearize_at_steady_state, ScanWindow, SteadyLinearization};
use ddenoc::transcription::TranscribedNlp;
use ddenoc::validate::{central_difference, relative_error, validate_jacobians, SamplePoint};
use ddenoc::{memory_at, DdeModel, HistoryFunction, LinearDde, Schedule};
use ddenoc_cli::{run_scenario, thermal_invariant_drift, Scenario};
use nalgebra::{dvector, DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Board {
    failures: Vec<usize>,
}

impl Board {
    fn run(&mut self, id: usize, title: &str, budget: Duration, check: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if elapsed <= budget => (true, d),
            Ok(d) => (false, format!("{d}; runtime {elapsed:.2?} over budget {budget:?}")),
            Err(d) => (false, d),
        };
        println!("{} criterion {id}: {title} [{elapsed:.2?}] {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failures.push(id);
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn model() -> MsrModel {
    MsrModel::new(MsrParams::default()).unwrap()
}

fn reference_point(model: &MsrModel) -> SteadyLinearization {
    let x = model.steady_state(4.0, 50.0, 1.0).unwrap().to_vector();
    linearize_at_steady_state(model, &x, &dvector![50.0, 4.0], &DVector::zeros(0), 1e-8).unwrap()
}

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"));
    Scenario::load(&path).unwrap()
}

fn criterion_1() -> Outcome {
    let model = model();
    let lin = reference_point(&model);
    let roots = find_roots_approx(&lin).map_err(|e| e.to_string())?;
    let mut found = Vec::new();
    for target in [-2.33, -4.80, -20.2_f64] {
        let hit = roots.roots.iter().find(|r| r.value.im == 0.0 && ((r.value.re - target) / target).abs() <= 0.03);
        let hit = hit.ok_or_else(|| format!("no real root within 3% of {target}; roots {:?}", roots.values()))?;
        found.push(format!("{:.4}", hit.value.re));
    }
    let max_re = roots.max_real_part();
    ensure(max_re > 0.0, || format!("no root with positive real part (max {max_re})"))?;
    Ok(format!("real roots {} and max Re {max_re:.4}", found.join(", ")))
}

fn criterion_2() -> Outcome {
    let model = model();
    let lin = reference_point(&model);
    let dde = find_roots_dde(&lin, ScanWindow::default(), (600, 600)).map_err(|e| e.to_string())?;
    ensure(!dde.roots.is_empty(), || "no roots found".into())?;
    // the conserved rho_th + kappa T_r gives an exact root at zero
    let unstable: Vec<Complex64> = dde.values().into_iter().filter(|z| z.re > 0.0 && z.norm() > 1e-9).collect();
    ensure(unstable.is_empty(), || format!("roots with positive real part: {unstable:?}"))?;
    let approx = find_roots_approx(&lin).map_err(|e| e.to_string())?.values();
    let mut near = dde.with_conjugates();
    near.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    let mut worst = 0.0_f64;
    for lam in near.iter().take(4) {
        let best = approx.iter().map(|m| (m - lam).norm()).fold(f64::INFINITY, f64::min);
        let rel = best / lam.norm().max(1e-9);
        ensure(rel <= 0.2, || format!("root {lam} is {rel:.3} from the nearest approximate root"))?;
        worst = worst.max(rel);
    }
    Ok(format!("{} roots, max Re {:.3e}, worst origin-root mismatch {worst:.3}", dde.roots.len(), dde.max_real_part()))
}

fn criterion_3() -> Outcome {
    let model = model();
    let lin = reference_point(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = lin.dim();
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let lambda = Complex64::new(rng.gen_range(-30.0..5.0), rng.gen_range(-15.0..15.0));
        let c = |v: f64| Complex64::new(v, 0.0);
        let mut m = DMatrix::from_fn(n, n, |i, j| if i == j { lambda } else { Complex64::new(0.0, 0.0) }) - lin.a0.map(c);
        for (b, tau) in lin.b.iter().zip(&lin.delays) {
            m -= b.map(c) * (Complex64::new(1.0, 0.0) - lambda * *tau);
        }
        let oracle = m.determinant();
        let scale = lin.char_det_approx(lambda).log_scale.exp();
        let err = (char_fn_approx(&lin, lambda) - oracle).norm() / scale;
        ensure(err <= 1e-10, || format!("lambda {lambda}: relative deviation {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(format!("100 points, worst deviation {worst:.2e} of scale"))
}

fn criterion_4() -> Outcome {
    let model = model();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let points: Vec<SamplePoint> = (0..10)
        .map(|_| {
            let (v, rho, q) = (rng.gen_range(1.0..8.0), rng.gen_range(-50.0..150.0), rng.gen_range(0.5..10.0));
            let xs = model.steady_state(v, rho, q).unwrap().to_vector();
            let x = xs.map(|a| a * (1.0 + rng.gen_range(-0.05..0.05)));
            let z = memory_at(&model, &xs).map(|a| a * (1.0 + rng.gen_range(-0.05..0.05)));
            SamplePoint { x, z, u: dvector![rho, v], d: DVector::zeros(0) }
        })
        .collect();
    let report = validate_jacobians(&model, &points, 1e-6).map_err(|e| e.to_string())?;
    ensure(report.passed(), || format!("model jacobians failing: {:?}", report.failing()))?;

    let setup = TrackingSetup { tf: 300.0, setpoints: vec![(0.0, 1.0), (90.0, 4.0)], ..Default::default() };
    let ocp = setup.build_ocp(&model).map_err(|e| e.to_string())?;
    let mut worst = report.worst();
    for m in [1, 2] {
        let nlp = TranscribedNlp::new(&model, &ocp, m).map_err(|e| e.to_string())?;
        let base = setup.initial_guess(&model, &nlp).map_err(|e| e.to_string())?;
        let scales = nlp.variable_scales();
        for _ in 0..10 {
            let w = DVector::from_fn(base.len(), |i, _| base[i] + 0.1 * scales[i] * rng.gen_range(-1.0..1.0));
            let fd = central_difference(&w, |w| nlp.residual(w)).map_err(|e| e.to_string())?;
            let jac = DMatrix::from(&nlp.jacobian(&w).map_err(|e| e.to_string())?);
            let e_jac = relative_error(&jac, &fd);
            let fd = central_difference(&w, |w| Ok(DVector::from_element(1, nlp.objective(w)?))).map_err(|e| e.to_string())?;
            let g = nlp.gradient(&w).map_err(|e| e.to_string())?;
            let e_grad = relative_error(&DMatrix::from_row_slice(1, g.len(), g.as_slice()), &fd);
            ensure(e_jac <= 1e-6 && e_grad <= 1e-6, || format!("M = {m}: jacobian {e_jac:e}, gradient {e_grad:e}"))?;
            worst = worst.max(e_jac).max(e_grad);
        }
    }
    Ok(format!("model, transcription (M = 1, 2) and gradient at 10 points each, worst relative error {worst:.2e}"))
}

fn criterion_5(drifts: &mut Vec<(String, f64, f64)>) -> Outcome {
    let model = model();
    let mut worst_nlp = 0.0_f64;
    let mut worst_rhs = 0.0_f64;
    for q in [1.0, 2.5, 5.0, 7.5, 10.0] {
        let x = model.steady_state(4.0, 50.0, q).map_err(|e| e.to_string())?.to_vector();
        let f = model.rhs(&x, &memory_at(&model, &x), &dvector![50.0, 4.0], &DVector::zeros(model.n_disturbances())).map_err(|e| e.to_string())?;
        for j in 0..x.len() {
            let r = f[j].abs() / x[j].abs().max(1.0);
            ensure(r <= 1e-10, || format!("Q = {q}: steady rhs component {j} is {:e}", f[j]))?;
            worst_rhs = worst_rhs.max(r);
        }
        let setup = TrackingSetup { tf: 600.0, q_initial: q, setpoints: vec![(0.0, q)], ..Default::default() };
        let ocp = setup.build_ocp(&model).map_err(|e| e.to_string())?;
        for m in [1, 2] {
            let nlp = TranscribedNlp::new(&model, &ocp, m).map_err(|e| e.to_string())?;
            let w = setup.initial_guess(&model, &nlp).map_err(|e| e.to_string())?;
            let r = nlp.residual(&w).map_err(|e| e.to_string())?;
            let x0 = nlp.initial_state();
            for (j, v) in r.iter().enumerate() {
                let rel = v.abs() / x0[j % x0.len()].abs().max(1.0);
                ensure(rel <= 1e-10, || format!("Q = {q}, M = {m}: residual row {j} is {v:e}"))?;
                worst_nlp = worst_nlp.max(rel);
            }
            let traj = nlp.extract_trajectory(&w).map_err(|e| e.to_string())?;
            drifts.push((format!("steady NLP Q = {q}, M = {m}"), thermal_invariant_drift(&model, &traj), 1e-6));
        }
    }
    Ok(format!("worst steady rhs {worst_rhs:.2e}, worst NLP residual {worst_nlp:.2e}"))
}

fn criterion_6() -> Outcome {
    let model = LinearDde::scalar(0.0, -1.0, 1.0);
    let hist = HistoryFunction::Constant(dvector![1.0]);
    let none = Schedule::constant(DVector::zeros(0));
    let mut errs = Vec::new();
    for h in [0.02, 0.01, 0.005] {
        let traj = simulate_dde(&model, &hist, &none, &none, (0.0, 2.0), &SimOptions::with_step(h)).map_err(|e| e.to_string())?;
        let x1 = traj.interpolate_state(1.0).unwrap()[0];
        let x2 = traj.interpolate_state(2.0).unwrap()[0];
        ensure(x1.abs() <= 2.0 * h && (x2 + 0.5).abs() <= 2.0 * h, || format!("h = {h}: x(1) = {x1}, x(2) = {x2}"))?;
        errs.push((x2 + 0.5).abs());
    }
    let ratios = [errs[0] / errs[1], errs[1] / errs[2]];
    ensure(ratios.iter().all(|r| (1.8..=2.2).contains(r)), || format!("error ratios {ratios:?}"))?;
    Ok(format!("errors at t = 2: {:.3e}, {:.3e}, {:.3e}, ratios {:.3} and {:.3}", errs[0], errs[1], errs[2], ratios[0], ratios[1]))
}

fn criterion_7(drifts: &mut Vec<(String, f64, f64)>) -> Outcome {
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut details = Vec::new();
    for (name, band) in [("track_2p5MW", Some(0.02)), ("track_10MW", None)] {
        let s = scenario(name);
        let tol_feas = s.solver.tol_feasibility;
        let newton_tol = s.simulator.newton_tol;
        let outcome = run_scenario(&s, out.path()).map_err(|e| format!("{name}: {e}"))?;
        let get = |k: &str| outcome.manifest.summary.get(k).and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
        ensure(outcome.success(), || format!("{name}: {}", outcome.manifest.summary["message"]))?;
        let feas = get("feasibility");
        ensure(feas <= tol_feas, || format!("{name}: feasibility {feas:e}"))?;
        let (sp, q_dde, q_max) = (get("final_setpoint"), get("final_q_dde"), get("max_q_dde"));
        match band {
            Some(b) => ensure((q_dde - sp).abs() <= b * sp, || format!("{name}: delay replay ends at {q_dde} MW"))?,
            None => ensure(q_max.is_finite() && q_max <= 10.0 * sp, || format!("{name}: delay replay peaks at {q_max} MW"))?,
        }
        drifts.push((format!("{name} NLP solution"), get("invariant_drift_nlp"), tol_feas));
        drifts.push((format!("{name} linearized replay"), get("invariant_drift_linearized"), newton_tol));
        drifts.push((format!("{name} delay replay"), get("invariant_drift_dde"), newton_tol));
        details.push(format!("{name}: feas {feas:.1e}, delay replay final {q_dde:.5} MW (peak {q_max:.3})"));
    }
    Ok(details.join("; "))
}

fn criterion_8(drifts: &[(String, f64, f64)]) -> Outcome {
    ensure(!drifts.is_empty(), || "no trajectories recorded".into())?;
    let mut worst = 0.0_f64;
    for (what, drift, tol) in drifts {
        ensure(*drift <= 5.0 * tol, || format!("{what}: drift {drift:e} above 5 x {tol:e}"))?;
        worst = worst.max(drift / tol);
    }
    Ok(format!("{} trajectories, worst drift {worst:.2e} of the integrator tolerance", drifts.len()))
}

struct Qp {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl NlpProblem for Qp {
    fn n_vars(&self) -> usize {
        3
    }
    fn n_constraints(&self) -> usize {
        2
    }
    fn lower_bounds(&self) -> &DVector<f64> {
        &self.lo
    }
    fn upper_bounds(&self) -> &DVector<f64> {
        &self.hi
    }
    fn objective(&self, w: &DVector<f64>) -> ddenoc::Result<f64> {
        Ok(0.5 * w.norm_squared())
    }
    fn gradient(&self, w: &DVector<f64>) -> ddenoc::Result<DVector<f64>> {
        Ok(w.clone())
    }
    fn constraints(&self, w: &DVector<f64>) -> ddenoc::Result<DVector<f64>> {
        Ok(dvector![w[0] + w[1] + w[2] - 3.0, w[0] - w[2] - 1.0])
    }
    fn jacobian(&self, _w: &DVector<f64>) -> ddenoc::Result<CsrMatrix<f64>> {
        Ok(CsrMatrix::try_from_csr_data(2, 3, vec![0, 3, 5], vec![0, 1, 2, 0, 2], vec![1.0, 1.0, 1.0, 1.0, -1.0]).unwrap())
    }
}

struct Rosenbrock {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl NlpProblem for Rosenbrock {
    fn n_vars(&self) -> usize {
        2
    }
    fn n_constraints(&self) -> usize {
        0
    }
    fn lower_bounds(&self) -> &DVector<f64> {
        &self.lo
    }
    fn upper_bounds(&self) -> &DVector<f64> {
        &self.hi
    }
    fn objective(&self, w: &DVector<f64>) -> ddenoc::Result<f64> {
        Ok((1.0 - w[0]).powi(2) + 100.0 * (w[1] - w[0] * w[0]).powi(2))
    }
    fn gradient(&self, w: &DVector<f64>) -> ddenoc::Result<DVector<f64>> {
        let t = w[1] - w[0] * w[0];
        Ok(dvector![-2.0 * (1.0 - w[0]) - 400.0 * w[0] * t, 200.0 * t])
    }
    fn constraints(&self, _w: &DVector<f64>) -> ddenoc::Result<DVector<f64>> {
        Ok(DVector::zeros(0))
    }
    fn jacobian(&self, _w: &DVector<f64>) -> ddenoc::Result<CsrMatrix<f64>> {
        Ok(CsrMatrix::zeros(0, 2))
    }
}

fn criterion_9() -> Outcome {
    // min |w|^2 / 2 with w1 + w2 + w3 = 3, w1 - w3 = 1; w = -J^T mu, J J^T = [[3, 0], [0, 2]], c(0) = (-3, -1) => mu = (-1, -1/2), w = (3/2, 1, 1/2)
    let inf = f64::INFINITY;
    let qp = Qp { lo: DVector::from_element(3, -inf), hi: DVector::from_element(3, inf) };
    let rep = solve(&qp, &DVector::zeros(3), &SolveOptions::default()).map_err(|e| e.to_string())?;
    let err_qp = (&rep.w - dvector![1.5, 1.0, 0.5]).amax();
    ensure(rep.converged() && err_qp <= 1e-6, || format!("QP: {} at {:?}", rep.message, rep.w.as_slice()))?;

    // with x <= 1/2 the minimizer sits on the bound at y = x^2
    let rb = Rosenbrock { lo: dvector![-2.0, -2.0], hi: dvector![0.5, 2.0] };
    let opts = SolveOptions { tol_stationarity: 1e-9, ..Default::default() };
    let rep = solve(&rb, &dvector![-1.2, 1.0], &opts).map_err(|e| e.to_string())?;
    let err_rb = (&rep.w - dvector![0.5, 0.25]).amax();
    ensure(rep.converged() && err_rb <= 1e-6, || format!("Rosenbrock: {} at {:?}", rep.message, rep.w.as_slice()))?;
    Ok(format!("QP error {err_qp:.1e}, bounded Rosenbrock error {err_rb:.1e}"))
}

fn main() {
    let mut board = Board { failures: Vec::new() };
    let mut drifts = Vec::new();
    let s = Duration::from_secs;
    board.run(1, "approximate-system roots at the 1 MW operating point", s(1), criterion_1);
    board.run(2, "delay-system scan: stable, origin roots matched", s(60), criterion_2);
    board.run(3, "substitution identity on 100 random points", s(1), criterion_3);
    board.run(4, "derivative suite against central differences", s(30), criterion_4);
    board.run(5, "steady-state exactness", s(5), || criterion_5(&mut drifts));
    board.run(6, "scalar delay oracle and first-order convergence", s(5), criterion_6);
    board.run(7, "end-to-end tracking (2.5 MW and 10 MW)", s(900), || criterion_7(&mut drifts));
    board.run(8, "thermal-reactivity invariant", s(5), || criterion_8(&drifts));
    board.run(9, "solver sanity on known optima", s(5), criterion_9);
    if !board.failures.is_empty() {
        eprintln!("failing criteria: {:?}", board.failures);
        std::process::exit(1);
    }
}
