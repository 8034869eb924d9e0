//! Outer multiplier/penalty loop and the bound-constrained inner minimizers.

use std::collections::VecDeque;

use nalgebra::DVector;
use nalgebra_sparse::CsrMatrix;

use super::banded::SymBand;
use super::{
    kkt_residual, transpose_mul, InnerMethod, IterationLog, KktResidual, Multipliers, NlpProblem, Scaling,
    SolveOptions, SolveReport, SolveStatus,
};
use crate::error::{Error, Result};

/// Problems up to this size use Newton under [`InnerMethod::Auto`] even without a band.
const DENSE_NEWTON_LIMIT: usize = 400;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

/// Evaluated point in scaled variables.
#[derive(Clone)]
struct Point {
    w: DVector<f64>,
    f: f64,
    gf: DVector<f64>,
    c: DVector<f64>,
    jac: CsrMatrix<f64>,
}

enum InnerEnd {
    Converged,
    MaxIterations,
    Stalled,
}

pub(super) struct AugmentedLagrangian<'p> {
    problem: &'p dyn NlpProblem,
    scaling: Scaling,
    opts: &'p SolveOptions,
    lo: DVector<f64>,
    hi: DVector<f64>,
    bandwidth: usize,
    newton: bool,
}

fn project(w: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(w.len(), |i, _| w[i].clamp(lo[i], hi[i]))
}

impl<'p> AugmentedLagrangian<'p> {
    pub(super) fn new(problem: &'p dyn NlpProblem, scaling: Scaling, opts: &'p SolveOptions) -> Self {
        let n = problem.n_vars();
        let lo = problem.lower_bounds().component_div(&scaling.variables);
        let hi = problem.upper_bounds().component_div(&scaling.variables);
        let band = problem.hessian_bandwidth();
        let bandwidth = band.unwrap_or(n.saturating_sub(1)).min(n.saturating_sub(1));
        let newton = match opts.inner_method {
            InnerMethod::Newton => true,
            InnerMethod::Lbfgs => false,
            InnerMethod::Auto => band.is_some() || n <= DENSE_NEWTON_LIMIT,
        };
        AugmentedLagrangian { problem, scaling, opts, lo, hi, bandwidth, newton }
    }

    fn unscale(&self, w: &DVector<f64>) -> DVector<f64> {
        let w = w.component_mul(&self.scaling.variables);
        project(&w, self.problem.lower_bounds(), self.problem.upper_bounds())
    }

    fn scale_jacobian(&self, jac: CsrMatrix<f64>) -> Result<CsrMatrix<f64>> {
        let (m, n) = (jac.nrows(), jac.ncols());
        let (offsets, cols, mut values) = jac.disassemble();
        for r in 0..m {
            let rs = self.scaling.constraints[r];
            for p in offsets[r]..offsets[r + 1] {
                values[p] *= self.scaling.variables[cols[p]] / rs;
            }
        }
        CsrMatrix::try_from_csr_data(m, n, offsets, cols, values).map_err(|e| Error::Config(format!("jacobian: {e}")))
    }

    fn values(&self, w: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let x = self.unscale(w);
        let f = self.problem.objective(&x)?;
        let c = self.problem.constraints(&x)?.component_div(&self.scaling.constraints);
        if !f.is_finite() || c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation { context: "nlp values".into(), point: x.iter().copied().collect() });
        }
        Ok((f, c))
    }

    fn derivatives(&self, w: &DVector<f64>) -> Result<(DVector<f64>, CsrMatrix<f64>)> {
        let x = self.unscale(w);
        let g = self.problem.gradient(&x)?.component_mul(&self.scaling.variables);
        let jac = self.scale_jacobian(self.problem.jacobian(&x)?)?;
        if g.iter().chain(jac.values()).any(|v| !v.is_finite()) {
            return Err(Error::Evaluation { context: "nlp derivatives".into(), point: x.iter().copied().collect() });
        }
        Ok((g, jac))
    }

    fn eval(&self, w: DVector<f64>) -> Result<Point> {
        let (f, c) = self.values(&w)?;
        let (gf, jac) = self.derivatives(&w)?;
        Ok(Point { w, f, gf, c, jac })
    }

    fn merit(f: f64, c: &DVector<f64>, mu: &DVector<f64>, rho: f64) -> f64 {
        f + mu.dot(c) + 0.5 * rho * c.norm_squared()
    }

    fn merit_gradient(pt: &Point, mu: &DVector<f64>, rho: f64) -> DVector<f64> {
        let y = mu + &pt.c * rho;
        &pt.gf + transpose_mul(&pt.jac, &y)
    }

    fn projected_gradient_norm(&self, w: &DVector<f64>, g: &DVector<f64>) -> f64 {
        (0..w.len()).map(|i| ((w[i] - g[i]).clamp(self.lo[i], self.hi[i]) - w[i]).abs()).fold(0.0, f64::max)
    }

    /// Variables held at a bound that the gradient pushes outward.
    fn active_set(&self, w: &DVector<f64>, g: &DVector<f64>, eps: f64) -> Vec<bool> {
        (0..w.len())
            .map(|i| (w[i] - self.lo[i] <= eps && g[i] > 0.0) || (self.hi[i] - w[i] <= eps && g[i] < 0.0))
            .collect()
    }

    /// Banded Hessian of `psi + y^T c` by forward differences of its gradient
    /// (columns grouped `2 hb + 1` apart), symmetrized.
    fn lagrangian_hessian(&self, pt: &Point, y: &DVector<f64>) -> Result<SymBand> {
        let n = pt.w.len();
        let hb = self.bandwidth;
        let width = 2 * hb + 1;
        let colors = width.min(n);
        let g0 = &pt.gf + transpose_mul(&pt.jac, y);
        let steps: Vec<f64> = (0..n)
            .map(|j| {
                let h = 1e-7 * pt.w[j].abs().max(1.0);
                if pt.w[j] + h > self.hi[j] { -h } else { h }
            })
            .collect();
        let mut full = vec![0.0; n * width];
        for color in 0..colors {
            let mut wp = pt.w.clone();
            for j in (color..n).step_by(colors) {
                wp[j] += steps[j];
            }
            let (gp, jp) = self.derivatives(&wp)?;
            let diff = gp + transpose_mul(&jp, y) - &g0;
            for i in 0..n {
                let start = i.saturating_sub(hb);
                let j = start + (color + colors - start % colors) % colors;
                if j <= (i + hb).min(n - 1) {
                    let h = (wp[j] - pt.w[j]).abs().max(f64::MIN_POSITIVE) * steps[j].signum();
                    full[i * width + (j + hb - i)] = diff[i] / h;
                }
            }
        }
        let mut band = SymBand::zeros(n, hb);
        for i in 0..n {
            for j in i.saturating_sub(hb)..=i {
                let upper = full[j * width + (i + hb - j)];
                let lower = full[i * width + (j + hb - i)];
                band.set(i, j, 0.5 * (upper + lower));
            }
        }
        Ok(band)
    }

    fn newton_direction(&self, pt: &Point, g: &DVector<f64>, mu: &DVector<f64>, rho: f64, active: &[bool]) -> Result<DVector<f64>> {
        let n = pt.w.len();
        let y = mu + &pt.c * rho;
        let mut h = self.lagrangian_hessian(pt, &y)?;
        for row in pt.jac.row_iter() {
            let (cols, vals) = (row.col_indices(), row.values());
            for a in 0..cols.len() {
                for b in 0..=a {
                    h.add(cols[a], cols[b], rho * vals[a] * vals[b]);
                }
            }
        }
        let diag: Vec<f64> = (0..n).map(|i| h.diag(i)).collect();
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            if active[i] {
                h.decouple(i);
            } else {
                rhs[i] = -g[i];
            }
        }
        let base = 1e-10 * h.max_abs_diag().max(1.0);
        let mut shift = 0.0;
        for _ in 0..20 {
            if let Some(chol) = h.cholesky(shift) {
                let d = chol.solve(&rhs);
                let slope: f64 = (0..n).map(|i| g[i] * d[i]).sum();
                let gg: f64 = rhs.iter().map(|v| v * v).sum();
                let dd: f64 = d.iter().map(|v| v * v).sum();
                if slope < -1e-12 * (gg * dd).sqrt() || gg == 0.0 {
                    let mut out = DVector::from_vec(d);
                    for i in 0..n {
                        if active[i] {
                            out[i] = -g[i] / diag[i].abs().max(1e-8);
                        }
                    }
                    return Ok(out);
                }
            }
            shift = if shift == 0.0 { base } else { shift * 10.0 };
        }
        Ok(-g)
    }

    fn lbfgs_direction(&self, g: &DVector<f64>, active: &[bool], memory: &VecDeque<(DVector<f64>, DVector<f64>)>) -> DVector<f64> {
        let mask = |v: &DVector<f64>| DVector::from_fn(v.len(), |i, _| if active[i] { 0.0 } else { v[i] });
        let mut q = mask(g);
        let pairs: Vec<(DVector<f64>, DVector<f64>, f64)> = memory
            .iter()
            .filter_map(|(s, y)| {
                let (s, y) = (mask(s), mask(y));
                let sy = s.dot(&y);
                (sy > 1e-12 * s.norm() * y.norm()).then(|| (s, y, 1.0 / sy))
            })
            .collect();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, r) in pairs.iter().rev() {
            let a = r * s.dot(&q);
            q -= y * a;
            alphas.push(a);
        }
        let gamma = pairs.last().map_or_else(|| 1.0 / g.amax().max(1.0), |(_, y, r)| 1.0 / (r * y.norm_squared()));
        q *= gamma;
        for ((s, y, r), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = r * y.dot(&q);
            q += s * (a - b);
        }
        let mut d = -q;
        for i in 0..g.len() {
            if active[i] {
                d[i] = -g[i];
            }
        }
        d
    }

    /// Armijo backtracking along the projection arc `P(w + alpha d)`.
    fn line_search(&self, pt: &Point, m0: f64, g: &DVector<f64>, d: &DVector<f64>, mu: &DVector<f64>, rho: f64) -> Option<(Point, f64)> {
        let mut alpha = 1.0;
        for _ in 0..MAX_BACKTRACKS {
            let trial = project(&(&pt.w + d * alpha), &self.lo, &self.hi);
            let step = &trial - &pt.w;
            if step.amax() == 0.0 {
                return None;
            }
            let predicted = -g.dot(&step);
            if predicted > 0.0 {
                if let Ok((f, c)) = self.values(&trial) {
                    let m = Self::merit(f, &c, mu, rho);
                    if m <= m0 - ARMIJO * predicted {
                        return self.eval(trial).ok().map(|p| (p, m));
                    }
                }
            }
            alpha *= 0.5;
        }
        None
    }

    fn minimize(&self, mut pt: Point, mu: &DVector<f64>, rho: f64, omega: f64, merits: &mut Vec<f64>) -> (Point, usize, InnerEnd) {
        let mut m = Self::merit(pt.f, &pt.c, mu, rho);
        merits.push(m);
        let mut g = Self::merit_gradient(&pt, mu, rho);
        let mut memory: VecDeque<(DVector<f64>, DVector<f64>)> = VecDeque::new();
        for it in 0..self.opts.max_inner_iterations {
            let pg = self.projected_gradient_norm(&pt.w, &g);
            if pg <= omega {
                return (pt, it, InnerEnd::Converged);
            }
            let active = self.active_set(&pt.w, &g, pg.min(1e-3));
            let d = if self.newton {
                self.newton_direction(&pt, &g, mu, rho, &active).unwrap_or_else(|_| -&g)
            } else {
                self.lbfgs_direction(&g, &active, &memory)
            };
            let found = self
                .line_search(&pt, m, &g, &d, mu, rho)
                .or_else(|| {
                    memory.clear();
                    self.line_search(&pt, m, &g, &(-&g), mu, rho)
                });
            let Some((next, m_next)) = found else {
                return (pt, it, InnerEnd::Stalled);
            };
            let g_next = Self::merit_gradient(&next, mu, rho);
            if !self.newton {
                memory.push_back((&next.w - &pt.w, &g_next - &g));
                if memory.len() > self.opts.lbfgs_memory {
                    memory.pop_front();
                }
            }
            pt = next;
            m = m_next;
            g = g_next;
            merits.push(m);
        }
        (pt, self.opts.max_inner_iterations, InnerEnd::MaxIterations)
    }

    /// Bound multipliers from the scaled Lagrangian gradient: a bound takes the
    /// outward gradient component when the variable is within one scaled unit of it.
    fn bound_multipliers(&self, w: &DVector<f64>, g: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = w.len();
        let mut lower = DVector::zeros(n);
        let mut upper = DVector::zeros(n);
        for i in 0..n {
            if g[i] > 0.0 && w[i] - self.lo[i] < 1.0 {
                lower[i] = g[i] / self.scaling.variables[i];
            } else if g[i] < 0.0 && self.hi[i] - w[i] < 1.0 {
                upper[i] = -g[i] / self.scaling.variables[i];
            }
        }
        (lower, upper)
    }

    pub(super) fn run(self, w0: &DVector<f64>) -> Result<SolveReport> {
        let opts = self.opts;
        let start = project(&w0.component_div(&self.scaling.variables), &self.lo, &self.hi);
        let mut pt = self.eval(start)?;
        let tol_stat = if opts.relative_stationarity {
            opts.tol_stationarity * pt.gf.amax().max(1.0)
        } else {
            opts.tol_stationarity
        };
        let m = self.problem.n_constraints();
        let mut mu = DVector::zeros(m);
        let mut rho = opts.penalty_init;
        let mut prev_feas = f64::INFINITY;
        let mut stalls = 0;
        let mut inner_total = 0;
        let mut log = Vec::new();
        let mut objective_history = Vec::new();
        let mut merit_history = Vec::new();
        let mut status = SolveStatus::MaxIterations;
        let mut multipliers = Multipliers { equality: DVector::zeros(m), lower: DVector::zeros(pt.w.len()), upper: DVector::zeros(pt.w.len()) };
        let mut kkt = KktResidual { stationarity: f64::INFINITY, feasibility: f64::INFINITY, complementarity: f64::INFINITY };
        let mut outer = 0;
        let mut message = String::new();

        while outer < opts.max_outer_iterations {
            outer += 1;
            let omega = (1e-2 * 0.1_f64.powi(outer as i32 - 1)).max(0.5 * tol_stat);
            let mut merits = Vec::new();
            let before = pt.w.clone();
            let (next, its, end) = self.minimize(pt, &mu, rho, omega, &mut merits);
            pt = next;
            inner_total += its;
            merit_history.push(merits);

            let y = &mu + &pt.c * rho;
            let g = Self::merit_gradient(&pt, &mu, rho);
            let (lower, upper) = self.bound_multipliers(&pt.w, &g);
            multipliers = Multipliers { equality: y.component_div(&self.scaling.constraints), lower, upper };
            let w = self.unscale(&pt.w);
            kkt = kkt_residual(self.problem, &w, &multipliers, &self.scaling)?;
            objective_history.push(pt.f);
            log.push(IterationLog { iter: outer, objective: pt.f, feas: kkt.feasibility, stat: kkt.stationarity, penalty: rho });
            if opts.verbose {
                log::info!(
                    "outer {outer}: psi {:.6e} feas {:.3e} stat {:.3e} comp {:.3e} rho {rho:.1e} inner {its}",
                    pt.f, kkt.feasibility, kkt.stationarity, kkt.complementarity
                );
            }
            if kkt.stationarity <= tol_stat && kkt.feasibility <= opts.tol_feasibility && kkt.complementarity <= opts.tol_complementarity {
                status = SolveStatus::Converged;
                message = format!("converged after {outer} outer iterations");
                break;
            }
            if matches!(end, InnerEnd::Stalled) && pt.w == before {
                stalls += 1;
                if stalls >= 3 {
                    status = SolveStatus::LineSearchFailure;
                    message = format!("no acceptable step from the current iterate (outer {outer})");
                    break;
                }
            } else {
                stalls = 0;
            }
            let feas = if pt.c.is_empty() { 0.0 } else { pt.c.amax() };
            let feasible = kkt.feasibility <= opts.tol_feasibility;
            if feasible || feas <= opts.feasibility_reduction * prev_feas || rho >= opts.penalty_max {
                mu = y;
                prev_feas = feas;
            } else {
                rho = (rho * opts.penalty_factor).min(opts.penalty_max);
            }
        }
        if status == SolveStatus::MaxIterations {
            message = format!("outer iteration limit {} reached", opts.max_outer_iterations);
        }
        Ok(SolveReport {
            w: self.unscale(&pt.w),
            multipliers,
            kkt,
            scaling: self.scaling.clone(),
            tol_stationarity: tol_stat,
            status,
            outer_iterations: outer,
            inner_iterations: inner_total,
            objective_history,
            merit_history,
            log,
            message,
        })
    }
}
