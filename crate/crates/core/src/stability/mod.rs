//! Characteristic roots at a steady state.
//!
//! For the delay system the characteristic function is
//! `det(lambda I - A_0 - sum_i B_i exp(-tau_i lambda))`, which has infinitely
//! many roots; they are located by scanning a window of the complex plane.
//! The delay-linearized system replaces each exponential by `1 - tau_i lambda`,
//! so its roots are the eigenvalues of the pencil `(A_0 + sum B_i, I + sum tau_i B_i)`.

mod det;

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

pub use det::{scaled_det, ScaledDet};

use crate::error::{Error, Result};
use crate::model::{memory_at, DdeModel};
use crate::trajectory::write_float;

/// Linearization of a delay system around a steady state.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyLinearization {
    /// `df/dx`.
    pub a0: DMatrix<f64>,
    /// `(df/dz)(dz/dr_i)(dr_i/dx)`, one per delay.
    pub b: Vec<DMatrix<f64>>,
    /// `tau_i(u_s)`.
    pub delays: Vec<f64>,
    pub x_s: DVector<f64>,
    pub u_s: DVector<f64>,
    pub d_s: DVector<f64>,
}

impl SteadyLinearization {
    pub fn dim(&self) -> usize {
        self.a0.nrows()
    }

    /// Builds `lambda I - A_0 - sum_i B_i g_i` into a row-major buffer and
    /// returns `ln` of the Hadamard bound of the entrywise term magnitudes
    /// `|lambda| delta_ij + |A_0,ij| + sum_i |B_i,ij| |g_i|`.
    fn char_matrix(&self, lambda: Complex64, weights: &[Complex64], out: &mut Vec<Complex64>) -> f64 {
        let n = self.dim();
        out.clear();
        out.resize(n * n, Complex64::new(0.0, 0.0));
        let mut log_scale = 0.0;
        let mut mags = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let mut v = Complex64::new(-self.a0[(i, j)], 0.0);
                let mut m = self.a0[(i, j)].abs();
                for (b, w) in self.b.iter().zip(weights) {
                    let bij = b[(i, j)];
                    if bij != 0.0 {
                        v -= w * bij;
                        m += bij.abs() * w.norm();
                    }
                }
                if i == j {
                    v += lambda;
                    m += lambda.norm();
                }
                out[i * n + j] = v;
                mags[j] = m;
            }
            let big = mags.iter().fold(0.0_f64, |a, &b| a.max(b));
            if big > 0.0 {
                let sum: f64 = mags.iter().map(|m| (m / big).powi(2)).sum();
                log_scale += big.ln() + 0.5 * sum.ln();
            } else {
                log_scale = f64::NEG_INFINITY;
            }
        }
        log_scale
    }

    fn det_with(&self, lambda: Complex64, weights: &[Complex64]) -> ScaledDet {
        let mut buf = Vec::new();
        let log_scale = self.char_matrix(lambda, weights, &mut buf);
        let mut det = scaled_det(self.dim(), &mut buf);
        det.log_scale = log_scale;
        det
    }

    /// Scaled characteristic determinant of the delay system.
    pub fn char_det_dde(&self, lambda: Complex64) -> ScaledDet {
        let weights: Vec<Complex64> = self.delays.iter().map(|&tau| (-tau * lambda).exp()).collect();
        self.det_with(lambda, &weights)
    }

    /// Scaled characteristic determinant of the delay-linearized system.
    pub fn char_det_approx(&self, lambda: Complex64) -> ScaledDet {
        let weights: Vec<Complex64> = self.delays.iter().map(|&tau| 1.0 - tau * lambda).collect();
        self.det_with(lambda, &weights)
    }

    /// Determinant with arbitrary per-delay weights in place of the exponentials.
    pub fn char_det_weighted(&self, lambda: Complex64, weights: &[Complex64]) -> ScaledDet {
        self.det_with(lambda, weights)
    }
}

/// Linearizes `model` at `(x_s, u_s, d_s)`, refusing points whose steady-state
/// residual `|f_j|` exceeds `tol * max(1, |x_s,j|)`.
pub fn linearize_at_steady_state(
    model: &dyn DdeModel,
    x_s: &DVector<f64>,
    u_s: &DVector<f64>,
    d_s: &DVector<f64>,
    tol: f64,
) -> Result<SteadyLinearization> {
    let z_s = memory_at(model, x_s);
    let f = model.rhs(x_s, &z_s, u_s, d_s)?;
    for j in 0..f.len() {
        let allowed = tol * x_s[j].abs().max(1.0);
        if !(f[j].abs() <= allowed) {
            return Err(Error::NotSteady { residual: f[j].abs(), tol: allowed, component: j });
        }
    }
    let jac = model.rhs_jacobians(x_s, &z_s, u_s, d_s)?;
    let mut b = Vec::with_capacity(model.n_delays());
    let mut delays = Vec::with_capacity(model.n_delays());
    let mut offset = 0;
    for (i, dim) in model.delayed_dims().into_iter().enumerate() {
        let dh = model.delayed_quantity_jacobian(i, x_s);
        b.push(jac.dz.columns(offset, dim) * dh);
        delays.push(model.delay(i, u_s)?);
        offset += dim;
    }
    Ok(SteadyLinearization { a0: jac.dx, b, delays, x_s: x_s.clone(), u_s: u_s.clone(), d_s: d_s.clone() })
}

/// `det(lambda I - A_0 - sum_i B_i exp(-tau_i lambda))`.
pub fn char_fn_dde(lin: &SteadyLinearization, lambda: Complex64) -> Complex64 {
    lin.char_det_dde(lambda).value()
}

/// `det(lambda I - A_0 - sum_i B_i (1 - tau_i lambda))`.
pub fn char_fn_approx(lin: &SteadyLinearization, lambda: Complex64) -> Complex64 {
    lin.char_det_approx(lambda).value()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RootMethod {
    Transcendental,
    GeneralizedEigen,
}

impl RootMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            RootMethod::Transcendental => "transcendental",
            RootMethod::GeneralizedEigen => "generalized-eigen",
        }
    }
}

/// Rectangle of the complex plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanWindow {
    pub re: (f64, f64),
    pub im: (f64, f64),
}

impl ScanWindow {
    pub fn contains(&self, z: Complex64, slack_re: f64, slack_im: f64) -> bool {
        z.re >= self.re.0 - slack_re
            && z.re <= self.re.1 + slack_re
            && z.im >= self.im.0 - slack_im
            && z.im <= self.im.1 + slack_im
    }
}

impl Default for ScanWindow {
    fn default() -> Self {
        ScanWindow { re: (-30.0, 5.0), im: (0.0, 15.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub value: Complex64,
    /// `|det|` relative to the Hadamard bound of the term magnitudes.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RootSet {
    /// Sorted by `(Re, Im)`.
    pub roots: Vec<Root>,
    pub method: RootMethod,
    pub window: Option<ScanWindow>,
    /// Scan candidates whose refinement did not converge.
    pub dropped: usize,
}

impl RootSet {
    pub fn values(&self) -> Vec<Complex64> {
        self.roots.iter().map(|r| r.value).collect()
    }

    /// Roots together with the conjugates of those off the real axis.
    pub fn with_conjugates(&self) -> Vec<Complex64> {
        let mut out = Vec::new();
        for r in &self.roots {
            out.push(r.value);
            if self.method == RootMethod::Transcendental && r.value.im != 0.0 {
                out.push(r.value.conj());
            }
        }
        out
    }

    pub fn max_real_part(&self) -> f64 {
        self.roots.iter().map(|r| r.value.re).fold(f64::NEG_INFINITY, f64::max)
    }

    /// CSV with columns `re,im,residual,method`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("re,im,residual,method\n");
        for r in &self.roots {
            write_float(&mut out, r.value.re);
            out.push(',');
            write_float(&mut out, r.value.im);
            out.push(',');
            write_float(&mut out, r.residual);
            let _ = writeln!(out, ",{}", self.method.as_str());
        }
        out
    }
}

fn sort_roots(roots: &mut [Root]) {
    roots.sort_by(|a, b| a.value.re.total_cmp(&b.value.re).then(a.value.im.total_cmp(&b.value.im)));
}

/// Characteristic determinant sampled on a rectangular grid.
#[derive(Debug, Clone)]
pub struct GridField {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    /// Row-major, `values[j * re.len() + i]` at `(re[i], im[j])`.
    pub values: Vec<ScaledDet>,
}

impl GridField {
    /// CSV `re,im,phase_re,phase_im,log10_abs`; the zero sets of the phase
    /// components are those of `Re det` and `Im det`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("re,im,phase_re,phase_im,log10_abs\n");
        for (j, &y) in self.im.iter().enumerate() {
            for (i, &x) in self.re.iter().enumerate() {
                let d = &self.values[j * self.re.len() + i];
                for (k, v) in [x, y, d.phase.re, d.phase.im, d.log_abs / std::f64::consts::LN_10].into_iter().enumerate() {
                    if k > 0 {
                        out.push(',');
                    }
                    write_float(&mut out, v);
                }
                out.push('\n');
            }
        }
        out
    }
}

fn linspace(a: f64, b: f64, cells: usize) -> Vec<f64> {
    (0..=cells).map(|k| a + (b - a) * k as f64 / cells as f64).collect()
}

/// Evaluates the delay-system determinant on `(cells.0 + 1) x (cells.1 + 1)` nodes.
pub fn scan_char_fn_dde(lin: &SteadyLinearization, window: ScanWindow, cells: (usize, usize)) -> GridField {
    let re = linspace(window.re.0, window.re.1, cells.0);
    let im = linspace(window.im.0, window.im.1, cells.1);
    let values: Vec<ScaledDet> = im
        .par_iter()
        .flat_map_iter(|&y| re.iter().map(move |&x| lin.char_det_dde(Complex64::new(x, y))).collect::<Vec<_>>())
        .collect();
    GridField { re, im, values }
}

fn newton_step(lin: &SteadyLinearization, lambda: Complex64, det: &ScaledDet) -> Option<Complex64> {
    let h = 1e-7 * (1.0 + lambda.norm());
    let slope = lin.char_det_dde(lambda + h).ratio(det) - lin.char_det_dde(lambda - h).ratio(det);
    if slope.norm() == 0.0 || !slope.is_finite() {
        return None;
    }
    Some(2.0 * h / slope)
}

/// Damped Newton on the characteristic determinant from `start`.
fn refine(lin: &SteadyLinearization, start: Complex64) -> Option<(Complex64, ScaledDet)> {
    let mut lambda = start;
    let mut det = lin.char_det_dde(lambda);
    for _ in 0..50 {
        if det.is_zero() {
            return Some((lambda, det));
        }
        let step = newton_step(lin, lambda, &det)?;
        if step.norm() <= 1e-13 * (1.0 + lambda.norm()) {
            return Some((lambda, det));
        }
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial = lambda - step * scale;
            let d = lin.char_det_dde(trial);
            if d.log_abs < det.log_abs {
                accepted = Some((trial, d));
                break;
            }
            scale *= 0.5;
        }
        // no decrease: rounding level reached, or stuck away from a root
        let Some((next, next_det)) = accepted else { break };
        lambda = next;
        det = next_det;
    }
    if det.is_zero() {
        return Some((lambda, det));
    }
    let step = newton_step(lin, lambda, &det)?;
    (step.norm() <= 1e-9 * (1.0 + lambda.norm())).then_some((lambda, det))
}

/// Residual threshold for accepting a refined transcendental root.
pub const ROOT_RESIDUAL_TOL: f64 = 1e-8;

/// Locates roots of the delay-system characteristic function inside `window`.
///
/// Cells where both the real and the imaginary part change sign among the
/// corners are refined by damped Newton. Roots are deduplicated within
/// `1e-6` and reported in the upper half plane (conjugates implied).
pub fn find_roots_dde(lin: &SteadyLinearization, window: ScanWindow, cells: (usize, usize)) -> Result<RootSet> {
    Ok(find_roots_dde_with_field(lin, window, cells)?.0)
}

/// As [`find_roots_dde`], also returning the sampled field.
pub fn find_roots_dde_with_field(
    lin: &SteadyLinearization,
    window: ScanWindow,
    cells: (usize, usize),
) -> Result<(RootSet, GridField)> {
    if cells.0 < 16 || cells.1 < 16 {
        return Err(Error::Config("root scan needs at least 16 cells per axis".into()));
    }
    if !(window.re.1 > window.re.0 && window.im.1 > window.im.0) {
        return Err(Error::Config("empty scan window".into()));
    }
    let field = scan_char_fn_dde(lin, window, cells);
    let nre = field.re.len();
    let mut starts = Vec::new();
    for j in 0..cells.1 {
        for i in 0..cells.0 {
            let corners = [
                field.values[j * nre + i].phase,
                field.values[j * nre + i + 1].phase,
                field.values[(j + 1) * nre + i].phase,
                field.values[(j + 1) * nre + i + 1].phase,
            ];
            let changes = |part: fn(&Complex64) -> f64| {
                let lo = corners.iter().map(part).fold(f64::INFINITY, f64::min);
                let hi = corners.iter().map(part).fold(f64::NEG_INFINITY, f64::max);
                lo <= 0.0 && hi >= 0.0
            };
            if changes(|c| c.re) && changes(|c| c.im) {
                starts.push(Complex64::new(
                    0.5 * (field.re[i] + field.re[i + 1]),
                    0.5 * (field.im[j] + field.im[j + 1]),
                ));
            }
        }
    }

    let refined: Vec<Option<(Complex64, ScaledDet)>> = starts.par_iter().map(|&s| refine(lin, s)).collect();
    let cell_re = (window.re.1 - window.re.0) / cells.0 as f64;
    let cell_im = (window.im.1 - window.im.0) / cells.1 as f64;
    let mut dropped = 0;
    let mut roots: Vec<Root> = Vec::new();
    for (start, outcome) in starts.iter().zip(refined) {
        let Some((mut value, det)) = outcome else {
            log::debug!("root refinement from {start} did not converge");
            dropped += 1;
            continue;
        };
        if value.im < 0.0 {
            value = value.conj();
        }
        if value.im.abs() <= 1e-9 * (1.0 + value.norm()) {
            value.im = 0.0;
        }
        let residual = det.relative_abs();
        if !(residual <= ROOT_RESIDUAL_TOL) {
            log::debug!("root candidate {value} rejected, residual {residual:e}");
            dropped += 1;
            continue;
        }
        if !window.contains(value, cell_re, cell_im) {
            continue;
        }
        if roots.iter().any(|r| (r.value - value).norm() <= 1e-6) {
            continue;
        }
        roots.push(Root { value, residual });
    }
    sort_roots(&mut roots);
    Ok((RootSet { roots, method: RootMethod::Transcendental, window: Some(window), dropped }, field))
}

/// Mass-matrix condition estimate above which the pencil is reported degenerate.
pub const PENCIL_CONDITION_LIMIT: f64 = 1e12;

/// The pencil `(K, M) = (A_0 + sum B_i, I + sum tau_i B_i)`.
pub fn approx_pencil(lin: &SteadyLinearization) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = lin.dim();
    let mut k = lin.a0.clone();
    let mut m = DMatrix::identity(n, n);
    for (b, &tau) in lin.b.iter().zip(&lin.delays) {
        k += b;
        m += b * tau;
    }
    (k, m)
}

/// All `n_x` roots of the delay-linearized characteristic equation.
pub fn find_roots_approx(lin: &SteadyLinearization) -> Result<RootSet> {
    let (k, m) = approx_pencil(lin);
    let n = lin.dim();
    let inverse = m.clone().try_inverse();
    let condition = match &inverse {
        Some(inv) => one_norm(&m) * one_norm(inv),
        None => f64::INFINITY,
    };
    if !(condition <= PENCIL_CONDITION_LIMIT) {
        return Err(Error::DegeneratePencil { condition });
    }
    let reduced = m.lu().solve(&k).ok_or(Error::DegeneratePencil { condition })?;
    let eig = reduced.complex_eigenvalues();
    let mut roots: Vec<Root> = (0..n)
        .map(|i| {
            let value = eig[i];
            Root { value, residual: lin.char_det_approx(value).relative_abs() }
        })
        .collect();
    sort_roots(&mut roots);
    Ok(RootSet { roots, method: RootMethod::GeneralizedEigen, window: None, dropped: 0 })
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}
