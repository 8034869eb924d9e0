//! Determinants of small complex matrices in log-magnitude form.

use num_complex::Complex64;

/// `det = phase * exp(log_abs)` with `|phase| = 1`, or exactly zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledDet {
    pub phase: Complex64,
    pub log_abs: f64,
    /// `ln` of the product of row 2-norms (Hadamard bound on `|det|`).
    pub log_scale: f64,
}

impl ScaledDet {
    pub fn is_zero(&self) -> bool {
        self.log_abs == f64::NEG_INFINITY
    }

    /// The determinant itself; may overflow to infinity.
    pub fn value(&self) -> Complex64 {
        if self.is_zero() {
            Complex64::new(0.0, 0.0)
        } else {
            self.phase * self.log_abs.exp()
        }
    }

    /// `|det|` relative to the Hadamard bound, in `[0, 1]`.
    pub fn relative_abs(&self) -> f64 {
        if self.is_zero() {
            0.0
        } else {
            (self.log_abs - self.log_scale).exp()
        }
    }

    /// `self / other` without forming either determinant.
    pub fn ratio(&self, other: &ScaledDet) -> Complex64 {
        if self.is_zero() {
            return Complex64::new(0.0, 0.0);
        }
        self.phase / other.phase * (self.log_abs - other.log_abs).exp()
    }
}

fn row_log_norm(row: &[Complex64]) -> f64 {
    let big = row.iter().map(|a| a.norm()).fold(0.0, f64::max);
    if big == 0.0 {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = row.iter().map(|a| (a.norm() / big).powi(2)).sum();
    big.ln() + 0.5 * sum.ln()
}

/// LU with partial pivoting on a row-major `n x n` buffer, consumed in place.
pub fn scaled_det(n: usize, a: &mut [Complex64]) -> ScaledDet {
    debug_assert_eq!(a.len(), n * n);
    let log_scale: f64 = (0..n).map(|i| row_log_norm(&a[i * n..(i + 1) * n])).sum();
    let mut phase = Complex64::new(1.0, 0.0);
    let mut log_abs = 0.0;
    for k in 0..n {
        let (mut p, mut best) = (k, a[k * n + k].norm());
        for i in k + 1..n {
            let v = a[i * n + k].norm();
            if v > best {
                p = i;
                best = v;
            }
        }
        if best == 0.0 {
            return ScaledDet { phase: Complex64::new(0.0, 0.0), log_abs: f64::NEG_INFINITY, log_scale };
        }
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            phase = -phase;
        }
        let pivot = a[k * n + k];
        phase *= pivot / best;
        log_abs += best.ln();
        for i in k + 1..n {
            let factor = a[i * n + k] / pivot;
            if factor == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in k + 1..n {
                let t = a[k * n + j];
                a[i * n + j] -= factor * t;
            }
        }
    }
    ScaledDet { phase: phase / phase.norm(), log_abs, log_scale }
}
