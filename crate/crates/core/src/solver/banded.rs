//! Symmetric banded matrices and their Cholesky factorization.

/// Lower band of a symmetric `n x n` matrix with half-bandwidth `hb`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBand {
    n: usize,
    hb: usize,
    /// `data[i * (hb + 1) + (i - j)]` holds entry `(i, j)`, `i - hb <= j <= i`.
    data: Vec<f64>,
}

impl SymBand {
    pub fn zeros(n: usize, hb: usize) -> Self {
        let hb = hb.min(n.saturating_sub(1));
        SymBand { n, hb, data: vec![0.0; n * (hb + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.hb
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        (i - j <= self.hb).then(|| i * (self.hb + 1) + (i - j))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.data[s])
    }

    /// Adds `v` to `(i, j)` (and hence `(j, i)`). Entries outside the band are dropped.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        if let Some(s) = self.slot(i, j) {
            self.data[s] += v;
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        if let Some(s) = self.slot(i, j) {
            self.data[s] = v;
        }
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.data[i * (self.hb + 1)]
    }

    pub fn max_abs_diag(&self) -> f64 {
        (0..self.n).map(|i| self.diag(i).abs()).fold(0.0, f64::max)
    }

    /// `y = A x`.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.hb);
            for j in lo..=i {
                let a = self.data[i * (self.hb + 1) + (i - j)];
                y[i] += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    /// Replaces row and column `i` by the unit vector, decoupling variable `i`.
    pub fn decouple(&mut self, i: usize) {
        let lo = i.saturating_sub(self.hb);
        let hi = (i + self.hb).min(self.n - 1);
        for j in lo..=hi {
            self.set(i, j, 0.0);
        }
        self.set(i, i, 1.0);
    }

    /// Cholesky factor of `A + shift I`, or `None` if it is not numerically positive definite.
    pub fn cholesky(&self, shift: f64) -> Option<BandCholesky> {
        let (n, hb) = (self.n, self.hb);
        let w = hb + 1;
        let mut l = self.data.clone();
        for i in 0..n {
            l[i * w] += shift;
        }
        for j in 0..n {
            let lo = j.saturating_sub(hb);
            let mut d = l[j * w];
            for k in lo..j {
                let v = l[j * w + (j - k)];
                d -= v * v;
            }
            if !(d > 1e-300) || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            l[j * w] = djj;
            for i in j + 1..(j + hb + 1).min(n) {
                let lo_i = i.saturating_sub(hb).max(lo);
                let mut s = l[i * w + (i - j)];
                for k in lo_i..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                l[i * w + (i - j)] = s / djj;
            }
        }
        Some(BandCholesky { n, hb, l })
    }
}

/// `A = L L^T` with `L` lower banded.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    hb: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, hb) = (self.n, self.hb);
        let w = hb + 1;
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(hb);
            let mut s = y[i];
            for k in lo..i {
                s -= self.l[i * w + (i - k)] * y[k];
            }
            y[i] = s / self.l[i * w];
        }
        for i in (0..n).rev() {
            let hi = (i + hb).min(n - 1);
            let mut s = y[i];
            for k in i + 1..=hi {
                s -= self.l[k * w + (k - i)] * y[k];
            }
            y[i] = s / self.l[i * w];
        }
        y
    }
}
