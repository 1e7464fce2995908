//! Banded matrices and LU factorization without pivoting.
//!
//! Row-wise band storage: entry `(i, j)` with `i - kl <= j <= i + ku` lives at
//! `data[i * (kl + ku + 1) + (j + kl - i)]`. Without pivoting the factors stay
//! inside the original band.

#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

/// Error from a vanishing pivot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroPivot {
    pub row: usize,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self {
            n,
            kl,
            ku,
            data: vec![0.0; n * (kl + ku + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    fn width(&self) -> usize {
        self.kl + self.ku + 1
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku, "({i},{j}) outside band");
        i * self.width() + (j + self.kl - i)
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && j + self.kl >= i && j <= i + self.ku
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// Clears row `i`.
    pub fn clear_row(&mut self, i: usize) {
        let w = self.width();
        self.data[i * w..(i + 1) * w].fill(0.0);
    }

    fn col_range(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.kl)..(i + self.ku + 1).min(self.n)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.col_range(i).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    /// `sum_j |a_ij x_j|` per row, the scale used for componentwise residuals.
    pub fn abs_matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                self.col_range(i)
                    .map(|j| (self.get(i, j) * x[j]).abs())
                    .sum()
            })
            .collect()
    }

    /// Doolittle LU in place (unit lower factor), no pivoting.
    pub fn factor(mut self) -> Result<BandedLu, ZeroPivot> {
        let n = self.n;
        for k in 0..n {
            let pivot = self.get(k, k);
            let scale = self
                .col_range(k)
                .map(|j| self.get(k, j).abs())
                .fold(0.0_f64, f64::max);
            if !pivot.is_finite() || pivot.abs() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
                return Err(ZeroPivot { row: k });
            }
            let last_row = (k + self.kl).min(n - 1);
            let last_col = (k + self.ku).min(n - 1);
            for i in k + 1..=last_row {
                let m = self.get(i, k) / pivot;
                if m == 0.0 {
                    continue;
                }
                self.set(i, k, m);
                for j in k + 1..=last_col {
                    let u = self.get(k, j);
                    if u != 0.0 {
                        self.add(i, j, -m * u);
                    }
                }
            }
        }
        Ok(BandedLu { lu: self })
    }
}

#[derive(Debug, Clone)]
pub struct BandedLu {
    lu: BandedMatrix,
}

impl BandedLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let a = &self.lu;
        let n = a.n;
        assert_eq!(b.len(), n);
        for i in 0..n {
            let lo = i.saturating_sub(a.kl);
            let mut s = b[i];
            for j in lo..i {
                s -= a.get(i, j) * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + a.ku).min(n - 1);
            let mut s = b[i];
            for j in i + 1..=hi {
                s -= a.get(i, j) * b[j];
            }
            b[i] = s / a.get(i, i);
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Componentwise relative residual `max_i |Ax - b|_i / (sum_j |a_ij x_j| + |b_i|)`.
pub fn componentwise_residual(a: &BandedMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.matvec(x);
    let scale = a.abs_matvec(x);
    ax.iter()
        .zip(b)
        .zip(&scale)
        .map(|((ax, b), s)| {
            let denom = s + b.abs();
            if denom == 0.0 {
                0.0
            } else {
                (ax - b).abs() / denom
            }
        })
        .fold(0.0, f64::max)
}
