//! Truncated derivative jets in `x`: `[f, f', ..., f^(N-1)]` at one point.
//! Products follow the Leibniz rule; differentiation shifts and shortens the
//! valid range.

use std::ops::{Add, Mul, Neg, Sub};

pub const N: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    d: [f64; N],
    /// Number of trustworthy leading entries.
    valid: usize,
}

const BINOM: [[f64; N]; N] = {
    let mut c = [[0.0; N]; N];
    let mut n = 0;
    while n < N {
        c[n][0] = 1.0;
        let mut k = 1;
        while k <= n {
            c[n][k] = c[n - 1][k - 1] + if k < n { c[n - 1][k] } else { 0.0 };
            k += 1;
        }
        n += 1;
    }
    c
};

impl Jet {
    #[cfg(test)]
    pub fn new(d: [f64; N], valid: usize) -> Self {
        Self { d, valid }
    }

    pub fn from_slice(d: &[f64]) -> Self {
        let mut a = [0.0; N];
        let valid = d.len().min(N);
        a[..valid].copy_from_slice(&d[..valid]);
        Self { d: a, valid }
    }

    pub fn constant(c: f64) -> Self {
        let mut d = [0.0; N];
        d[0] = c;
        Self { d, valid: N }
    }

    /// `f^(k)`; panics when `k` is beyond the valid range.
    pub fn at(&self, k: usize) -> f64 {
        assert!(k < self.valid, "derivative {k} not available (valid {})", self.valid);
        self.d[k]
    }

    pub fn value(&self) -> f64 {
        self.d[0]
    }

    pub fn dx(&self) -> Self {
        let mut d = [0.0; N];
        d[..N - 1].copy_from_slice(&self.d[1..]);
        Self {
            d,
            valid: self.valid.saturating_sub(1),
        }
    }

    pub fn powi(&self, n: u32) -> Self {
        (0..n).fold(Jet::constant(1.0), |acc, _| acc * *self)
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            d: self.d.map(|v| a * v),
            valid: self.valid,
        }
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d) {
            *a += b;
        }
        Jet {
            d,
            valid: self.valid.min(o.valid),
        }
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        self + (-o)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let valid = self.valid.min(o.valid);
        let mut d = [0.0; N];
        for (k, slot) in d.iter_mut().enumerate().take(valid) {
            *slot = (0..=k).map(|j| BINOM[k][j] * self.d[j] * o.d[k - j]).sum();
        }
        Jet { d, valid }
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, a: f64) -> Jet {
        self.scale(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(x: f64) -> Jet {
        // x^3
        Jet::new([x * x * x, 3.0 * x * x, 6.0 * x, 6.0, 0.0, 0.0], N)
    }

    #[test]
    fn binomials() {
        assert_eq!(BINOM[4], [1.0, 4.0, 6.0, 4.0, 1.0, 0.0]);
        assert_eq!(BINOM[5][2], 10.0);
    }

    #[test]
    fn product_rule_on_monomials() {
        let x = 0.7;
        let p = poly(x) * poly(x);
        // x^6 derivatives
        let expect = [
            x.powi(6),
            6.0 * x.powi(5),
            30.0 * x.powi(4),
            120.0 * x.powi(3),
            360.0 * x * x,
            720.0 * x,
        ];
        for k in 0..N {
            assert!((p.at(k) - expect[k]).abs() < 1e-12);
        }
        assert_eq!(poly(x).powi(2), p);
    }

    #[test]
    fn differentiation_shrinks_validity() {
        let j = Jet::from_slice(&[1.0, 2.0, 3.0]);
        let d = j.dx();
        assert_eq!(d.at(0), 2.0);
        assert_eq!(d.at(1), 3.0);
        assert!(std::panic::catch_unwind(|| d.at(2)).is_err());
    }
}
