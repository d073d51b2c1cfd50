//! Dense polynomials in the two bond variables `(η₀, η₁)`.

use std::ops::{Add, Mul, Neg, Sub};

/// `Σ c[i][j] η₀^i η₁^j`, stored densely up to `degree` in each variable.
#[derive(Debug, Clone, PartialEq)]
pub struct BivariatePoly {
    coeffs: Vec<Vec<f64>>,
}

impl BivariatePoly {
    pub fn zero() -> Self {
        Self { coeffs: vec![vec![0.0]] }
    }

    pub fn constant(c: f64) -> Self {
        Self { coeffs: vec![vec![c]] }
    }

    /// `c · η₀^i η₁^j`
    pub fn monomial(i: usize, j: usize, c: f64) -> Self {
        let mut p = Self::zero();
        p.set(i, j, c);
        p
    }

    pub fn eta0() -> Self {
        Self::monomial(1, 0, 1.0)
    }

    pub fn eta1() -> Self {
        Self::monomial(0, 1, 1.0)
    }

    /// `η₀ + η₁`
    pub fn bond_sum() -> Self {
        Self::eta0() + Self::eta1()
    }

    pub fn coeff(&self, i: usize, j: usize) -> f64 {
        self.coeffs.get(i).and_then(|row| row.get(j)).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, i: usize, j: usize, c: f64) {
        if self.coeffs.len() <= i {
            self.coeffs.resize(i + 1, vec![0.0]);
        }
        let row = &mut self.coeffs[i];
        if row.len() <= j {
            row.resize(j + 1, 0.0);
        }
        row[j] = c;
    }

    /// Total degree (0 for the zero polynomial).
    pub fn degree(&self) -> usize {
        let mut d = 0;
        for (i, row) in self.coeffs.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if c != 0.0 {
                    d = d.max(i + j);
                }
            }
        }
        d
    }

    pub fn eval(&self, e0: f64, e1: f64) -> f64 {
        // Horner in η₀ over Horner-in-η₁ rows.
        self.coeffs.iter().rev().fold(0.0, |acc, row| acc * e0 + row.iter().rev().fold(0.0, |r, &c| r * e1 + c))
    }

    /// `∂/∂η₀`
    pub fn d0(&self) -> Self {
        let mut out = Self::zero();
        for (i, row) in self.coeffs.iter().enumerate().skip(1) {
            for (j, &c) in row.iter().enumerate() {
                if c != 0.0 {
                    out.set(i - 1, j, out.coeff(i - 1, j) + c * i as f64);
                }
            }
        }
        out
    }

    /// `∂/∂η₁`
    pub fn d1(&self) -> Self {
        let mut out = Self::zero();
        for (i, row) in self.coeffs.iter().enumerate() {
            for (j, &c) in row.iter().enumerate().skip(1) {
                if c != 0.0 {
                    out.set(i, j - 1, out.coeff(i, j - 1) + c * j as f64);
                }
            }
        }
        out
    }

    /// Exchange `η₀ ↔ η₁`.
    pub fn swapped(&self) -> Self {
        let mut out = Self::zero();
        for (i, row) in self.coeffs.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if c != 0.0 {
                    out.set(j, i, c);
                }
            }
        }
        out
    }

    /// `F(η₀ + η₁)` for a univariate polynomial `F` with coefficients `f[k]` of `s^k`.
    pub fn of_bond_sum(f: &[f64]) -> Self {
        let mut out = Self::zero();
        let mut power = Self::constant(1.0);
        for &c in f {
            out = out + power.scale(c);
            power = &power * &Self::bond_sum();
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { coeffs: self.coeffs.iter().map(|row| row.iter().map(|c| c * s).collect()).collect() }
    }

    fn zip_with(&self, other: &Self, op: impl Fn(f64, f64) -> f64) -> Self {
        let rows = self.coeffs.len().max(other.coeffs.len());
        let mut out = Self::zero();
        for i in 0..rows {
            let cols = self.coeffs.get(i).map_or(0, Vec::len).max(other.coeffs.get(i).map_or(0, Vec::len));
            for j in 0..cols {
                let v = op(self.coeff(i, j), other.coeff(i, j));
                if v != 0.0 {
                    out.set(i, j, v);
                }
            }
        }
        out
    }
}

impl Add for BivariatePoly {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.zip_with(&rhs, |a, b| a + b)
    }
}

impl Sub for BivariatePoly {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.zip_with(&rhs, |a, b| a - b)
    }
}

impl Neg for BivariatePoly {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl Mul for &BivariatePoly {
    type Output = BivariatePoly;
    fn mul(self, rhs: &BivariatePoly) -> BivariatePoly {
        let mut out = BivariatePoly::zero();
        for (i, row) in self.coeffs.iter().enumerate() {
            for (j, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (k, rrow) in rhs.coeffs.iter().enumerate() {
                    for (l, &b) in rrow.iter().enumerate() {
                        if b != 0.0 {
                            out.set(i + k, j + l, out.coeff(i + k, j + l) + a * b);
                        }
                    }
                }
            }
        }
        out
    }
}

impl Mul for BivariatePoly {
    type Output = BivariatePoly;
    fn mul(self, rhs: BivariatePoly) -> BivariatePoly {
        &self * &rhs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_and_derivatives() {
        // p = 3 η₀² η₁ - η₁ + 2
        let p = BivariatePoly::monomial(2, 1, 3.0) - BivariatePoly::eta1() + BivariatePoly::constant(2.0);
        assert_eq!(p.eval(2.0, 5.0), 3.0 * 4.0 * 5.0 - 5.0 + 2.0);
        assert_eq!(p.d0().eval(2.0, 5.0), 6.0 * 2.0 * 5.0);
        assert_eq!(p.d1().eval(2.0, 5.0), 3.0 * 4.0 - 1.0);
        assert_eq!(p.degree(), 3);
        assert_eq!(p.swapped().eval(5.0, 2.0), p.eval(2.0, 5.0));
    }

    #[test]
    fn bond_sum_composition() {
        let f = BivariatePoly::of_bond_sum(&[1.0, -2.0, 0.5]);
        let (a, b) = (1.5, -0.25);
        let s: f64 = a + b;
        assert!((f.eval(a, b) - (1.0 - 2.0 * s + 0.5 * s * s)).abs() < 1e-14);
    }
}
