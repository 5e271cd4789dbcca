//! Dense univariate polynomials with `f64` coefficients.
//!
//! Used for the homogenized functions (`P`, `f`, Bernoulli expectations of
//! local functions, the potential `W`). All of them are low degree, so plain
//! coefficient vectors and Horner evaluation are enough.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Coefficients in ascending degree: `c[0] + c[1] x + c[2] x^2 + ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        let mut p = Polynomial { coeffs };
        p.trim();
        p
    }

    pub fn zero() -> Self {
        Polynomial { coeffs: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Polynomial::new(vec![c])
    }

    /// The identity polynomial `x`.
    pub fn x() -> Self {
        Polynomial::new(vec![0.0, 1.0])
    }

    /// `lead * prod (x - r)`.
    pub fn from_roots(lead: f64, roots: &[f64]) -> Self {
        roots.iter().fold(Polynomial::constant(lead), |acc, &r| {
            &acc * &Polynomial::new(vec![-r, 1.0])
        })
    }

    /// `x (1 - x)`, the compressibility of a Bernoulli variable.
    pub fn compressibility() -> Self {
        Polynomial::new(vec![0.0, 1.0, -1.0])
    }

    fn trim(&mut self) {
        while let Some(&c) = self.coeffs.last() {
            if c == 0.0 {
                self.coeffs.pop();
            } else {
                break;
            }
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient of `x^k` (zero past the degree).
    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    /// Degree, with the zero polynomial reported as degree 0.
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Self {
        Polynomial::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| k as f64 * c)
                .collect(),
        )
    }

    /// Antiderivative vanishing at zero.
    pub fn antiderivative(&self) -> Self {
        let mut c = Vec::with_capacity(self.coeffs.len() + 1);
        c.push(0.0);
        c.extend(self.coeffs.iter().enumerate().map(|(k, &a)| a / (k as f64 + 1.0)));
        Polynomial::new(c)
    }

    /// Exact integral over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        let anti = self.antiderivative();
        anti.eval(b) - anti.eval(a)
    }

    pub fn scale(&self, s: f64) -> Self {
        Polynomial::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    /// Largest coefficientwise absolute difference.
    pub fn max_coeff_diff(&self, other: &Polynomial) -> f64 {
        let n = self.coeffs.len().max(other.coeffs.len());
        (0..n)
            .map(|k| (self.coeff(k) - other.coeff(k)).abs())
            .fold(0.0, f64::max)
    }

    /// Maximum of `|p|` sampled on a uniform grid over `[a, b]` (endpoints included).
    pub fn max_abs_on(&self, a: f64, b: f64, samples: usize) -> f64 {
        let n = samples.max(2);
        (0..n)
            .map(|i| self.eval(a + (b - a) * i as f64 / (n - 1) as f64).abs())
            .fold(0.0, f64::max)
    }

    /// Minimum of `p` sampled on a uniform grid over `[a, b]`.
    pub fn min_on(&self, a: f64, b: f64, samples: usize) -> f64 {
        let n = samples.max(2);
        (0..n)
            .map(|i| self.eval(a + (b - a) * i as f64 / (n - 1) as f64))
            .fold(f64::INFINITY, f64::min)
    }

    /// Roots in the open interval `(a, b)`: sign changes on a uniform grid of
    /// `grid` cells, each refined by bisection to `tol`. Grid points where the
    /// polynomial is exactly zero are reported as roots.
    pub fn roots_in(&self, a: f64, b: f64, grid: usize, tol: f64) -> Vec<f64> {
        let mut roots = Vec::new();
        if self.is_zero() {
            return roots;
        }
        let at = |i: usize| a + (b - a) * i as f64 / grid as f64;
        let mut x_prev = at(0);
        let mut y_prev = self.eval(x_prev);
        for i in 1..=grid {
            let x = at(i);
            let y = self.eval(x);
            if y == 0.0 {
                if i < grid {
                    roots.push(x);
                }
            } else if y_prev != 0.0 && (y_prev < 0.0) != (y < 0.0) {
                roots.push(self.bisect(x_prev, x, tol));
            }
            x_prev = x;
            y_prev = y;
        }
        roots
    }

    /// Bisection on a bracketing interval.
    pub fn bisect(&self, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
        let mut f_lo = self.eval(lo);
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            let f_mid = self.eval(mid);
            if f_mid == 0.0 {
                return mid;
            }
            if (f_mid < 0.0) == (f_lo < 0.0) {
                lo = mid;
                f_lo = f_mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        Polynomial::new((0..n).map(|k| self.coeff(k) + rhs.coeff(k)).collect())
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        Polynomial::new((0..n).map(|k| self.coeff(k) - rhs.coeff(k)).collect())
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        if self.is_zero() || rhs.is_zero() {
            return Polynomial::zero();
        }
        let mut c = vec![0.0; self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in rhs.coeffs.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Polynomial::new(c)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (k, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            if first {
                write!(f, "{c}")?;
            } else if c < 0.0 {
                write!(f, " - {}", -c)?;
            } else {
                write!(f, " + {c}")?;
            }
            match k {
                0 => {}
                1 => write!(f, " x")?,
                _ => write!(f, " x^{k}")?,
            }
            first = false;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn horner_matches_direct_sum() {
        let p = Polynomial::new(vec![0.09375, -0.6875, 1.5, -1.0]);
        let x: f64 = 0.3;
        let direct = 0.09375 - 0.6875 * x + 1.5 * x * x - x.powi(3);
        assert!((p.eval(x) - direct).abs() < 1e-15);
    }

    #[test]
    fn from_roots_expands_cubic() {
        let p = Polynomial::from_roots(-1.0, &[0.25, 0.5, 0.75]);
        let expected = Polynomial::new(vec![0.09375, -0.6875, 1.5, -1.0]);
        assert!(p.max_coeff_diff(&expected) < 1e-15);
    }

    #[test]
    fn antiderivative_inverts_derivative() {
        let p = Polynomial::new(vec![0.0, 2.0, -3.0, 4.0]);
        assert!(p.antiderivative().derivative().max_coeff_diff(&p) < 1e-15);
        assert!((p.integrate(0.0, 1.0) - (1.0 - 1.0 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn roots_found_on_grid_points_and_between() {
        let p = Polynomial::from_roots(-1.0, &[0.25, 0.5, 0.75]);
        let r = p.roots_in(0.0, 1.0, 10_000, 1e-12);
        assert_eq!(r.len(), 3);
        for (a, b) in r.iter().zip([0.25, 0.5, 0.75]) {
            assert!((a - b).abs() < 1e-10);
        }
        let q = Polynomial::from_roots(1.0, &[0.123456789]);
        let r = q.roots_in(0.0, 1.0, 10_000, 1e-12);
        assert_eq!(r.len(), 1);
        assert!((r[0] - 0.123456789).abs() < 1e-11);
    }

    #[test]
    fn trailing_zeros_trimmed() {
        let p = Polynomial::new(vec![1.0, 0.0, 0.0]);
        assert_eq!(p.degree(), 0);
        assert!((&p - &p).is_zero());
    }
}
