//! Fixed-width forward-mode dual numbers.
//!
//! `Dual<N>` carries a value and N partial derivatives. Seeding the k-th
//! input with a unit derivative and running the model once yields the k-th
//! Jacobian column of every output, exact to machine precision.

use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use super::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct Dual<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

impl<const N: usize> Dual<N> {
    #[inline]
    pub fn constant(v: f64) -> Self {
        Self { v, d: [0.0; N] }
    }

    /// Value `v` seeded as the `k`-th independent variable.
    #[inline]
    pub fn seeded(v: f64, k: usize) -> Self {
        let mut d = [0.0; N];
        d[k] = 1.0;
        Self { v, d }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self.v += rhs.v;
        for i in 0..N {
            self.d[i] += rhs.d[i];
        }
        self
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self.v -= rhs.v;
        for i in 0..N {
            self.d[i] -= rhs.d[i];
        }
        self
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = self.d[i] * rhs.v + self.v * rhs.d[i];
        }
        Self {
            v: self.v * rhs.v,
            d,
        }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.v;
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = (self.d[i] - self.v * inv * rhs.d[i]) * inv;
        }
        Self {
            v: self.v * inv,
            d,
        }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        self.v = -self.v;
        for i in 0..N {
            self.d[i] = -self.d[i];
        }
        self
    }
}

impl<const N: usize> AddAssign for Dual<N> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}
impl<const N: usize> SubAssign for Dual<N> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}
impl<const N: usize> MulAssign for Dual<N> {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<const N: usize> PartialEq for Dual<N> {
    fn eq(&self, other: &Self) -> bool {
        self.v == other.v
    }
}

impl<const N: usize> PartialOrd for Dual<N> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.v.partial_cmp(&other.v)
    }
}

impl<const N: usize> Scalar for Dual<N> {
    #[inline]
    fn c(v: f64) -> Self {
        Self::constant(v)
    }
    #[inline]
    fn value(self) -> f64 {
        self.v
    }

    #[inline]
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        let g = 0.5 / s;
        self.chain(s, g)
    }
    #[inline]
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    #[inline]
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    #[inline]
    fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }
    #[inline]
    fn powf_c(self, e: f64) -> Self {
        let p = self.v.powf(e);
        self.chain(p, e * self.v.powf(e - 1.0))
    }
}

impl<const N: usize> Dual<N> {
    /// Apply a univariate function with value `f` and derivative `df`.
    #[inline]
    fn chain(mut self, f: f64, df: f64) -> Self {
        self.v = f;
        for i in 0..N {
            self.d[i] *= df;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_chain_rules() {
        // f(a, b) = a * sin(b) + sqrt(a / b)
        let a = Dual::<2>::seeded(2.0, 0);
        let b = Dual::<2>::seeded(3.0, 1);
        let f = a * b.sin() + (a / b).sqrt();

        let (av, bv) = (2.0_f64, 3.0_f64);
        assert!((f.v - (av * bv.sin() + (av / bv).sqrt())).abs() < 1e-14);
        // d/da = sin(b) + 1/(2 sqrt(a/b) b)
        let dfda = bv.sin() + 1.0 / (2.0 * (av / bv).sqrt() * bv);
        // d/db = a cos(b) - a / (2 sqrt(a/b) b^2)
        let dfdb = av * bv.cos() - av / (2.0 * (av / bv).sqrt() * bv * bv);
        assert!((f.d[0] - dfda).abs() < 1e-13);
        assert!((f.d[1] - dfdb).abs() < 1e-13);
    }

    #[test]
    fn matches_finite_differences() {
        let g = |x: f64, y: f64| (x * x * y).exp().ln() * x.powf(0.15) / (y + x.cos());
        let gd = |x: Dual<2>, y: Dual<2>| {
            (x * x * y).exp().ln() * x.powf_c(0.15) / (y + x.cos())
        };
        let (x0, y0) = (1.3, 0.7);
        let f = gd(Dual::seeded(x0, 0), Dual::seeded(y0, 1));
        let h = 1e-6;
        let fdx = (g(x0 + h, y0) - g(x0 - h, y0)) / (2.0 * h);
        let fdy = (g(x0, y0 + h) - g(x0, y0 - h)) / (2.0 * h);
        assert!((f.d[0] - fdx).abs() < 1e-8, "{} vs {}", f.d[0], fdx);
        assert!((f.d[1] - fdy).abs() < 1e-8, "{} vs {}", f.d[1], fdy);
    }
}
