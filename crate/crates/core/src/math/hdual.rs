//! Directional second-order forward AD.
//!
//! `HDual<W>` tracks a value, its gradient with respect to W inputs, its
//! derivative along one fixed direction, and the direction-derivative of
//! the gradient. One evaluation per direction yields one exact Hessian
//! column of every output.

use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use super::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct HDual<const W: usize> {
    pub v: f64,
    pub g: [f64; W],
    /// derivative along the seeded direction
    pub t: f64,
    /// direction-derivative of the gradient (Hessian column)
    pub h: [f64; W],
}

impl<const W: usize> HDual<W> {
    #[inline]
    pub fn constant(v: f64) -> Self {
        Self {
            v,
            g: [0.0; W],
            t: 0.0,
            h: [0.0; W],
        }
    }

    /// Input `k` with value `v`; `dir` is this input's component of the
    /// direction vector.
    #[inline]
    pub fn seeded(v: f64, k: usize, dir: f64) -> Self {
        let mut g = [0.0; W];
        g[k] = 1.0;
        Self {
            v,
            g,
            t: dir,
            h: [0.0; W],
        }
    }

    /// Chain rule for a univariate function with derivatives f' and f''.
    #[inline]
    fn chain(mut self, f: f64, df: f64, d2f: f64) -> Self {
        for i in 0..W {
            self.h[i] = d2f * self.t * self.g[i] + df * self.h[i];
            self.g[i] *= df;
        }
        self.t *= df;
        self.v = f;
        self
    }
}

impl<const W: usize> Add for HDual<W> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: Self) -> Self {
        self.v += o.v;
        self.t += o.t;
        for i in 0..W {
            self.g[i] += o.g[i];
            self.h[i] += o.h[i];
        }
        self
    }
}

impl<const W: usize> Sub for HDual<W> {
    type Output = Self;
    #[inline]
    fn sub(mut self, o: Self) -> Self {
        self.v -= o.v;
        self.t -= o.t;
        for i in 0..W {
            self.g[i] -= o.g[i];
            self.h[i] -= o.h[i];
        }
        self
    }
}

impl<const W: usize> Mul for HDual<W> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut g = [0.0; W];
        let mut h = [0.0; W];
        for i in 0..W {
            g[i] = self.g[i] * o.v + self.v * o.g[i];
            h[i] = self.h[i] * o.v + self.g[i] * o.t + self.t * o.g[i] + self.v * o.h[i];
        }
        Self {
            v: self.v * o.v,
            g,
            t: self.t * o.v + self.v * o.t,
            h,
        }
    }
}

impl<const W: usize> Div for HDual<W> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        // self * o^-1 with the univariate chain on o
        let inv = HDual::chain(o, 1.0 / o.v, -1.0 / (o.v * o.v), 2.0 / (o.v * o.v * o.v));
        self * inv
    }
}

impl<const W: usize> Neg for HDual<W> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        self.v = -self.v;
        self.t = -self.t;
        for i in 0..W {
            self.g[i] = -self.g[i];
            self.h[i] = -self.h[i];
        }
        self
    }
}

impl<const W: usize> AddAssign for HDual<W> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}
impl<const W: usize> SubAssign for HDual<W> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}
impl<const W: usize> MulAssign for HDual<W> {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<const W: usize> PartialEq for HDual<W> {
    fn eq(&self, o: &Self) -> bool {
        self.v == o.v
    }
}
impl<const W: usize> PartialOrd for HDual<W> {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        self.v.partial_cmp(&o.v)
    }
}

impl<const W: usize> Scalar for HDual<W> {
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
        self.chain(s, 0.5 / s, -0.25 / (s * s * s))
    }
    #[inline]
    fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }
    #[inline]
    fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }
    #[inline]
    fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v, -1.0 / (self.v * self.v))
    }
    #[inline]
    fn powf_c(self, e: f64) -> Self {
        let p = self.v.powf(e);
        self.chain(
            p,
            e * self.v.powf(e - 1.0),
            e * (e - 1.0) * self.v.powf(e - 2.0),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hessian_of_quadratic_and_transcendental() {
        // f(x, y) = x^2 y + sin(x y) + sqrt(y)
        let f = |x: f64, y: f64| x * x * y + (x * y).sin() + y.sqrt();
        let (x0, y0) = (0.8, 1.7);

        // analytic Hessian entries
        let hxx = 2.0 * y0 - y0 * y0 * (x0 * y0).sin();
        let hxy = 2.0 * x0 + (x0 * y0).cos() - x0 * y0 * (x0 * y0).sin();
        let hyy = -x0 * x0 * (x0 * y0).sin() - 0.25 * y0.powf(-1.5);

        // direction e_x: Hessian column x
        let eval = |dir: [f64; 2]| {
            let x = HDual::<2>::seeded(x0, 0, dir[0]);
            let y = HDual::<2>::seeded(y0, 1, dir[1]);
            x * x * y + (x * y).sin() + y.sqrt()
        };
        let col_x = eval([1.0, 0.0]);
        assert!((col_x.v - f(x0, y0)).abs() < 1e-14);
        assert!((col_x.h[0] - hxx).abs() < 1e-12, "{} vs {hxx}", col_x.h[0]);
        assert!((col_x.h[1] - hxy).abs() < 1e-12);
        let col_y = eval([0.0, 1.0]);
        assert!((col_y.h[0] - hxy).abs() < 1e-12);
        assert!((col_y.h[1] - hyy).abs() < 1e-12);
    }

    #[test]
    fn division_second_order() {
        // f = x / y: fxx = 0, fxy = -1/y^2, fyy = 2x/y^3
        let (x0, y0) = (1.3, 0.6);
        let eval = |dir: [f64; 2]| {
            let x = HDual::<2>::seeded(x0, 0, dir[0]);
            let y = HDual::<2>::seeded(y0, 1, dir[1]);
            x / y
        };
        let cy = eval([0.0, 1.0]);
        assert!((cy.h[0] + 1.0 / (y0 * y0)).abs() < 1e-12);
        assert!((cy.h[1] - 2.0 * x0 / (y0 * y0 * y0)).abs() < 1e-12);
    }
}
