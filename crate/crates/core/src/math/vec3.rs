//! Minimal 3-vector over a generic scalar.

use super::scalar::Scalar;
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug)]
pub struct V3<S>(pub [S; 3]);

impl<S: Scalar> V3<S> {
    #[inline]
    pub fn new(x: S, y: S, z: S) -> Self {
        Self([x, y, z])
    }

    #[inline]
    pub fn zero() -> Self {
        Self([S::zero(); 3])
    }

    #[inline]
    pub fn from_f64(v: [f64; 3]) -> Self {
        Self([S::c(v[0]), S::c(v[1]), S::c(v[2])])
    }

    #[inline]
    pub fn x(&self) -> S {
        self.0[0]
    }
    #[inline]
    pub fn y(&self) -> S {
        self.0[1]
    }
    #[inline]
    pub fn z(&self) -> S {
        self.0[2]
    }

    #[inline]
    pub fn dot(&self, o: &Self) -> S {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    #[inline]
    pub fn cross(&self, o: &Self) -> Self {
        Self([
            self.0[1] * o.0[2] - self.0[2] * o.0[1],
            self.0[2] * o.0[0] - self.0[0] * o.0[2],
            self.0[0] * o.0[1] - self.0[1] * o.0[0],
        ])
    }

    #[inline]
    pub fn norm_sq(&self) -> S {
        self.dot(self)
    }

    /// Euclidean norm, softened near zero so derivatives stay finite.
    #[inline]
    pub fn norm_eps(&self, eps: f64) -> S {
        (self.norm_sq() + S::c(eps * eps)).sqrt()
    }

    #[inline]
    pub fn scale(&self, s: S) -> Self {
        Self([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }

    #[inline]
    pub fn values(&self) -> [f64; 3] {
        [self.0[0].value(), self.0[1].value(), self.0[2].value()]
    }
}

impl<S: Scalar> Add for V3<S> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl<S: Scalar> Sub for V3<S> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl<S: Scalar> Neg for V3<S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl<S: Scalar> Mul<S> for V3<S> {
    type Output = Self;
    #[inline]
    fn mul(self, s: S) -> Self {
        self.scale(s)
    }
}
