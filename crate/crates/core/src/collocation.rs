//! Radau IIA collocation: nodes, quadrature weights, differentiation matrix.
//!
//! Nodes of the degree-d scheme on (0, 1] are the right endpoint plus the
//! interior roots of P_{d-1}(x) - P_d(x) mapped from [-1, 1]. The scheme is
//! stiffly accurate (last node at 1), which makes interval continuity a
//! plain equality with the last collocation state.

use crate::error::{Error, Result};

/// Collocation data for one mesh interval, all on the unit interval.
#[derive(Clone, Debug)]
pub struct RadauScheme {
    pub degree: usize,
    /// Collocation nodes tau_1..tau_d in (0, 1], ascending; tau_d = 1.
    pub nodes: Vec<f64>,
    /// Quadrature weights over the collocation nodes (sum to 1, exact to
    /// polynomial degree 2d-2).
    pub quad_weights: Vec<f64>,
    /// diff[i][j] = dL_i/dtau at tau_j, where L_i is the Lagrange basis on
    /// the d+1 points {0, tau_1..tau_d}; i in 0..=d, j in 0..d.
    pub diff: Vec<Vec<f64>>,
}

impl RadauScheme {
    pub fn new(degree: usize) -> Result<Self> {
        if !(1..=5).contains(&degree) {
            return Err(Error::InvalidParameter(format!(
                "collocation degree {degree} outside supported range [1, 5]"
            )));
        }
        let mut nodes = interior_radau_roots(degree);
        nodes.push(1.0);

        // quadrature weights on the d collocation nodes
        let quad_weights = (0..degree)
            .map(|i| integrate_unit(&lagrange_coeffs(&nodes, i)))
            .collect();

        // differentiation matrix on the d+1 basis points {0} + nodes
        let mut basis = vec![0.0];
        basis.extend_from_slice(&nodes);
        let diff = (0..=degree)
            .map(|i| {
                let dcoef = differentiate(&lagrange_coeffs(&basis, i));
                nodes.iter().map(|&t| eval_poly(&dcoef, t)).collect()
            })
            .collect();

        Ok(Self {
            degree,
            nodes,
            quad_weights,
            diff,
        })
    }
}

/// Interior roots of P_{d-1}(x) - P_d(x) on (-1, 1), mapped to (0, 1).
fn interior_radau_roots(d: usize) -> Vec<f64> {
    let g = |x: f64| legendre(d - 1, x) - legendre(d, x);
    let mut roots = Vec::new();
    let n_scan = 2000;
    let mut x_prev = -1.0 + 1e-12;
    let mut g_prev = g(x_prev);
    for i in 1..n_scan {
        // exclude the known root at x = 1
        let x = -1.0 + 2.0 * i as f64 / n_scan as f64 * (1.0 - 1e-9);
        let gx = g(x);
        if g_prev * gx < 0.0 {
            roots.push(bisect(g, x_prev, x));
        }
        x_prev = x;
        g_prev = gx;
    }
    debug_assert_eq!(roots.len(), d - 1);
    roots.iter().map(|&x| 0.5 * (x + 1.0)).collect()
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 || hi - lo < 1e-16 {
            return mid;
        }
        if flo * fm < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    0.5 * (lo + hi)
}

fn legendre(n: usize, x: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, x);
    match n {
        0 => p0,
        1 => p1,
        _ => {
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            p1
        }
    }
}

/// Monomial coefficients (ascending) of the Lagrange basis polynomial for
/// point `i` of `points`.
fn lagrange_coeffs(points: &[f64], i: usize) -> Vec<f64> {
    let mut coeffs = vec![1.0];
    let mut denom = 1.0;
    for (j, &p) in points.iter().enumerate() {
        if j == i {
            continue;
        }
        // multiply by (t - p)
        let mut next = vec![0.0; coeffs.len() + 1];
        for (k, &c) in coeffs.iter().enumerate() {
            next[k + 1] += c;
            next[k] -= p * c;
        }
        coeffs = next;
        denom *= points[i] - p;
    }
    coeffs.iter_mut().for_each(|c| *c /= denom);
    coeffs
}

fn differentiate(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, &c)| k as f64 * c)
        .collect()
}

fn eval_poly(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

fn integrate_unit(coeffs: &[f64]) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .map(|(k, &c)| c / (k + 1) as f64)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn degree_limits_enforced() {
        assert!(RadauScheme::new(0).is_err());
        assert!(RadauScheme::new(6).is_err());
    }

    #[test]
    fn known_nodes_and_weights() {
        // Literature values for Radau IIA schemes.
        let s2 = RadauScheme::new(2).unwrap();
        assert_relative_eq!(s2.nodes[0], 1.0 / 3.0, epsilon = 1e-13);
        assert_relative_eq!(s2.quad_weights[0], 0.75, epsilon = 1e-13);
        assert_relative_eq!(s2.quad_weights[1], 0.25, epsilon = 1e-13);

        let s3 = RadauScheme::new(3).unwrap();
        let r6 = 6f64.sqrt();
        assert_relative_eq!(s3.nodes[0], (4.0 - r6) / 10.0, epsilon = 1e-12);
        assert_relative_eq!(s3.nodes[1], (4.0 + r6) / 10.0, epsilon = 1e-12);
        assert_relative_eq!(s3.quad_weights[2], 1.0 / 9.0, epsilon = 1e-12);

        let s4 = RadauScheme::new(4).unwrap();
        let expect_nodes = [
            0.088_587_959_512_703_95,
            0.409_466_864_440_734_7,
            0.787_659_461_760_847_1,
            1.0,
        ];
        let expect_weights = [
            0.220_462_211_176_768_37,
            0.388_193_468_843_171_88,
            0.328_844_319_980_059_74,
            0.0625,
        ];
        for (a, b) in s4.nodes.iter().zip(expect_nodes) {
            assert_relative_eq!(a, &b, epsilon = 1e-12);
        }
        for (a, b) in s4.quad_weights.iter().zip(expect_weights) {
            assert_relative_eq!(a, &b, epsilon = 1e-12);
        }
    }

    #[test]
    fn quadrature_exactness() {
        // Radau quadrature with d points is exact up to degree 2d-2.
        for d in 1..=5 {
            let s = RadauScheme::new(d).unwrap();
            for p in 0..=(2 * d - 2) {
                let approx: f64 = s
                    .nodes
                    .iter()
                    .zip(&s.quad_weights)
                    .map(|(&t, &w)| w * t.powi(p as i32))
                    .sum();
                let exact = 1.0 / (p + 1) as f64;
                assert_relative_eq!(approx, exact, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn differentiation_matrix_exact_for_polynomials() {
        // The basis {0, tau_1..tau_d} interpolates degree-d polynomials
        // exactly, so the matrix must differentiate them exactly.
        for d in 2..=5 {
            let s = RadauScheme::new(d).unwrap();
            let mut basis = vec![0.0];
            basis.extend_from_slice(&s.nodes);
            let f = |t: f64| t.powi(d as i32) - 2.0 * t + 0.5;
            let df = |t: f64| d as f64 * t.powi(d as i32 - 1) - 2.0;
            for (j, &tj) in s.nodes.iter().enumerate() {
                let approx: f64 = basis
                    .iter()
                    .enumerate()
                    .map(|(i, &ti)| s.diff[i][j] * f(ti))
                    .sum();
                assert_relative_eq!(approx, df(tj), epsilon = 1e-10);
            }
        }
    }
}
