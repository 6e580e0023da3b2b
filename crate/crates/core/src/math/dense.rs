//! Small dense linear algebra: LU with partial pivoting.
//!
//! Used by the collocation integrator's Newton iterations; system sizes stay
//! below ~150 so dense factorization is the right tool.

/// Solve A x = b in place; A is row-major n x n. Returns false if singular.
pub fn lu_solve(a: &mut [f64], b: &mut [f64], n: usize) -> bool {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let mut piv: Vec<usize> = (0..n).collect();

    for k in 0..n {
        // pivot
        let mut p = k;
        let mut pmax = a[piv[k] * n + k].abs();
        for r in (k + 1)..n {
            let v = a[piv[r] * n + k].abs();
            if v > pmax {
                pmax = v;
                p = r;
            }
        }
        if pmax < 1e-300 {
            return false;
        }
        piv.swap(k, p);
        let pk = piv[k];
        let diag = a[pk * n + k];
        for r in (k + 1)..n {
            let pr = piv[r];
            let factor = a[pr * n + k] / diag;
            a[pr * n + k] = factor;
            for c in (k + 1)..n {
                a[pr * n + c] -= factor * a[pk * n + c];
            }
        }
    }

    // forward substitution on permuted rows
    let mut y = vec![0.0; n];
    for r in 0..n {
        let mut acc = b[piv[r]];
        for c in 0..r {
            acc -= a[piv[r] * n + c] * y[c];
        }
        y[r] = acc;
    }
    // back substitution
    for r in (0..n).rev() {
        let mut acc = y[r];
        for c in (r + 1)..n {
            acc -= a[piv[r] * n + c] * b[c];
        }
        b[r] = acc / a[piv[r] * n + r];
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        // A = [[2,1,0],[1,3,1],[0,1,4]], x = [1,-2,3]
        let mut a = vec![2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0];
        let x_true = [1.0, -2.0, 3.0];
        let mut b = vec![
            2.0 * 1.0 + 1.0 * -2.0,
            1.0 * 1.0 + 3.0 * -2.0 + 1.0 * 3.0,
            1.0 * -2.0 + 4.0 * 3.0,
        ];
        assert!(lu_solve(&mut a, &mut b, 3));
        for i in 0..3 {
            assert!((b[i] - x_true[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn detects_singular() {
        let mut a = vec![1.0, 2.0, 2.0, 4.0];
        let mut b = vec![1.0, 2.0];
        assert!(!lu_solve(&mut a, &mut b, 2));
    }
}

/// In-place Cholesky factorization of a symmetric positive definite matrix
/// (row-major, lower triangle used). Returns false if not SPD.
pub fn cholesky_factor(a: &mut [f64], n: usize) -> bool {
    for k in 0..n {
        let mut diag = a[k * n + k];
        for j in 0..k {
            diag -= a[k * n + j] * a[k * n + j];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return false;
        }
        let diag = diag.sqrt();
        a[k * n + k] = diag;
        for i in (k + 1)..n {
            let mut v = a[i * n + k];
            for j in 0..k {
                v -= a[i * n + j] * a[k * n + j];
            }
            a[i * n + k] = v / diag;
        }
    }
    true
}

/// Solve L L^T x = b given the Cholesky factor from [`cholesky_factor`].
pub fn cholesky_solve(l: &[f64], b: &mut [f64], n: usize) {
    for i in 0..n {
        let mut v = b[i];
        for j in 0..i {
            v -= l[i * n + j] * b[j];
        }
        b[i] = v / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for j in (i + 1)..n {
            v -= l[j * n + i] * b[j];
        }
        b[i] = v / l[i * n + i];
    }
}

#[cfg(test)]
mod chol_tests {
    use super::*;

    #[test]
    fn cholesky_round_trip() {
        // A = M M^T + I is SPD
        let n = 4;
        let m = [1.0, 0.0, 2.0, 0.5, -1.0, 1.5, 0.3, 0.2, 2.0, -0.7, 0.1, 0.4, 1.1, 0.6, -0.2, 0.9];
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    a[i * n + j] += m[i * n + k] * m[j * n + k];
                }
            }
            a[i * n + i] += 1.0;
        }
        let x_true = [1.0, -2.0, 0.5, 3.0];
        let mut b = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                b[i] += a[i * n + j] * x_true[j];
            }
        }
        assert!(cholesky_factor(&mut a, n));
        cholesky_solve(&a, &mut b, n);
        for i in 0..n {
            assert!((b[i] - x_true[i]).abs() < 1e-10);
        }
    }
}
