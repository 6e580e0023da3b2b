//! Derivative verification and independent KKT residuals.

use super::SparseNlp;

/// Outcome of a finite-difference derivative audit.
#[derive(Clone, Debug, serde::Serialize)]
pub struct DerivativeReport {
    /// Worst relative Jacobian entry error.
    pub max_rel_error_jac: f64,
    /// Worst relative gradient entry error.
    pub max_rel_error_grad: f64,
    pub worst_jac_entry: (usize, usize),
    /// Finite-difference nonzeros found outside the declared pattern.
    pub missing_entries: Vec<(usize, usize)>,
    pub entries_checked: usize,
}

impl DerivativeReport {
    pub fn max_rel_error(&self) -> f64 {
        self.max_rel_error_jac.max(self.max_rel_error_grad)
    }
    pub fn pattern_complete(&self) -> bool {
        self.missing_entries.is_empty()
    }
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error() <= tol && self.pattern_complete()
    }
}

/// Central finite differences against the supplied gradient and Jacobian,
/// plus a sparsity-pattern completeness check.
///
/// `x` must lie inside the bound box; entries are nudged off the bounds
/// before differencing.
pub fn check_derivatives(nlp: &SparseNlp, x: &[f64], step: f64) -> DerivativeReport {
    let n = nlp.n_vars;
    let m = nlp.n_cons;

    let mut x0 = x.to_vec();
    for i in 0..n {
        let lo = nlp.x_lower[i];
        let hi = nlp.x_upper[i];
        if hi - lo > 4.0 * step {
            x0[i] = x0[i].clamp(lo + 2.0 * step, hi - 2.0 * step);
        } else {
            x0[i] = 0.5 * (lo + hi);
        }
    }

    // analytic values
    let mut jac = vec![0.0; nlp.pattern.nnz()];
    nlp.eval.jacobian(&x0, &mut jac);
    let mut grad = vec![0.0; n];
    nlp.eval.gradient(&x0, &mut grad);

    // column lookup: slots of each column
    let rows_of_slot = nlp.pattern.expand_rows();
    let mut col_slots: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (slot, &col) in nlp.pattern.col_idx.iter().enumerate() {
        col_slots[col as usize].push(slot);
    }

    let mut cp = vec![0.0; m];
    let mut cm = vec![0.0; m];
    let mut xp = x0.clone();

    let mut max_rel_jac = 0.0f64;
    let mut worst = (0usize, 0usize);
    let mut missing = Vec::new();
    let mut checked = 0usize;
    let mut max_rel_grad = 0.0f64;

    for j in 0..n {
        let h = step * (1.0 + x0[j].abs());
        xp[j] = x0[j] + h;
        nlp.eval.constraints(&xp, &mut cp);
        let fp = nlp.eval.objective(&xp);
        xp[j] = x0[j] - h;
        nlp.eval.constraints(&xp, &mut cm);
        let fm = nlp.eval.objective(&xp);
        xp[j] = x0[j];

        // gradient entry
        let fd_g = (fp - fm) / (2.0 * h);
        let rel = (fd_g - grad[j]).abs() / fd_g.abs().max(grad[j].abs()).max(1.0);
        max_rel_grad = max_rel_grad.max(rel);

        // Jacobian column: entries inside the pattern
        let mut pattern_rows: Vec<(usize, usize)> = Vec::with_capacity(col_slots[j].len());
        for &slot in &col_slots[j] {
            pattern_rows.push((rows_of_slot[slot] as usize, slot));
        }
        for &(row, slot) in &pattern_rows {
            let fd = (cp[row] - cm[row]) / (2.0 * h);
            let an = jac[slot];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1.0);
            checked += 1;
            if rel > max_rel_jac {
                max_rel_jac = rel;
                worst = (row, j);
            }
        }
        // completeness: fd nonzeros outside the pattern
        let in_pattern: std::collections::BTreeSet<usize> =
            pattern_rows.iter().map(|rs| rs.0).collect();
        for row in 0..m {
            if in_pattern.contains(&row) {
                continue;
            }
            let fd = (cp[row] - cm[row]) / (2.0 * h);
            if fd.abs() > 1e-4 {
                missing.push((row, j));
            }
        }
    }

    DerivativeReport {
        max_rel_error_jac: max_rel_jac,
        max_rel_error_grad: max_rel_grad,
        worst_jac_entry: worst,
        missing_entries: missing,
        entries_checked: checked,
    }
}

/// Independent KKT residuals at (x, lambda): stationarity of the projected
/// Lagrangian gradient, bound-respecting feasibility, and complementarity.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

pub fn kkt_residuals(nlp: &SparseNlp, x: &[f64], lambda: &[f64]) -> KktResiduals {
    let n = nlp.n_vars;
    let m = nlp.n_cons;
    let mut cons = vec![0.0; m];
    nlp.eval.constraints(x, &mut cons);
    let mut jac = vec![0.0; nlp.pattern.nnz()];
    nlp.eval.jacobian(x, &mut jac);
    let mut grad = vec![0.0; n];
    nlp.eval.gradient(x, &mut grad);

    // grad L = grad f - J^T lambda
    let mut jt_lambda = vec![0.0; n];
    nlp.pattern.mul_transpose_vec(&jac, lambda, &mut jt_lambda);
    let mut stationarity = 0.0f64;
    for i in 0..n {
        let g = grad[i] - jt_lambda[i];
        let proj = (x[i] - g).clamp(nlp.x_lower[i], nlp.x_upper[i]) - x[i];
        stationarity = stationarity.max(proj.abs());
    }

    let mut feasibility = 0.0f64;
    let mut complementarity = 0.0f64;
    for i in 0..m {
        let lo = nlp.c_lower[i];
        let up = nlp.c_upper[i];
        let viol = (lo - cons[i]).max(0.0).max(cons[i] - up);
        feasibility = feasibility.max(viol);
        if up > lo {
            // distance to the nearest active side, capped
            let gap = (cons[i] - lo).min(up - cons[i]).max(0.0).min(1.0);
            complementarity = complementarity.max(lambda[i].abs() * gap);
        }
    }

    KktResiduals {
        stationarity,
        feasibility,
        complementarity,
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::ClosureNlp;
    use super::super::{solve, SolveOptions, SolveStatus, SparseNlp};
    use super::*;
    use crate::math::CsrPattern;
    use std::sync::Arc;

    fn dense_pattern(m: usize, n: usize) -> CsrPattern {
        let mut coords = Vec::new();
        for r in 0..m {
            for c in 0..n {
                coords.push((r as u32, c as u32));
            }
        }
        CsrPattern::from_coords(m, n, &coords)
    }

    /// min x^2 s.t. x >= 1 (bound only)
    #[test]
    fn bound_constrained_quadratic() {
        let nlp = SparseNlp {
            n_vars: 1,
            n_cons: 0,
            x_lower: vec![1.0],
            x_upper: vec![f64::INFINITY],
            c_lower: vec![],
            c_upper: vec![],
            pattern: Arc::new(dense_pattern(0, 1)),
            chain_blocks: vec![],
            dense_rows: vec![],
            eval: Arc::new(ClosureNlp {
                f: Box::new(|x| x[0] * x[0]),
                g: Box::new(|x| vec![2.0 * x[0]]),
                c: Box::new(|_| vec![]),
                jac: Box::new(|_| vec![]),
            }),
        };
        let (x, report) = solve(&nlp, &[3.0], &SolveOptions::default());
        assert_eq!(report.status, SolveStatus::Optimal);
        assert!((x[0] - 1.0).abs() < 1e-8, "x = {}", x[0]);
        assert!((report.objective - 1.0).abs() < 1e-8);
    }

    /// unconstrained Rosenbrock
    #[test]
    fn rosenbrock_unconstrained() {
        let nlp = SparseNlp {
            n_vars: 2,
            n_cons: 0,
            x_lower: vec![f64::NEG_INFINITY; 2],
            x_upper: vec![f64::INFINITY; 2],
            c_lower: vec![],
            c_upper: vec![],
            pattern: Arc::new(dense_pattern(0, 2)),
            chain_blocks: vec![],
            dense_rows: vec![],
            eval: Arc::new(ClosureNlp {
                f: Box::new(|x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)),
                g: Box::new(|x| {
                    vec![
                        -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                        200.0 * (x[1] - x[0] * x[0]),
                    ]
                }),
                c: Box::new(|_| vec![]),
                jac: Box::new(|_| vec![]),
            }),
        };
        let opts = SolveOptions {
            max_iter: 5000,
            inner_max_iter: 5000,
            ..SolveOptions::default()
        };
        let (x, report) = solve(&nlp, &[-1.2, 1.0], &opts);
        assert_eq!(report.status, SolveStatus::Optimal, "{report:?}");
        assert!((x[0] - 1.0).abs() < 1e-5 && (x[1] - 1.0).abs() < 1e-5, "{x:?}");
    }

    /// min x + y s.t. x^2 + y^2 = 1 -> (-1/sqrt2, -1/sqrt2)
    #[test]
    fn equality_constrained_linear() {
        let nlp = SparseNlp {
            n_vars: 2,
            n_cons: 1,
            x_lower: vec![f64::NEG_INFINITY; 2],
            x_upper: vec![f64::INFINITY; 2],
            c_lower: vec![1.0],
            c_upper: vec![1.0],
            pattern: Arc::new(dense_pattern(1, 2)),
            chain_blocks: vec![],
            dense_rows: vec![],
            eval: Arc::new(ClosureNlp {
                f: Box::new(|x| x[0] + x[1]),
                g: Box::new(|_| vec![1.0, 1.0]),
                c: Box::new(|x| vec![x[0] * x[0] + x[1] * x[1]]),
                jac: Box::new(|x| vec![2.0 * x[0], 2.0 * x[1]]),
            }),
        };
        let (x, report) = solve(&nlp, &[0.5, -0.8], &SolveOptions::default());
        assert_eq!(report.status, SolveStatus::Optimal, "{report:?}");
        let s = -(0.5f64.sqrt());
        assert!((x[0] - s).abs() < 1e-6 && (x[1] - s).abs() < 1e-6, "{x:?}");
        // re-verified multipliers: grad f = J^T lambda -> lambda = 1/(2 s)
        assert!((report.multipliers[0] - 1.0 / (2.0 * s)).abs() < 1e-4);
    }

    /// inequality makes the constraint active: min x+y s.t. x^2+y^2 <= 1
    #[test]
    fn inequality_active_at_solution() {
        let nlp = SparseNlp {
            n_vars: 2,
            n_cons: 1,
            x_lower: vec![f64::NEG_INFINITY; 2],
            x_upper: vec![f64::INFINITY; 2],
            c_lower: vec![f64::NEG_INFINITY],
            c_upper: vec![1.0],
            pattern: Arc::new(dense_pattern(1, 2)),
            chain_blocks: vec![],
            dense_rows: vec![],
            eval: Arc::new(ClosureNlp {
                f: Box::new(|x| x[0] + x[1]),
                g: Box::new(|_| vec![1.0, 1.0]),
                c: Box::new(|x| vec![x[0] * x[0] + x[1] * x[1]]),
                jac: Box::new(|x| vec![2.0 * x[0], 2.0 * x[1]]),
            }),
        };
        let (x, report) = solve(&nlp, &[0.0, 0.0], &SolveOptions::default());
        assert_eq!(report.status, SolveStatus::Optimal, "{report:?}");
        let s = -(0.5f64.sqrt());
        assert!((x[0] - s).abs() < 1e-6 && (x[1] - s).abs() < 1e-6, "{x:?}");
    }

    #[test]
    fn derivative_check_quadratic_exact() {
        let nlp = SparseNlp {
            n_vars: 2,
            n_cons: 1,
            x_lower: vec![-10.0; 2],
            x_upper: vec![10.0; 2],
            c_lower: vec![0.0],
            c_upper: vec![0.0],
            pattern: Arc::new(dense_pattern(1, 2)),
            chain_blocks: vec![],
            dense_rows: vec![],
            eval: Arc::new(ClosureNlp {
                f: Box::new(|x| 3.0 * x[0] * x[0] + x[1] * x[1] - x[0] * x[1]),
                g: Box::new(|x| vec![6.0 * x[0] - x[1], 2.0 * x[1] - x[0]]),
                c: Box::new(|x| vec![x[0] * x[0] - x[1]]),
                jac: Box::new(|x| vec![2.0 * x[0], -1.0]),
            }),
        };
        let report = check_derivatives(&nlp, &[0.7, -0.3], 1e-5);
        assert!(report.max_rel_error() <= 1e-9, "{report:?}");
        assert!(report.pattern_complete());
    }

    #[test]
    fn derivative_check_flags_corrupted_entry_and_missing_pattern() {
        // wrong value inside the pattern
        let nlp = SparseNlp {
            n_vars: 2,
            n_cons: 1,
            x_lower: vec![-10.0; 2],
            x_upper: vec![10.0; 2],
            c_lower: vec![0.0],
            c_upper: vec![0.0],
            pattern: Arc::new(dense_pattern(1, 2)),
            chain_blocks: vec![],
            dense_rows: vec![],
            eval: Arc::new(ClosureNlp {
                f: Box::new(|x| x[0] + x[1]),
                g: Box::new(|_| vec![1.0, 1.0]),
                c: Box::new(|x| vec![x[0] * x[0] - x[1]]),
                jac: Box::new(|x| vec![2.0 * x[0] + 0.5, -1.0]), // corrupted
            }),
        };
        let report = check_derivatives(&nlp, &[0.7, -0.3], 1e-5);
        assert!(report.max_rel_error_jac > 1e-2);
        assert_eq!(report.worst_jac_entry, (0, 0));

        // nonzero outside the declared pattern
        let sparse = CsrPattern::from_coords(1, 2, &[(0, 1)]);
        let nlp = SparseNlp {
            n_vars: 2,
            n_cons: 1,
            x_lower: vec![-10.0; 2],
            x_upper: vec![10.0; 2],
            c_lower: vec![0.0],
            c_upper: vec![0.0],
            pattern: Arc::new(sparse),
            chain_blocks: vec![],
            dense_rows: vec![],
            eval: Arc::new(ClosureNlp {
                f: Box::new(|x| x[0] + x[1]),
                g: Box::new(|_| vec![1.0, 1.0]),
                c: Box::new(|x| vec![x[0] * x[0] - x[1]]),
                jac: Box::new(|_| vec![-1.0]),
            }),
        };
        let report = check_derivatives(&nlp, &[0.7, -0.3], 1e-5);
        assert!(!report.pattern_complete());
        assert_eq!(report.missing_entries, vec![(0, 0)]);
    }

    /// Identical inputs give identical iteration traces.
    #[test]
    fn deterministic_solves() {
        let make = || SparseNlp {
            n_vars: 2,
            n_cons: 1,
            x_lower: vec![f64::NEG_INFINITY; 2],
            x_upper: vec![f64::INFINITY; 2],
            c_lower: vec![1.0],
            c_upper: vec![1.0],
            pattern: Arc::new(dense_pattern(1, 2)),
            chain_blocks: vec![],
            dense_rows: vec![],
            eval: Arc::new(ClosureNlp {
                f: Box::new(|x| x[0] + x[1]),
                g: Box::new(|_| vec![1.0, 1.0]),
                c: Box::new(|x| vec![x[0] * x[0] + x[1] * x[1]]),
                jac: Box::new(|x| vec![2.0 * x[0], 2.0 * x[1]]),
            }),
        };
        let (x1, r1) = solve(&make(), &[0.5, -0.8], &SolveOptions::default());
        let (x2, r2) = solve(&make(), &[0.5, -0.8], &SolveOptions::default());
        assert_eq!(r1.iterations, r2.iterations);
        assert_eq!(x1, x2);
    }
}
