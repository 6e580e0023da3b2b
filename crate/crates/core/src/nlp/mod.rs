//! Sparse nonlinear programming: problem interface, the reference
//! augmented-Lagrangian solver, and derivative verification.
//!
//! The problem contract, not the solver, is normative: a production
//! interior-point solver can be swapped in behind [`SparseNlp`] without
//! touching any other module.

mod check;
mod solver;

pub use check::{check_derivatives, kkt_residuals, DerivativeReport, KktResiduals};
pub use solver::solve;

use std::sync::Arc;

use crate::math::CsrPattern;

/// Callbacks evaluating the problem functions. Implementations must be
/// reentrant: the solver may evaluate from multiple call sites without
/// mutating shared state.
pub trait NlpEval: Send + Sync {
    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], grad: &mut [f64]);
    fn constraints(&self, x: &[f64], out: &mut [f64]);
    /// Jacobian values in the CSR order of [`SparseNlp::pattern`].
    fn jacobian(&self, x: &[f64], vals: &mut [f64]);
    /// Exact diagonal of the objective Hessian where available (used to
    /// strengthen the solver's curvature model; zero is always safe).
    fn objective_hess_diag(&self, x: &[f64], out: &mut [f64]) {
        let _ = x;
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    /// Emit second-derivative entries of f(x) + y . c(x): each symmetric
    /// pair once as (col_a, col_b, value). Return false when unavailable
    /// (the solver then falls back to its quasi-Newton model).
    fn hessian(&self, x: &[f64], y: &[f64], sink: &mut dyn FnMut(u32, u32, f64)) -> bool {
        let _ = (x, y, sink);
        false
    }
}

/// A sparse, bound-constrained NLP:
///
/// ```text
/// min f(x)   s.t.  c_lower <= c(x) <= c_upper,  x_lower <= x <= x_upper
/// ```
///
/// Equalities are rows with equal bounds.
#[derive(Clone)]
pub struct SparseNlp {
    pub n_vars: usize,
    pub n_cons: usize,
    pub x_lower: Vec<f64>,
    pub x_upper: Vec<f64>,
    pub c_lower: Vec<f64>,
    pub c_upper: Vec<f64>,
    /// Structural sparsity of the constraint Jacobian (covers every entry
    /// that can ever be nonzero).
    pub pattern: Arc<CsrPattern>,
    /// Consecutive variable blocks forming the block-tridiagonal chain of
    /// the Gauss-Newton matrix: (start, len), disjoint and ordered. Rows may
    /// couple a block only to itself, its neighbours, and the border.
    pub chain_blocks: Vec<(usize, usize)>,
    /// Rows whose Jacobian support spans many chain blocks (handled by a
    /// low-rank correction instead of the chain factorization).
    pub dense_rows: Vec<usize>,
    pub eval: Arc<dyn NlpEval>,
}

impl SparseNlp {
    pub fn validate(&self) -> crate::Result<()> {
        use crate::error::Error;
        if self.x_lower.len() != self.n_vars
            || self.x_upper.len() != self.n_vars
            || self.c_lower.len() != self.n_cons
            || self.c_upper.len() != self.n_cons
        {
            return Err(Error::InvalidParameter("bound array sizes".into()));
        }
        if self.pattern.n_rows != self.n_cons || self.pattern.n_cols != self.n_vars {
            return Err(Error::InvalidParameter("jacobian pattern shape".into()));
        }
        Ok(())
    }
}

/// Solver options; defaults target the transcription scale of this crate.
#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Stationarity tolerance on the projected Lagrangian gradient.
    pub kkt_tol: f64,
    /// Feasibility tolerance on constraint violations.
    pub constraint_tol: f64,
    /// Cap on total inner iterations.
    pub max_iter: usize,
    /// Initial quadratic penalty.
    pub mu_init: f64,
    /// Penalty growth factor.
    pub mu_factor: f64,
    /// Penalty ceiling.
    pub mu_max: f64,
    /// Limited-memory pairs for the quasi-Newton model.
    pub lbfgs_mem: usize,
    /// Cap on conjugate-gradient iterations per Newton step.
    pub cg_max_iter: usize,
    /// Cap on inner iterations per outer (multiplier) iteration.
    pub inner_max_iter: usize,
    /// Warm-start constraint multipliers.
    pub warm_multipliers: Option<Vec<f64>>,
    /// Warm-start penalty value.
    pub warm_mu: Option<f64>,
    /// Stream one line per inner iteration to this file.
    pub log_file: Option<std::path::PathBuf>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-6,
            constraint_tol: 1e-7,
            max_iter: 3000,
            mu_init: 10.0,
            mu_factor: 10.0,
            mu_max: 1e8,
            lbfgs_mem: 24,
            cg_max_iter: 200,
            inner_max_iter: 400,
            warm_multipliers: None,
            warm_mu: None,
            log_file: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
    NumericalFailure,
}

/// Outcome of a solve, including the final multipliers for warm starts.
#[derive(Clone, Debug)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub objective: f64,
    pub kkt_stationarity: f64,
    pub kkt_feasibility: f64,
    pub kkt_complementarity: f64,
    pub multipliers: Vec<f64>,
    pub final_mu: f64,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Build a [`SparseNlp`] from closures plus a dense-difference fallback
/// pattern; intended for small test problems.
pub mod testing {
    use super::*;

    pub struct ClosureNlp {
        pub f: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        pub g: Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
        pub c: Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
        pub jac: Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>, // CSR order
    }

    impl NlpEval for ClosureNlp {
        fn objective(&self, x: &[f64]) -> f64 {
            (self.f)(x)
        }
        fn gradient(&self, x: &[f64], grad: &mut [f64]) {
            grad.copy_from_slice(&(self.g)(x));
        }
        fn constraints(&self, x: &[f64], out: &mut [f64]) {
            out.copy_from_slice(&(self.c)(x));
        }
        fn jacobian(&self, x: &[f64], vals: &mut [f64]) {
            vals.copy_from_slice(&(self.jac)(x));
        }
    }
}
