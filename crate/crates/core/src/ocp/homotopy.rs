//! Staged solution of the periodic OCP.
//!
//! Cold starts run three stages: (i) a relaxed problem with fictitious
//! forces tracking the circular guess, (ii) the same relaxed problem with
//! the fictitious-force penalty ramped up until the true dynamics carry the
//! trajectory, (iii) the nominal problem under the physical objective.
//! Warm starts (radius sweeps) skip straight to the nominal solve.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::nlp::{solve, SolveOptions, SolveReport, SolveStatus};

use super::transcription::{PinSet, StageWeights, Transcription};
use super::{extract, initial_guess, Layout, OcpSpec, Trajectory};

#[derive(Clone, Debug)]
pub struct HomotopyOptions {
    /// Final-stage solver options (tolerances per the run configuration).
    pub solver: SolveOptions,
    /// Iteration budget per relaxed stage.
    pub stage_max_iter: usize,
    /// Fictitious-force penalty ramp of stage (ii).
    pub fict_weights: Vec<f64>,
    /// Directory receiving per-stage solver logs.
    pub log_dir: Option<PathBuf>,
    /// Skip the relaxed stages and solve the nominal problem from the seed.
    pub skip_homotopy: bool,
}

impl Default for HomotopyOptions {
    fn default() -> Self {
        Self {
            solver: SolveOptions {
                max_iter: 20000,
                ..SolveOptions::default()
            },
            stage_max_iter: 4000,
            fict_weights: vec![1e2, 1e4, 1e6],
            log_dir: None,
            skip_homotopy: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolvedOcp {
    pub trajectory: Trajectory,
    pub report: SolveReport,
    /// (stage label, report) for every stage that ran.
    pub stage_reports: Vec<(String, SolveReport)>,
}

fn stage_log(opts: &HomotopyOptions, name: &str) -> Option<PathBuf> {
    opts.log_dir.as_ref().map(|d| d.join(format!("solver_{name}.log")))
}

/// Copy shared decision slots between two layouts of the same mesh
/// (physical values; the fictitious blocks of relaxed layouts are dropped
/// or zero-filled).
fn map_decision(from: &Layout, x_from_scaled: &[f64], to: &Layout) -> Vec<f64> {
    let xp = from.to_physical(x_from_scaled);
    let mut out = vec![0.0; to.n_vars()];
    for k in 0..=from.n_intervals {
        let a = from.x_boundary(k);
        let b = to.x_boundary(k);
        out[b..b + to.n_x].copy_from_slice(&xp[a..a + from.n_x]);
    }
    for k in 0..from.n_intervals {
        for j in 0..from.degree {
            let (a, b) = (from.x_coll(k, j), to.x_coll(k, j));
            out[b..b + to.n_x].copy_from_slice(&xp[a..a + from.n_x]);
            let (a, b) = (from.u_coll(k, j), to.u_coll(k, j));
            out[b..b + to.n_u].copy_from_slice(&xp[a..a + from.n_u]);
            let (a, b) = (from.z_coll(k, j), to.z_coll(k, j));
            out[b..b + to.n_z].copy_from_slice(&xp[a..a + from.n_z]);
            if from.n_fict > 0 && to.n_fict > 0 {
                let (a, b) = (from.fict_coll(k, j), to.fict_coll(k, j));
                out[b..b + to.n_fict].copy_from_slice(&xp[a..a + from.n_fict]);
            }
        }
    }
    out[to.g_tether_diameter()] = xp[from.g_tether_diameter()];
    if from.dual && to.dual {
        out[to.g_secondary_diameter()] = xp[from.g_secondary_diameter()];
        out[to.g_secondary_length()] = xp[from.g_secondary_length()];
    }
    out[to.g_induction()] = xp[from.g_induction()];
    out[to.g_t_reel_out()] = xp[from.g_t_reel_out()];
    out[to.g_t_reel_in()] = xp[from.g_t_reel_in()];
    if let (Some(a), Some(b)) = (from.g_radius(), to.g_radius()) {
        out[b] = xp[a];
    } else if let Some(b) = to.g_radius() {
        out[b] = 0.0; // caller seeds explicitly
    }
    out[to.g_theta_e()] = xp[from.g_theta_e()];
    if from.dual && to.dual {
        out[to.g_phi0()] = xp[from.g_phi0()];
    }
    to.to_scaled(&out)
}

/// Solve the OCP, staging from the circular guess unless a warm-start
/// trajectory (matching the mesh) is supplied.
pub fn solve_ocp(
    spec: &OcpSpec,
    opts: &HomotopyOptions,
    warm: Option<&Trajectory>,
) -> Result<SolvedOcp> {
    spec.validate()?;
    let mut stage_reports = Vec::new();

    if let Some(seed) = warm {
        let tr = Transcription::new(spec, seed, false, StageWeights::nominal(spec.reg_weight), PinSet::default())?;
        let nlp = tr.nlp();
        let x0 = tr.guess_scaled.clone();
        let solver_opts = SolveOptions {
            log_file: stage_log(opts, "warm"),
            ..opts.solver.clone()
        };
        let (x, report) = solve(&nlp, &x0, &solver_opts);
        if report.status == SolveStatus::NumericalFailure {
            return Err(Error::SolverFailure("warm-start solve failed numerically".into()));
        }
        let trajectory = extract(&tr, &x, report.converged())?;
        stage_reports.push(("warm".to_string(), report.clone()));
        return Ok(SolvedOcp {
            trajectory,
            report,
            stage_reports,
        });
    }

    let guess = initial_guess(spec)?;

    // stage (i): track the kinematic guess under the true dynamics; the
    // quadratic-penalty loop of the solver plays the role of the slack
    // relaxation, pulling the guess onto the feasible manifold
    let weights_track = StageWeights {
        objective_on: false,
        tracking: 10.0,
        fict_penalty: 0.0,
        reg: 1e-4,
        fict_bound: 0.0,
    };
    let pins_track = PinSet {
        induction: false,
        durations: true,
        radius: true,
        theta_e: true,
        phi0: true,
        diameters: true,
    };
    let tr_track = Transcription::new(spec, &guess, false, weights_track, pins_track)?;
    let loose = SolveOptions {
        kkt_tol: 1e-4,
        constraint_tol: 1e-7,
        max_iter: opts.stage_max_iter,
        log_file: stage_log(opts, "stage1_track"),
        ..opts.solver.clone()
    };
    let (x_track, report) = solve(&tr_track.nlp(), &tr_track.guess_scaled, &loose);
    if report.status == SolveStatus::NumericalFailure {
        return Err(Error::SolverFailure("tracking stage failed numerically".into()));
    }
    stage_reports.push(("stage1_track".to_string(), report.clone()));

    // stage (ii): free the trajectory shape under the physical objective
    let tr_final = Transcription::new(
        spec,
        &guess,
        false,
        StageWeights::nominal(spec.reg_weight),
        PinSet::default(),
    )?;
    let solver_opts = SolveOptions {
        log_file: stage_log(opts, "stage2_power"),
        ..opts.solver.clone()
    };
    let (x, report) = solve(&tr_final.nlp(), &x_track, &solver_opts);
    if report.status == SolveStatus::NumericalFailure {
        return Err(Error::SolverFailure("final stage failed numerically".into()));
    }
    let trajectory = extract(&tr_final, &x, report.converged())?;
    stage_reports.push(("stage2_power".to_string(), report.clone()));

    Ok(SolvedOcp {
        trajectory,
        report,
        stage_reports,
    })
}
