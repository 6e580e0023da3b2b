//! Periodic power-density-optimal control problem: specification, decision
//! vector layout, initial guess, Radau transcription, homotopy driver and
//! solution extraction.

mod extract;
mod guess;
mod homotopy;
mod layout;
mod transcription;

pub use extract::extract;
pub use guess::initial_guess;
pub use homotopy::{solve_ocp, HomotopyOptions, SolvedOcp};
pub use layout::Layout;
pub use transcription::{StageWeights, Transcription};

use serde::{Deserialize, Serialize};

use crate::constraints::EnvelopeLimits;
use crate::error::{Error, Result};
use crate::induction::CycleAverages;
use crate::vehicle::{AlgebraicState, ControlInput, FreeParams, SystemModel, SystemState};

/// What the optimizer maximizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    /// Average power over the occupied ground circle, scaled by the packing
    /// density (W/m^2).
    PowerDensity,
    /// Average power per total wing area (used in the radius sweeps).
    PowerPerWingArea,
}

/// Bounds on the free parameters of the problem.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBounds {
    /// Ground-circle radius bounds (m); the lower bound is additionally
    /// floored at three wing spans.
    pub radius: (f64, f64),
    /// Elevation angle bounds (rad).
    pub theta_e: (f64, f64),
    /// Tether diameter bounds (m), main and secondary.
    pub tether_diameter: (f64, f64),
    /// Secondary tether length bounds in wing spans.
    pub secondary_length_spans: (f64, f64),
    /// Per-phase duration bounds (s).
    pub phase_duration: (f64, f64),
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            radius: (0.0, 300.0), // lower bound floored at 3 b
            theta_e: (10f64.to_radians(), 80f64.to_radians()),
            tether_diameter: (1e-3, 30e-3),
            secondary_length_spans: (2.0, 20.0),
            phase_duration: (2.5, 300.0),
        }
    }
}

/// Full problem specification for one optimization run.
#[derive(Clone, Debug)]
pub struct OcpSpec {
    pub model: SystemModel,
    pub limits: EnvelopeLimits,
    /// Mesh intervals over the period.
    pub n_intervals: usize,
    /// Intervals assigned to the reel-out phase.
    pub n_reel_out: usize,
    /// Radau collocation degree.
    pub degree: usize,
    pub objective: ObjectiveKind,
    /// Fix the ground-circle radius (sweep mode); removes R from the
    /// decision vector.
    pub fixed_radius: Option<f64>,
    pub rho_circle: f64,
    /// Control-rate regularization weight.
    pub reg_weight: f64,
    pub bounds: ParamBounds,
}

impl OcpSpec {
    /// Defaults for the given model: 40 intervals for dual systems, 100 for
    /// single (whose optimal period is longer), degree 4, even phase split.
    pub fn new(model: SystemModel) -> Self {
        let n_intervals = match model.topology.kind {
            crate::vehicle::TopologyKind::Single => 100,
            crate::vehicle::TopologyKind::Dual => 40,
        };
        Self {
            model,
            limits: EnvelopeLimits::default(),
            n_intervals,
            n_reel_out: n_intervals / 2,
            degree: 4,
            objective: ObjectiveKind::PowerDensity,
            fixed_radius: None,
            rho_circle: 0.7,
            reg_weight: 1e-8,
            bounds: ParamBounds::default(),
        }
    }

    pub fn with_mesh(mut self, n_intervals: usize) -> Self {
        self.n_intervals = n_intervals;
        self.n_reel_out = n_intervals / 2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.aircraft.validate()?;
        self.model.tether.validate()?;
        self.model.wind.validate()?;
        self.model.atmosphere.validate()?;
        self.limits.validate()?;
        if self.n_intervals < 2 {
            return Err(Error::InvalidParameter("need at least 2 intervals".into()));
        }
        if !(1..self.n_intervals).contains(&self.n_reel_out) {
            return Err(Error::InvalidParameter(
                "reel-out intervals must be in [1, n_intervals)".into(),
            ));
        }
        if !(1..=5).contains(&self.degree) {
            return Err(Error::InvalidParameter("degree must be in [1, 5]".into()));
        }
        let r_min = 3.0 * self.model.aircraft.span;
        if let Some(r) = self.fixed_radius {
            if r < r_min {
                return Err(Error::InvalidParameter(format!(
                    "fixed radius {r:.1} m below the minimum 3 b = {r_min:.1} m"
                )));
            }
        }
        if !(self.rho_circle > 0.0 && self.rho_circle <= 1.0) {
            return Err(Error::InvalidParameter("rho_circle must be in (0,1]".into()));
        }
        Ok(())
    }

    /// Radius lower bound after flooring at three spans.
    pub fn radius_bounds(&self) -> (f64, f64) {
        (
            self.bounds.radius.0.max(3.0 * self.model.aircraft.span),
            self.bounds.radius.1,
        )
    }
}

/// Discretized periodic solution of the OCP.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    /// Absolute time of every collocation node.
    pub times: Vec<f64>,
    /// True while the node belongs to the reel-out phase.
    pub reel_out: Vec<bool>,
    /// Quadrature weight (s) of every collocation node.
    pub quad_weights: Vec<f64>,
    /// State at every collocation node.
    pub states: Vec<SystemState>,
    /// Control at every collocation node.
    pub controls: Vec<ControlInput>,
    /// Tension multipliers at every collocation node.
    pub multipliers: Vec<AlgebraicState>,
    /// States at the interval boundaries (n_intervals + 1 entries).
    pub boundary_states: Vec<SystemState>,
    pub free_params: FreeParams,
    pub induction: f64,
    pub t_reel_out: f64,
    pub t_reel_in: f64,
    pub radius: f64,
    pub theta_e: f64,
    pub phi0: f64,
    /// Cycle-average power (W).
    pub avg_power: f64,
    /// rho_circle * avg_power / (pi R^2), W/m^2.
    pub power_density: f64,
    /// avg_power / (n_aircraft * wing area), W/m^2.
    pub power_per_wing_area: f64,
    pub cycle: CycleAverages,
}

impl Trajectory {
    pub fn period(&self) -> f64 {
        self.t_reel_out + self.t_reel_in
    }

    /// Worst absolute periodicity defect over the packed state.
    pub fn periodicity_defect(&self, model: &SystemModel) -> f64 {
        let first = model.pack_state(&self.boundary_states[0]);
        let last = model.pack_state(self.boundary_states.last().unwrap());
        first
            .iter()
            .zip(&last)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
