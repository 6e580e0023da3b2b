//! Power-density-optimal periodic flight trajectories for single- and
//! dual-aircraft airborne wind energy systems under cylindrical airspace
//! constraints, plus closed-form power-density estimates for vertical AWE
//! farms.
//!
//! The crate is organized around the analysis pipeline:
//!
//! * [`atmosphere`] — wind shear and air density profiles
//! * [`farm`] — closed-form park packing, losses and power density
//! * [`vehicle`] — tethered point-mass system dynamics (implicit DAE)
//! * [`induction`] — cycle-averaged momentum-balance induction model
//! * [`constraints`] — flight envelope and flight-cylinder constraints
//! * [`collocation`] — Radau collocation schemes
//! * [`sim`] — collocation-based integrator for validation runs
//! * [`ocp`] — transcription of the periodic optimal control problem
//! * [`nlp`] — sparse NLP types, the reference solver, derivative checks
//! * [`experiments`] — configuration, study drivers and result files

pub mod atmosphere;
pub mod collocation;
pub mod constraints;
pub mod error;
pub mod experiments;
pub mod farm;
pub mod induction;
pub mod math;
pub mod nlp;
pub mod ocp;
pub mod sim;
pub mod vehicle;

pub use error::{Error, Result};
