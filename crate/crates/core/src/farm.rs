//! Closed-form farm analysis: packing counts, geometric losses, theoretical
//! maximum power density and the conventional-turbine baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Betz limit 16/27.
pub const BETZ_LIMIT: f64 = 16.0 / 27.0;

/// Circular park layout parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarmLayout {
    /// Park diameter (m).
    pub park_diameter: f64,
    /// Per-unit ground circle diameter (m).
    pub unit_diameter: f64,
    /// Circle packing density.
    pub rho_circle: f64,
    /// Shared tether elevation angle (rad).
    pub theta_e: f64,
    /// Shortest tether length in the park (m).
    pub l_min: f64,
    /// Power extraction efficiency of a single unit (Betz limit by default).
    pub eta_betz: f64,
}

impl Default for FarmLayout {
    fn default() -> Self {
        Self {
            park_diameter: 1000.0,
            unit_diameter: 160.0,
            rho_circle: 0.7,
            theta_e: 45f64.to_radians(),
            l_min: 420.0,
            eta_betz: BETZ_LIMIT,
        }
    }
}

impl FarmLayout {
    pub fn validate(&self) -> Result<()> {
        if !(self.unit_diameter > 0.0 && self.unit_diameter <= self.park_diameter) {
            return Err(Error::InvalidParameter(
                "unit diameter must satisfy 0 < d <= D".into(),
            ));
        }
        if !(self.rho_circle > 0.0 && self.rho_circle <= 1.0) {
            return Err(Error::InvalidParameter("rho_circle must be in (0, 1]".into()));
        }
        if !(self.theta_e > 0.0 && self.theta_e < std::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidParameter("theta_e must be in (0, pi/2)".into()));
        }
        if self.l_min < 0.0 {
            return Err(Error::InvalidParameter("l_min must be >= 0".into()));
        }
        if !(self.eta_betz > 0.0 && self.eta_betz <= BETZ_LIMIT + 1e-12) {
            return Err(Error::InvalidParameter(
                "eta_betz must be in (0, 16/27]".into(),
            ));
        }
        Ok(())
    }
}

/// Closed-form farm output quantities.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FarmEstimate {
    pub n_units: u64,
    pub eta_tot: f64,
    /// Theoretical maximum power density (W/m^2).
    pub pd_max: f64,
    pub ellipse_width: f64,
    pub ellipse_height: f64,
    pub lowest_altitude: f64,
    pub extended_diameter: f64,
}

/// Number of units that fit the park at the given packing density, floored
/// to a realizable integer.
pub fn unit_count(layout: &FarmLayout) -> Result<u64> {
    layout.validate()?;
    let ratio = layout.park_diameter / layout.unit_diameter;
    let n = (layout.rho_circle * ratio * ratio).floor();
    if n < 1.0 {
        return Err(Error::InfeasibleLayout(format!(
            "packing {:.3} with d/D = {:.3} admits no whole unit",
            layout.rho_circle,
            1.0 / ratio
        )));
    }
    Ok(n as u64)
}

/// Combined efficiency: extraction limit, elevation-tilt geometry, packing.
pub fn total_efficiency(theta_e: f64, rho_circle: f64, eta_betz: f64) -> f64 {
    eta_betz * theta_e.cos() * theta_e.sin() * rho_circle
}

/// Maximum power density (W/m^2) of a farm with total efficiency `eta_tot`
/// in wind of speed `v` and density `rho_air`.
pub fn pd_max(eta_tot: f64, rho_air: f64, v: f64) -> f64 {
    0.5 * eta_tot * rho_air * v * v * v
}

/// Power density (W/m^2) of a conventional turbine farm with rotors spaced
/// `spacing_diameters` rotor diameters apart, packed at `rho_circle`.
///
/// Rotor discs of area pi D_r^2/4 sit in ground circles of diameter
/// spacing * D_r, so the area efficiency is rho_circle / spacing^2.
pub fn conventional_baseline(
    spacing_diameters: u32,
    rho_circle: f64,
    eta_betz: f64,
    rho_air: f64,
    v: f64,
) -> f64 {
    let spacing = spacing_diameters as f64;
    let eta_tot = eta_betz * rho_circle / (spacing * spacing);
    pd_max(eta_tot, rho_air, v)
}

/// Geometry of the inclined flight ellipse implied by the layout.
pub fn sky_geometry(layout: &FarmLayout) -> (f64, f64, f64, f64) {
    let d = layout.park_diameter;
    let (sin_e, cos_e) = layout.theta_e.sin_cos();
    let ellipse_width = d;
    let ellipse_height = d * cos_e * sin_e;
    let lowest_altitude = layout.l_min * sin_e;
    let extended_diameter = d + 2.0 * layout.l_min * cos_e;
    (ellipse_width, ellipse_height, lowest_altitude, extended_diameter)
}

/// Full closed-form estimate for a layout in the given wind.
pub fn estimate(layout: &FarmLayout, rho_air: f64, v: f64) -> Result<FarmEstimate> {
    let n_units = unit_count(layout)?;
    let eta_tot = total_efficiency(layout.theta_e, layout.rho_circle, layout.eta_betz);
    let (ellipse_width, ellipse_height, lowest_altitude, extended_diameter) =
        sky_geometry(layout);
    Ok(FarmEstimate {
        n_units,
        eta_tot,
        pd_max: pd_max(eta_tot, rho_air, v),
        ellipse_width,
        ellipse_height,
        lowest_altitude,
        extended_diameter,
    })
}
