//! Tethered-system dynamics: point-mass aircraft on straight inelastic
//! tethers, with tether drag, tether mass, and winch power output.
//!
//! The system is an index-reduced DAE. States are node positions and
//! velocities in an inertial frame (x downwind, z up), the main tether
//! length and reel speed, and per-aircraft lift coefficient and bank angle.
//! Controls are the rates of those slow states plus the reel acceleration.
//! Algebraic variables are the tension multipliers of the tether length
//! constraints; the residual closes with the twice-differentiated
//! constraints.

use serde::{Deserialize, Serialize};

use crate::atmosphere::{air_density_s, wind_speed_s, IsaAtmosphere, WindProfile};
use crate::error::{Error, Result};
use crate::math::{Scalar, V3};

/// Below this apparent wind speed the aero force is the zero limit.
const AERO_SPEED_EPS: f64 = 1e-9;
/// Wind shear is evaluated no lower than this altitude.
const WIND_ALTITUDE_FLOOR: f64 = 1.0;

/// Point-mass aircraft parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AircraftParams {
    /// Wing span (m).
    pub span: f64,
    /// Wing area (m^2).
    pub wing_area: f64,
    /// Mass (kg).
    pub mass: f64,
    pub aspect_ratio: f64,
    pub cl_min: f64,
    pub cl_max: f64,
    /// Parasitic drag coefficient.
    pub cd0: f64,
    pub e_oswald: f64,
    /// Mass upscaling exponent.
    pub kappa: f64,
}

impl AircraftParams {
    /// Reference rigid-wing aircraft: 5.5 m span, 36.5 kg.
    pub fn reference() -> Self {
        let span = 5.5;
        let aspect_ratio = 10.0;
        Self {
            span,
            wing_area: span * span / aspect_ratio,
            mass: 36.5,
            aspect_ratio,
            cl_min: -0.2,
            cl_max: 1.5,
            cd0: 0.03,
            e_oswald: 0.8,
            kappa: 2.4,
        }
    }

    /// Upscaled copy of this aircraft at wing span `b`, mass following the
    /// upscaling law and wing area preserving the aspect ratio.
    pub fn scaled_to_span(&self, b: f64) -> Result<Self> {
        let (mass, _) = scale_mass_inertia(b, self, self.kappa)?;
        Ok(Self {
            span: b,
            wing_area: b * b / self.aspect_ratio,
            mass,
            ..*self
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.span <= 0.0 || self.wing_area <= 0.0 || self.mass <= 0.0 {
            return Err(Error::InvalidParameter(
                "span, wing area and mass must be > 0".into(),
            ));
        }
        if self.cl_min >= self.cl_max {
            return Err(Error::InvalidParameter("cl_min must be < cl_max".into()));
        }
        if self.cd0 <= 0.0 {
            return Err(Error::InvalidParameter("cd0 must be > 0".into()));
        }
        Ok(())
    }
}

/// Tether material and sizing parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TetherParams {
    /// Main tether diameter (m); also the sweep start value of the free
    /// parameter vector.
    pub diameter: f64,
    /// Perpendicular-flow drag coefficient.
    pub cd_tether: f64,
    /// Material density (kg/m^3).
    pub material_density: f64,
    /// Yield stress (Pa).
    pub yield_stress: f64,
    pub safety_factor: f64,
}

impl Default for TetherParams {
    fn default() -> Self {
        Self {
            diameter: 5e-3,
            cd_tether: 1.0,
            material_density: 970.0,
            yield_stress: 1.0e9,
            safety_factor: 3.0,
        }
    }
}

impl TetherParams {
    pub fn validate(&self) -> Result<()> {
        if self.diameter <= 0.0 {
            return Err(Error::InvalidParameter("tether diameter must be > 0".into()));
        }
        if self.yield_stress <= 0.0 {
            return Err(Error::InvalidParameter("yield stress must be > 0".into()));
        }
        if self.safety_factor < 1.0 {
            return Err(Error::InvalidParameter("safety factor must be >= 1".into()));
        }
        Ok(())
    }

    /// Maximum admissible tension (N) at the given diameter.
    pub fn max_tension(&self, diameter: f64) -> f64 {
        self.yield_stress * std::f64::consts::PI * diameter * diameter
            / (4.0 * self.safety_factor)
    }
}

/// Single- or dual-aircraft arrangement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    /// One aircraft on the main tether.
    Single,
    /// Two aircraft on secondary tethers joined to the main tether at a
    /// juncture node.
    Dual,
}

/// System arrangement plus nominal secondary tether geometry (the secondary
/// length and diameter are free parameters of the optimization; the values
/// here seed them).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemTopology {
    pub kind: TopologyKind,
    /// Secondary tether length (m); dual systems only.
    pub secondary_length: f64,
    /// Secondary tether diameter (m); dual systems only.
    pub secondary_diameter: f64,
}

impl SystemTopology {
    pub fn single() -> Self {
        Self {
            kind: TopologyKind::Single,
            secondary_length: 0.0,
            secondary_diameter: 0.0,
        }
    }

    pub fn dual(secondary_length: f64, secondary_diameter: f64) -> Self {
        Self {
            kind: TopologyKind::Dual,
            secondary_length,
            secondary_diameter,
        }
    }

    pub fn n_aircraft(&self) -> usize {
        match self.kind {
            TopologyKind::Single => 1,
            TopologyKind::Dual => 2,
        }
    }
}

/// Free system parameters optimized alongside the trajectory.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FreeParams {
    /// Main tether diameter (m).
    pub tether_diameter: f64,
    /// Secondary tether diameter (m); dual systems only.
    pub secondary_diameter: f64,
    /// Secondary tether length (m); dual systems only.
    pub secondary_length: f64,
}

/// Non-minimal coordinates of the tethered system.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SystemState {
    /// Node positions (m); dual systems order the juncture first.
    pub positions: Vec<[f64; 3]>,
    /// Node velocities (m/s), same order.
    pub velocities: Vec<[f64; 3]>,
    /// Main tether length (m).
    pub tether_length: f64,
    /// Reel-out speed (m/s), positive when paying out.
    pub reel_speed: f64,
    /// Lift coefficient per aircraft.
    pub lift_coeff: Vec<f64>,
    /// Bank angle per aircraft (rad).
    pub bank: Vec<f64>,
}

/// Rates driving the slow control states plus the reel acceleration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ControlInput {
    pub cl_rate: Vec<f64>,
    pub bank_rate: Vec<f64>,
    pub reel_accel: f64,
}

/// Tension multipliers, one per tether segment (main first).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AlgebraicState {
    pub multipliers: Vec<f64>,
}

/// Complete dynamic model shared by simulation and transcription.
#[derive(Clone, Debug)]
pub struct SystemModel {
    pub topology: SystemTopology,
    pub aircraft: AircraftParams,
    pub tether: TetherParams,
    pub wind: WindProfile,
    pub atmosphere: IsaAtmosphere,
    /// Unit vector the freestream blows along (x by convention).
    pub wind_dir: [f64; 3],
}

/// Packed sizes and offsets of the state/control/algebraic vectors.
#[derive(Clone, Copy, Debug)]
pub struct Dims {
    pub n_nodes: usize,
    pub n_aircraft: usize,
    pub n_x: usize,
    pub n_u: usize,
    pub n_z: usize,
}

impl SystemModel {
    pub fn new(
        topology: SystemTopology,
        aircraft: AircraftParams,
        tether: TetherParams,
        wind: WindProfile,
        atmosphere: IsaAtmosphere,
    ) -> Self {
        Self {
            topology,
            aircraft,
            tether,
            wind,
            atmosphere,
            wind_dir: [1.0, 0.0, 0.0],
        }
    }

    pub fn dims(&self) -> Dims {
        let n_aircraft = self.topology.n_aircraft();
        let n_nodes = match self.topology.kind {
            TopologyKind::Single => 1,
            TopologyKind::Dual => 3,
        };
        Dims {
            n_nodes,
            n_aircraft,
            n_x: 6 * n_nodes + 2 + 2 * n_aircraft,
            n_u: 2 * n_aircraft + 1,
            n_z: match self.topology.kind {
                TopologyKind::Single => 1,
                TopologyKind::Dual => 3,
            },
        }
    }

    /// Aircraft node indices (the juncture, when present, is node 0).
    pub fn aircraft_nodes(&self) -> std::ops::Range<usize> {
        match self.topology.kind {
            TopologyKind::Single => 0..1,
            TopologyKind::Dual => 1..3,
        }
    }

    pub fn nominal_free_params(&self) -> FreeParams {
        FreeParams {
            tether_diameter: self.tether.diameter,
            secondary_diameter: self.topology.secondary_diameter,
            secondary_length: self.topology.secondary_length,
        }
    }

    // packed state offsets
    pub fn idx_pos(&self, node: usize, c: usize) -> usize {
        3 * node + c
    }
    pub fn idx_vel(&self, node: usize, c: usize) -> usize {
        3 * self.dims().n_nodes + 3 * node + c
    }
    pub fn idx_lt(&self) -> usize {
        6 * self.dims().n_nodes
    }
    pub fn idx_ldt(&self) -> usize {
        6 * self.dims().n_nodes + 1
    }
    pub fn idx_cl(&self, k: usize) -> usize {
        6 * self.dims().n_nodes + 2 + 2 * k
    }
    pub fn idx_bank(&self, k: usize) -> usize {
        6 * self.dims().n_nodes + 2 + 2 * k + 1
    }

    pub fn pack_state(&self, s: &SystemState) -> Vec<f64> {
        let d = self.dims();
        let mut x = vec![0.0; d.n_x];
        for node in 0..d.n_nodes {
            for c in 0..3 {
                x[self.idx_pos(node, c)] = s.positions[node][c];
                x[self.idx_vel(node, c)] = s.velocities[node][c];
            }
        }
        x[self.idx_lt()] = s.tether_length;
        x[self.idx_ldt()] = s.reel_speed;
        for k in 0..d.n_aircraft {
            x[self.idx_cl(k)] = s.lift_coeff[k];
            x[self.idx_bank(k)] = s.bank[k];
        }
        x
    }

    pub fn unpack_state(&self, x: &[f64]) -> SystemState {
        let d = self.dims();
        let mut positions = Vec::with_capacity(d.n_nodes);
        let mut velocities = Vec::with_capacity(d.n_nodes);
        for node in 0..d.n_nodes {
            positions.push([
                x[self.idx_pos(node, 0)],
                x[self.idx_pos(node, 1)],
                x[self.idx_pos(node, 2)],
            ]);
            velocities.push([
                x[self.idx_vel(node, 0)],
                x[self.idx_vel(node, 1)],
                x[self.idx_vel(node, 2)],
            ]);
        }
        SystemState {
            positions,
            velocities,
            tether_length: x[self.idx_lt()],
            reel_speed: x[self.idx_ldt()],
            lift_coeff: (0..d.n_aircraft).map(|k| x[self.idx_cl(k)]).collect(),
            bank: (0..d.n_aircraft).map(|k| x[self.idx_bank(k)]).collect(),
        }
    }

    pub fn pack_control(&self, u: &ControlInput) -> Vec<f64> {
        let d = self.dims();
        let mut v = Vec::with_capacity(d.n_u);
        for k in 0..d.n_aircraft {
            v.push(u.cl_rate[k]);
            v.push(u.bank_rate[k]);
        }
        v.push(u.reel_accel);
        v
    }
}

/// Mass upscaling to wing span `b` from a reference aircraft: returns the
/// scaled mass (kg) and the dimensionless inertia scale factor.
pub fn scale_mass_inertia(b: f64, reference: &AircraftParams, kappa: f64) -> Result<(f64, f64)> {
    if b <= 0.0 {
        return Err(Error::Domain("wing span must be > 0".into()));
    }
    let ratio = b / reference.span;
    Ok((reference.mass * ratio.powf(kappa), ratio.powf(kappa + 2.0)))
}

/// Values of the free parameter vector lifted into the scalar type.
#[derive(Clone, Copy)]
pub struct ThetaS<S> {
    pub d_main: S,
    pub d_sec: S,
    pub l_sec: S,
}

impl<S: Scalar> ThetaS<S> {
    pub fn constant(theta: &FreeParams) -> Self {
        Self {
            d_main: S::c(theta.tether_diameter),
            d_sec: S::c(theta.secondary_diameter),
            l_sec: S::c(theta.secondary_length),
        }
    }
}

#[inline]
fn wind_at<S: Scalar>(model: &SystemModel, z: S) -> S {
    let z_eff = if z.value() < WIND_ALTITUDE_FLOOR {
        S::c(WIND_ALTITUDE_FLOOR)
    } else {
        z
    };
    wind_speed_s(&model.wind, z_eff)
}

/// Aerodynamic force on one aircraft: lift rotated by the bank angle about
/// the apparent wind axis, drag along the apparent wind, plus the
/// equivalent drag of the attached tether segment lumped at this node.
///
/// `tether_dir` points from the inner attachment toward the aircraft.
#[allow(clippy::too_many_arguments)]
fn aero_force<S: Scalar>(
    model: &SystemModel,
    q: &V3<S>,
    qd: &V3<S>,
    cl: S,
    bank: S,
    induction: S,
    tether_dir: &V3<S>,
    tether_drag_area: S, // d * l of the segment whose drag lumps here
) -> Result<V3<S>> {
    let ac = &model.aircraft;
    let rho = air_density_s(&model.atmosphere, q.z());
    let u_inf = wind_at(model, q.z());
    let wind = V3::from_f64(model.wind_dir).scale((S::one() - induction) * u_inf);
    let u_a = wind - *qd;

    let speed = u_a.norm_eps(AERO_SPEED_EPS);
    if speed.value() <= 10.0 * AERO_SPEED_EPS {
        return Ok(V3::zero());
    }

    // lift frame: e2 normal to the (apparent wind, tether) plane, e1
    // completing the triad; singular when the apparent wind blows along
    // the tether
    let cross = u_a.cross(tether_dir);
    let cross_norm = cross.norm_eps(AERO_SPEED_EPS);
    if cross_norm.value() < 1e-6 * speed.value() {
        return Err(Error::SingularAeroFrame {
            cross: cross_norm.value(),
            speed: speed.value(),
        });
    }
    let e2 = cross.scale(S::one() / cross_norm);
    let e_drag = u_a.scale(S::one() / speed);
    let e1 = e2.cross(&e_drag);

    let q_dyn = S::c(0.5) * rho * speed * speed;
    let cd = S::c(ac.cd0)
        + cl * cl / S::c(std::f64::consts::PI * ac.aspect_ratio * ac.e_oswald);

    let lift = (e1.scale(bank.cos()) + e2.scale(bank.sin())).scale(q_dyn * S::c(ac.wing_area) * cl);
    let drag = e_drag.scale(q_dyn * S::c(ac.wing_area) * cd);

    // straight-rod equivalent drag of the tether segment, local flow
    let tether_drag = u_a.scale(
        S::c(0.125 * model.tether.cd_tether) * rho * tether_drag_area * speed,
    );

    Ok(lift + drag + tether_drag)
}

/// Tether drag lumped at a non-flying node (the juncture).
fn node_tether_drag<S: Scalar>(
    model: &SystemModel,
    q: &V3<S>,
    qd: &V3<S>,
    induction: S,
    drag_area: S,
) -> V3<S> {
    let rho = air_density_s(&model.atmosphere, q.z());
    let u_inf = wind_at(model, q.z());
    let wind = V3::from_f64(model.wind_dir).scale((S::one() - induction) * u_inf);
    let u_a = wind - *qd;
    let speed = u_a.norm_eps(AERO_SPEED_EPS);
    u_a.scale(S::c(0.125 * model.tether.cd_tether) * rho * drag_area * speed)
}

/// Per-node lumped masses: aircraft mass plus half of each adjoining tether
/// segment's mass (the ground-side half of the main tether stays on the
/// winch).
fn node_masses<S: Scalar>(model: &SystemModel, l_t: S, theta: &ThetaS<S>) -> Vec<S> {
    let rho_m = S::c(model.tether.material_density * std::f64::consts::FRAC_PI_4);
    let m_main = rho_m * theta.d_main * theta.d_main * l_t;
    match model.topology.kind {
        TopologyKind::Single => vec![S::c(model.aircraft.mass) + m_main * S::c(0.5)],
        TopologyKind::Dual => {
            let m_sec = rho_m * theta.d_sec * theta.d_sec * theta.l_sec;
            vec![
                m_main * S::c(0.5) + m_sec, // juncture: half main + half of both secondaries
                S::c(model.aircraft.mass) + m_sec * S::c(0.5),
                S::c(model.aircraft.mass) + m_sec * S::c(0.5),
            ]
        }
    }
}

/// Total force on every node (aero, gravity, tension, tether drag).
fn node_forces<S: Scalar>(
    model: &SystemModel,
    x: &[S],
    z: &[S],
    theta: &ThetaS<S>,
    induction: S,
) -> Result<Vec<V3<S>>> {
    let g = model.atmosphere.g;
    let l_t = x[model.idx_lt()];
    let masses = node_masses(model, l_t, theta);

    let pos = |node: usize| -> V3<S> {
        V3::new(
            x[model.idx_pos(node, 0)],
            x[model.idx_pos(node, 1)],
            x[model.idx_pos(node, 2)],
        )
    };
    let vel = |node: usize| -> V3<S> {
        V3::new(
            x[model.idx_vel(node, 0)],
            x[model.idx_vel(node, 1)],
            x[model.idx_vel(node, 2)],
        )
    };

    match model.topology.kind {
        TopologyKind::Single => {
            let q = pos(0);
            let qd = vel(0);
            let lam = z[0];
            let tether_dir = q.scale(S::one() / q.norm_eps(1e-12));
            let mut f = aero_force(
                model,
                &q,
                &qd,
                x[model.idx_cl(0)],
                x[model.idx_bank(0)],
                induction,
                &tether_dir,
                theta.d_main * l_t,
            )?;
            // gravity + tension
            f.0[2] -= masses[0] * S::c(g);
            f = f - q.scale(lam);
            Ok(vec![f])
        }
        TopologyKind::Dual => {
            let qj = pos(0);
            let qdj = vel(0);
            let lam_m = z[0];

            // juncture: main tension, secondary reactions, gravity, main
            // tether drag
            let mut fj = node_tether_drag(model, &qj, &qdj, induction, theta.d_main * l_t);
            fj.0[2] -= masses[0] * S::c(g);
            fj = fj - qj.scale(lam_m);

            let mut forces = vec![V3::zero(); 3];
            for (slot, node) in [(1usize, 1usize), (2, 2)] {
                let qk = pos(node);
                let qdk = vel(node);
                let lam_k = z[slot];
                let rel = qk - qj;
                let tether_dir = rel.scale(S::one() / rel.norm_eps(1e-12));
                let k = node - 1;
                let mut fk = aero_force(
                    model,
                    &qk,
                    &qdk,
                    x[model.idx_cl(k)],
                    x[model.idx_bank(k)],
                    induction,
                    &tether_dir,
                    theta.d_sec * theta.l_sec,
                )?;
                fk.0[2] -= masses[node] * S::c(g);
                fk = fk - rel.scale(lam_k);
                forces[node] = fk;
                fj = fj + rel.scale(lam_k);
            }
            forces[0] = fj;
            Ok(forces)
        }
    }
}

/// Implicit DAE residual in the time-scaled form used by collocation:
///
///   out = A(x) * w + h * r(x, u, z)
///
/// where `w` stands for h * xdot. With `h = 1` and `w = xdot` this is the
/// plain residual F(xdot, x, u, z, theta, a). The final `n_z` rows are the
/// twice-differentiated tether length constraints.
#[allow(clippy::too_many_arguments)]
pub fn dae_residual_scaled<S: Scalar>(
    model: &SystemModel,
    w: &[S],
    x: &[S],
    u: &[S],
    z: &[S],
    theta: &ThetaS<S>,
    induction: S,
    h: S,
    out: &mut [S],
) -> Result<()> {
    let d = model.dims();
    debug_assert_eq!(w.len(), d.n_x);
    debug_assert_eq!(x.len(), d.n_x);
    debug_assert_eq!(u.len(), d.n_u);
    debug_assert_eq!(z.len(), d.n_z);
    debug_assert_eq!(out.len(), d.n_x + d.n_z);

    let forces = node_forces(model, x, z, theta, induction)?;
    let l_t = x[model.idx_lt()];
    let masses = node_masses(model, l_t, theta);

    // kinematic rows: w_pos - h qdot
    for node in 0..d.n_nodes {
        for c in 0..3 {
            out[model.idx_pos(node, c)] =
                w[model.idx_pos(node, c)] - h * x[model.idx_vel(node, c)];
        }
    }
    // Newton rows: m w_vel - h F
    for node in 0..d.n_nodes {
        for c in 0..3 {
            out[model.idx_vel(node, c)] =
                masses[node] * w[model.idx_vel(node, c)] - h * forces[node].0[c];
        }
    }
    // integrator chains
    let reel_accel = u[d.n_u - 1];
    out[model.idx_lt()] = w[model.idx_lt()] - h * x[model.idx_ldt()];
    out[model.idx_ldt()] = w[model.idx_ldt()] - h * reel_accel;
    for k in 0..d.n_aircraft {
        out[model.idx_cl(k)] = w[model.idx_cl(k)] - h * u[2 * k];
        out[model.idx_bank(k)] = w[model.idx_bank(k)] - h * u[2 * k + 1];
    }

    // index-reduced constraint rows: q . wdot_vel + h (qdot . qdot - ...)
    let pos_v = |node: usize| {
        V3::new(
            x[model.idx_pos(node, 0)],
            x[model.idx_pos(node, 1)],
            x[model.idx_pos(node, 2)],
        )
    };
    let vel_v = |node: usize| {
        V3::new(
            x[model.idx_vel(node, 0)],
            x[model.idx_vel(node, 1)],
            x[model.idx_vel(node, 2)],
        )
    };
    let wvel_v = |node: usize| {
        V3::new(
            w[model.idx_vel(node, 0)],
            w[model.idx_vel(node, 1)],
            w[model.idx_vel(node, 2)],
        )
    };

    let ldt = x[model.idx_ldt()];
    match model.topology.kind {
        TopologyKind::Single => {
            let q = pos_v(0);
            let qd = vel_v(0);
            let wv = wvel_v(0);
            out[d.n_x] =
                q.dot(&wv) + h * (qd.norm_sq() - ldt * ldt - l_t * reel_accel);
        }
        TopologyKind::Dual => {
            let qj = pos_v(0);
            let qdj = vel_v(0);
            let wvj = wvel_v(0);
            out[d.n_x] =
                qj.dot(&wvj) + h * (qdj.norm_sq() - ldt * ldt - l_t * reel_accel);
            for node in 1..3 {
                let rel = pos_v(node) - qj;
                let rel_d = vel_v(node) - qdj;
                let rel_w = wvel_v(node) - wvj;
                out[d.n_x + node] = rel.dot(&rel_w) + h * rel_d.norm_sq();
            }
        }
    }
    Ok(())
}

/// Plain DAE residual F(xdot, x, u, z, theta, a) = 0.
pub fn dae_residual(
    model: &SystemModel,
    xdot: &[f64],
    x: &[f64],
    u: &[f64],
    z: &[f64],
    theta: &FreeParams,
    induction: f64,
) -> Result<Vec<f64>> {
    let d = model.dims();
    let mut out = vec![0.0; d.n_x + d.n_z];
    dae_residual_scaled(
        model,
        xdot,
        x,
        u,
        z,
        &ThetaS::constant(theta),
        induction,
        1.0,
        &mut out,
    )?;
    Ok(out)
}

/// Position- and velocity-level consistency residuals C(x).
///
/// Position level: |q|^2 - l^2 per tether segment; velocity level: their
/// time derivatives.
pub fn consistency(model: &SystemModel, x: &[f64], theta: &FreeParams) -> Vec<f64> {
    let l_t = x[model.idx_lt()];
    let ldt = x[model.idx_ldt()];
    let pos = |node: usize| {
        V3::new(
            x[model.idx_pos(node, 0)],
            x[model.idx_pos(node, 1)],
            x[model.idx_pos(node, 2)],
        )
    };
    let vel = |node: usize| {
        V3::new(
            x[model.idx_vel(node, 0)],
            x[model.idx_vel(node, 1)],
            x[model.idx_vel(node, 2)],
        )
    };
    match model.topology.kind {
        TopologyKind::Single => {
            let q: V3<f64> = pos(0);
            let qd = vel(0);
            vec![
                q.norm_sq() - l_t * l_t,
                2.0 * (q.dot(&qd) - l_t * ldt),
            ]
        }
        TopologyKind::Dual => {
            let qj: V3<f64> = pos(0);
            let qdj = vel(0);
            let ls = theta.secondary_length;
            let mut out = Vec::with_capacity(6);
            out.push(qj.norm_sq() - l_t * l_t);
            for node in 1..3 {
                let rel = pos(node) - qj;
                out.push(rel.norm_sq() - ls * ls);
            }
            out.push(2.0 * (qj.dot(&qdj) - l_t * ldt));
            for node in 1..3 {
                let rel = pos(node) - qj;
                let rel_d = vel(node) - qdj;
                out.push(2.0 * rel.dot(&rel_d));
            }
            out
        }
    }
}

/// Main tether tension (N) at the ground attachment: multiplier mapped to
/// force units. Negative values indicate a slack-tether constraint
/// violation and are returned as-is for diagnostics.
pub fn tether_force(model: &SystemModel, x: &[f64], z: &[f64]) -> f64 {
    z[0] * x[model.idx_lt()]
}

/// Winch power (W): positive reeling out under tension.
pub fn mechanical_power(model: &SystemModel, x: &[f64], z: &[f64]) -> f64 {
    tether_force(model, x, z) * x[model.idx_ldt()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::dense::lu_solve;
    use approx::assert_relative_eq;

    fn single_model(u_ref: f64) -> SystemModel {
        SystemModel::new(
            SystemTopology::single(),
            AircraftParams::reference(),
            TetherParams::default(),
            WindProfile {
                u_ref,
                ..WindProfile::default()
            },
            IsaAtmosphere::default(),
        )
    }

    #[test]
    fn mass_upscaling_values() {
        let re = AircraftParams::reference();
        let (m, j) = scale_mass_inertia(5.5, &re, 2.4).unwrap();
        assert_relative_eq!(m, 36.5, epsilon = 1e-12);
        assert_relative_eq!(j, 1.0, epsilon = 1e-12);
        let (m, _) = scale_mass_inertia(11.0, &re, 2.4).unwrap();
        assert_relative_eq!(m, 192.648_154_972_842_56, epsilon = 1e-9);
        let (m, _) = scale_mass_inertia(26.0, &re, 2.4).unwrap();
        assert_relative_eq!(m, 1518.302_981_305_894_7, epsilon = 1e-8);
        assert!(scale_mass_inertia(-1.0, &re, 2.4).is_err());
    }

    #[test]
    fn static_hang_balances_gravity() {
        // aircraft hanging straight below the attachment, no wind: tension
        // equals the supported weight
        let model = single_model(0.0);
        let theta = model.nominal_free_params();
        let l = 300.0;
        let m_tether = model.tether.material_density
            * std::f64::consts::FRAC_PI_4
            * theta.tether_diameter.powi(2)
            * l;
        let m_node = model.aircraft.mass + 0.5 * m_tether;
        let g = model.atmosphere.g;
        let lam = m_node * g / l; // tension force = lam * l

        let state = SystemState {
            positions: vec![[0.0, 0.0, -l]],
            velocities: vec![[0.0; 3]],
            tether_length: l,
            reel_speed: 0.0,
            lift_coeff: vec![0.0],
            bank: vec![0.0],
        };
        let x = model.pack_state(&state);
        let xdot = vec![0.0; x.len()];
        let u = vec![0.0, 0.0, 0.0];
        let z = vec![lam];
        let res = dae_residual(&model, &xdot, &x, &u, &z, &theta, 0.0).unwrap();
        for (i, r) in res.iter().enumerate() {
            assert!(r.abs() < 1e-9, "row {i}: {r}");
        }
        assert_relative_eq!(
            tether_force(&model, &x, &z),
            m_node * g,
            max_relative = 1e-12
        );
    }

    #[test]
    fn free_fall_requires_gravity_acceleration() {
        // zero tension, zero wind, zero aero coefficients: Newton rows
        // vanish iff the acceleration is (0, 0, -g)
        let mut model = single_model(0.0);
        model.aircraft.cd0 = 1e-30; // validation requires > 0
        let theta = model.nominal_free_params();
        let g = model.atmosphere.g;

        let state = SystemState {
            positions: vec![[250.0, 0.0, 0.0]],
            velocities: vec![[0.0; 3]],
            tether_length: 250.0,
            reel_speed: 0.0,
            lift_coeff: vec![0.0],
            bank: vec![0.0],
        };
        let x = model.pack_state(&state);
        let mut xdot = vec![0.0; x.len()];
        xdot[model.idx_vel(0, 2)] = -g;
        let res = dae_residual(&model, &xdot, &x, &[0.0, 0.0, 0.0], &[0.0], &theta, 0.0).unwrap();
        for (i, r) in res.iter().enumerate() {
            assert!(r.abs() < 1e-10, "row {i}: {r}");
        }
        // perturbed acceleration must not balance
        xdot[model.idx_vel(0, 2)] = -g + 0.1;
        let res = dae_residual(&model, &xdot, &x, &[0.0, 0.0, 0.0], &[0.0], &theta, 0.0).unwrap();
        assert!(res[model.idx_vel(0, 2)].abs() > 1e-3);
    }

    /// Newton-solve the residual for a balanced circular crosswind state
    /// using finite differences only (independent of the analytic path).
    ///
    /// Kinematically consistent circular motion satisfies the constraint
    /// row identically, so the root-finding runs on the three Newton rows
    /// with unknowns (cl, bank, lambda) at fixed flight speed.
    #[test]
    fn circular_crosswind_steady_state_balances() {
        let model = single_model(10.0);
        let theta = model.nominal_free_params();
        let l = 200.0f64;
        let elev = 30f64.to_radians();
        let r_loop = 40.0f64;
        let cone = (r_loop / l).asin();
        let speed = 35.0;
        let alpha = 0.5f64;

        let build = |v: &[f64]| {
            let (cl, bank) = (v[0], v[1]);
            let e_ax = [elev.cos(), 0.0, elev.sin()];
            let e_p = [-elev.sin(), 0.0, elev.cos()];
            let e_y = [0.0, 1.0, 0.0];
            let axial = l * cone.cos();
            let q: Vec<f64> = (0..3)
                .map(|c| {
                    axial * e_ax[c] + r_loop * (alpha.cos() * e_p[c] + alpha.sin() * e_y[c])
                })
                .collect();
            let tang: Vec<f64> = (0..3)
                .map(|c| -alpha.sin() * e_p[c] + alpha.cos() * e_y[c])
                .collect();
            let radial: Vec<f64> = (0..3)
                .map(|c| alpha.cos() * e_p[c] + alpha.sin() * e_y[c])
                .collect();
            let omega = speed / r_loop;
            let state = SystemState {
                positions: vec![[q[0], q[1], q[2]]],
                velocities: vec![[speed * tang[0], speed * tang[1], speed * tang[2]]],
                tether_length: l,
                reel_speed: 0.0,
                lift_coeff: vec![cl],
                bank: vec![bank],
            };
            let x = model.pack_state(&state);
            let mut xdot = vec![0.0; x.len()];
            for c in 0..3 {
                xdot[model.idx_pos(0, c)] = speed * tang[c];
                xdot[model.idx_vel(0, c)] = -omega * omega * r_loop * radial[c];
            }
            (x, xdot)
        };

        let newton_rows = |v: &[f64]| -> Vec<f64> {
            let (x, xdot) = build(v);
            let res =
                dae_residual(&model, &xdot, &x, &[0.0, 0.0, 0.0], &[v[2]], &theta, 0.0).unwrap();
            (0..3)
                .map(|c| res[model.idx_vel(0, c)] / 100.0)
                .collect()
        };

        let mut v = vec![0.8, 0.1, 0.05];
        for _ in 0..100 {
            let r0 = newton_rows(&v);
            if r0.iter().map(|r| r * r).sum::<f64>().sqrt() < 1e-13 {
                break;
            }
            let mut jac = vec![0.0; 9];
            for j in 0..3 {
                let h = 1e-6 * v[j].abs().max(1e-2);
                let mut vp = v.clone();
                vp[j] += h;
                let rp = newton_rows(&vp);
                let mut vm = v.clone();
                vm[j] -= h;
                let rm = newton_rows(&vm);
                for i in 0..3 {
                    jac[i * 3 + j] = (rp[i] - rm[i]) / (2.0 * h);
                }
            }
            let mut step = r0.clone();
            assert!(lu_solve(&mut jac, &mut step, 3), "singular Newton system");
            for j in 0..3 {
                v[j] -= step[j];
            }
        }

        // the full residual, constraint row included, vanishes at the
        // pre-balanced state
        let (x, xdot) = build(&v);
        let res = dae_residual(&model, &xdot, &x, &[0.0, 0.0, 0.0], &[v[2]], &theta, 0.0).unwrap();
        let err: f64 = res.iter().map(|r| r * r).sum::<f64>().sqrt();
        assert!(err < 1e-8, "balanced residual {err}, v = {v:?}");
    }

    #[test]
    fn consistency_taylor_expansion() {
        let model = single_model(10.0);
        let theta = model.nominal_free_params();
        let l = 150.0;
        let state = SystemState {
            positions: vec![[0.0, 0.0, l]],
            velocities: vec![[2.0, 0.0, 0.0]], // tangential
            tether_length: l,
            reel_speed: 0.0,
            lift_coeff: vec![0.5],
            bank: vec![0.0],
        };
        let x = model.pack_state(&state);
        let c = consistency(&model, &x, &theta);
        assert!(c.iter().all(|v| v.abs() < 1e-10));

        // radial displacement by delta: position residual ~ 2 l delta
        let delta = 1e-3;
        let mut xp = x.clone();
        xp[model.idx_pos(0, 2)] += delta;
        let c = consistency(&model, &xp, &theta);
        assert_relative_eq!(c[0], 2.0 * l * delta, max_relative = 1e-5);

        // radial velocity violates the velocity-level constraint: residual 2 l
        let state = SystemState {
            positions: vec![[l, 0.0, 0.0]],
            velocities: vec![[1.0, 0.0, 0.0]],
            tether_length: l,
            reel_speed: 0.0,
            lift_coeff: vec![0.5],
            bank: vec![0.0],
        };
        let x = model.pack_state(&state);
        let c = consistency(&model, &x, &theta);
        assert_relative_eq!(c[1], 2.0 * l, max_relative = 1e-12);
    }

    #[test]
    fn tether_force_and_power_products() {
        let model = single_model(10.0);
        let state = SystemState {
            positions: vec![[0.0, 0.0, 200.0]],
            velocities: vec![[0.0; 3]],
            tether_length: 200.0,
            reel_speed: 5.0,
            lift_coeff: vec![0.0],
            bank: vec![0.0],
        };
        let x = model.pack_state(&state);
        assert_eq!(tether_force(&model, &x, &[0.0]), 0.0);
        let z = vec![5.0]; // F = 5 * 200 = 1000 N
        assert_relative_eq!(tether_force(&model, &x, &z), 1000.0);
        assert_relative_eq!(mechanical_power(&model, &x, &z), 5000.0);

        let mut x2 = x.clone();
        x2[model.idx_ldt()] = -2.0;
        assert_relative_eq!(mechanical_power(&model, &x2, &z), -2000.0);
        x2[model.idx_ldt()] = 0.0;
        assert_eq!(mechanical_power(&model, &x2, &z), 0.0);
    }

    #[test]
    fn stress_boundary_matches_definition() {
        let t = TetherParams::default();
        let d = 0.004;
        let f_max = t.max_tension(d);
        assert_relative_eq!(
            f_max,
            t.yield_stress * std::f64::consts::PI * d * d / (4.0 * 3.0),
            epsilon = 1e-9
        );
    }

    #[test]
    fn residual_rotation_covariance() {
        // rotating positions, velocities, derivatives and the wind axis about
        // z must rotate the force rows and leave scalar rows unchanged
        let model0 = single_model(10.0);
        let theta = model0.nominal_free_params();
        let ang = 0.7f64;
        let rot = |v: [f64; 3]| {
            [
                ang.cos() * v[0] - ang.sin() * v[1],
                ang.sin() * v[0] + ang.cos() * v[1],
                v[2],
            ]
        };

        let state = SystemState {
            positions: vec![[120.0, 30.0, 180.0]],
            velocities: vec![[5.0, -30.0, 2.0]],
            tether_length: (120.0f64 * 120.0 + 30.0 * 30.0 + 180.0 * 180.0).sqrt(),
            reel_speed: 0.5,
            lift_coeff: vec![1.1],
            bank: vec![0.3],
        };
        let x = model0.pack_state(&state);
        let mut xdot = vec![0.0; x.len()];
        for c in 0..3 {
            xdot[model0.idx_pos(0, c)] = state.velocities[0][c];
            xdot[model0.idx_vel(0, c)] = [0.3, -1.2, 9.0][c];
        }
        let u = vec![0.1, -0.2, 0.4];
        let z = vec![0.8];
        let res0 = dae_residual(&model0, &xdot, &x, &u, &z, &theta, 0.1).unwrap();

        let mut model1 = model0.clone();
        model1.wind_dir = rot([1.0, 0.0, 0.0]);
        let state1 = SystemState {
            positions: vec![rot(state.positions[0])],
            velocities: vec![rot(state.velocities[0])],
            ..state.clone()
        };
        let x1 = model1.pack_state(&state1);
        let mut xdot1 = vec![0.0; x1.len()];
        let rp = rot([xdot[model0.idx_pos(0, 0)], xdot[model0.idx_pos(0, 1)], xdot[model0.idx_pos(0, 2)]]);
        let rv = rot([xdot[model0.idx_vel(0, 0)], xdot[model0.idx_vel(0, 1)], xdot[model0.idx_vel(0, 2)]]);
        for c in 0..3 {
            xdot1[model1.idx_pos(0, c)] = rp[c];
            xdot1[model1.idx_vel(0, c)] = rv[c];
        }
        let res1 = dae_residual(&model1, &xdot1, &x1, &u, &z, &theta, 0.1).unwrap();

        // vector rows rotate
        let newton0 = rot([
            res0[model0.idx_vel(0, 0)],
            res0[model0.idx_vel(0, 1)],
            res0[model0.idx_vel(0, 2)],
        ]);
        for c in 0..3 {
            assert_relative_eq!(newton0[c], res1[model1.idx_vel(0, c)], max_relative = 1e-9, epsilon = 1e-9);
        }
        // scalar rows invariant
        assert_relative_eq!(res0[x.len()], res1[x.len()], max_relative = 1e-9, epsilon = 1e-9);
        assert_relative_eq!(
            res0[model0.idx_lt()],
            res1[model1.idx_lt()],
            max_relative = 1e-9,
            epsilon = 1e-9
        );
    }

    #[test]
    fn singular_frame_detected_for_tether_aligned_flow() {
        let model = single_model(10.0);
        let theta = model.nominal_free_params();
        // aircraft straight downwind at the reference altitude moving with
        // apparent wind along the tether
        let l = 200.0f64;
        let q = [l / 2f64.sqrt(), 0.0, l / 2f64.sqrt()];
        let u_inf = 10.0 * (q[2] / 100.0f64).powf(0.15);
        // choose velocity so u_a = wind - qdot is parallel to q
        let scale = 0.05;
        let qd = [u_inf - scale * q[0], -scale * q[1], -scale * q[2]];
        let state = SystemState {
            positions: vec![q],
            velocities: vec![qd],
            tether_length: l,
            reel_speed: 0.0,
            lift_coeff: vec![1.0],
            bank: vec![0.0],
        };
        let x = model.pack_state(&state);
        let xdot = vec![0.0; x.len()];
        let err = dae_residual(&model, &xdot, &x, &[0.0; 3], &[0.1], &theta, 0.0);
        assert!(matches!(err, Err(Error::SingularAeroFrame { .. })));
    }

    #[test]
    fn dual_topology_dimensions_and_consistency() {
        let model = SystemModel::new(
            SystemTopology::dual(16.5, 3e-3),
            AircraftParams::reference(),
            TetherParams::default(),
            WindProfile::default(),
            IsaAtmosphere::default(),
        );
        let d = model.dims();
        assert_eq!((d.n_x, d.n_u, d.n_z), (24, 5, 3));

        let theta = model.nominal_free_params();
        let l = 300.0;
        let ls = theta.secondary_length;
        // juncture on the tether sphere, aircraft offset laterally
        let qj = [l * 0.8, 0.0, l * 0.6];
        let state = SystemState {
            positions: vec![
                qj,
                [qj[0], qj[1] + ls, qj[2]],
                [qj[0], qj[1] - ls, qj[2]],
            ],
            velocities: vec![[0.0; 3], [0.0, 0.0, 10.0], [0.0, 0.0, -10.0]],
            tether_length: l,
            reel_speed: 0.0,
            lift_coeff: vec![1.0, 1.0],
            bank: vec![0.0, 0.0],
        };
        let x = model.pack_state(&state);
        let c = consistency(&model, &x, &theta);
        assert_eq!(c.len(), 6);
        for v in &c {
            assert!(v.abs() < 1e-9, "{c:?}");
        }
    }
}
