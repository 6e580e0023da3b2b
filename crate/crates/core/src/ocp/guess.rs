//! Kinematically consistent initial guess: circular loops on a tilted
//! cylinder, tether lengths matched exactly so the consistency conditions
//! hold by construction.

use crate::collocation::RadauScheme;
use crate::error::{Error, Result};
use crate::induction::CycleAverages;
use crate::vehicle::{AlgebraicState, ControlInput, SystemState, TopologyKind};

use super::{OcpSpec, Trajectory};

const GUESS_ELEVATION_DEG: f64 = 30.0;
const GUESS_INDUCTION: f64 = 0.05;

/// Geometry shared by the guess construction and the transcription seeds.
pub(super) struct GuessGeometry {
    pub theta_e: f64,
    pub radius: f64,
    pub loop_radius: f64,
    pub axis_dist: f64,
    pub tether_length: f64,
    pub secondary_length: f64,
    pub speed: f64,
    pub period: f64,
    pub phi0: f64,
}

pub(super) fn guess_geometry(spec: &OcpSpec) -> Result<GuessGeometry> {
    let b = spec.model.aircraft.span;
    let theta_e = GUESS_ELEVATION_DEG.to_radians();
    let dual = spec.model.topology.kind == TopologyKind::Dual;

    let radius = match spec.fixed_radius {
        Some(r) => r,
        None => {
            let default = if dual { 8.0 * b } else { (18.0 * b).min(250.0) };
            default.clamp(spec.radius_bounds().0, spec.radius_bounds().1)
        }
    };
    if radius * theta_e.sin() <= b / 2.0 {
        return Err(Error::InvalidParameter(format!(
            "guess loop incompatible with cylinder invariant: R sin(theta) = {:.2} <= b/2",
            radius * theta_e.sin()
        )));
    }
    let loop_radius = (3.0 * b).max(0.3 * radius);

    // lowest loop point comfortably above the altitude floor
    let axis_dist =
        (spec.limits.min_altitude + 20.0 + loop_radius * theta_e.cos()) / theta_e.sin();
    let axis_dist = axis_dist.min(0.8 * spec.limits.l_t_max);

    let (tether_length, secondary_length) = if dual {
        (axis_dist, loop_radius)
    } else {
        ((axis_dist * axis_dist + loop_radius * loop_radius).sqrt(), 0.0)
    };
    if tether_length > spec.limits.l_t_max {
        return Err(Error::InvalidParameter(
            "guess geometry exceeds the tether length bound".into(),
        ));
    }

    let speed = 5.0 * spec.model.wind.u_ref;
    let period = 2.0 * std::f64::consts::PI * loop_radius / speed;

    Ok(GuessGeometry {
        theta_e,
        radius,
        loop_radius,
        axis_dist,
        tether_length,
        secondary_length,
        speed,
        period,
        phi0: -std::f64::consts::FRAC_PI_2,
    })
}

/// State on the guess loop at cycle phase angle alpha for one aircraft
/// (alpha already includes the per-aircraft offset).
pub(super) fn loop_point(
    geo: &GuessGeometry,
    alpha: f64,
) -> ([f64; 3], [f64; 3]) {
    let (st, ct) = (geo.theta_e.sin(), geo.theta_e.cos());
    let e_ax = [ct, 0.0, st];
    let e_p = [-st, 0.0, ct];
    let e_y = [0.0, 1.0, 0.0];
    let (sa, ca) = alpha.sin_cos();
    let omega = geo.speed / geo.loop_radius;
    let mut q = [0.0; 3];
    let mut v = [0.0; 3];
    for c in 0..3 {
        q[c] = geo.axis_dist * e_ax[c] + geo.loop_radius * (ca * e_p[c] + sa * e_y[c]);
        v[c] = geo.loop_radius * omega * (-sa * e_p[c] + ca * e_y[c]);
    }
    (q, v)
}

fn guess_state(spec: &OcpSpec, geo: &GuessGeometry, t: f64) -> SystemState {
    let omega = geo.speed / geo.loop_radius;
    let alpha = omega * t;
    let model = &spec.model;
    match model.topology.kind {
        TopologyKind::Single => {
            let (q, v) = loop_point(geo, alpha);
            SystemState {
                positions: vec![q],
                velocities: vec![v],
                tether_length: geo.tether_length,
                reel_speed: 0.0,
                lift_coeff: vec![1.0],
                bank: vec![0.0],
            }
        }
        TopologyKind::Dual => {
            let (st, ct) = (geo.theta_e.sin(), geo.theta_e.cos());
            let qj = [geo.axis_dist * ct, 0.0, geo.axis_dist * st];
            let (q2, v2) = loop_point(geo, alpha);
            let (q3, v3) = loop_point(geo, alpha + std::f64::consts::PI);
            SystemState {
                positions: vec![qj, q2, q3],
                velocities: vec![[0.0; 3], v2, v3],
                tether_length: geo.tether_length,
                reel_speed: 0.0,
                lift_coeff: vec![1.0, 1.0],
                bank: vec![0.0, 0.0],
            }
        }
    }
}

fn guess_multipliers(spec: &OcpSpec, geo: &GuessGeometry) -> AlgebraicState {
    let model = &spec.model;
    let m = model.aircraft.mass;
    let g = model.atmosphere.g;
    let omega = geo.speed / geo.loop_radius;
    match model.topology.kind {
        TopologyKind::Single => {
            // centripetal from the tension's in-plane component
            let lam = (m * omega * omega).max(2.0 * spec.limits.min_tension / geo.tether_length);
            AlgebraicState {
                multipliers: vec![lam],
            }
        }
        TopologyKind::Dual => {
            let lam_sec = m * omega * omega;
            let lam_main =
                (4.0 * m * g / geo.tether_length).max(2.0 * spec.limits.min_tension / geo.tether_length);
            AlgebraicState {
                multipliers: vec![lam_main, lam_sec, lam_sec],
            }
        }
    }
}

/// Construct the initial guess trajectory on the collocation mesh.
pub fn initial_guess(spec: &OcpSpec) -> Result<Trajectory> {
    spec.validate()?;
    let geo = guess_geometry(spec)?;
    let scheme = RadauScheme::new(spec.degree)?;

    let t_ro = geo.period / 2.0;
    let t_ri = geo.period / 2.0;
    let n_ro = spec.n_reel_out;
    let n_ri = spec.n_intervals - n_ro;
    let h_ro = t_ro / n_ro as f64;
    let h_ri = t_ri / n_ri as f64;

    let model = &spec.model;
    let d = model.dims();
    let mut times = Vec::new();
    let mut reel_out = Vec::new();
    let mut quad_weights = Vec::new();
    let mut states = Vec::new();
    let mut controls = Vec::new();
    let mut multipliers = Vec::new();
    let mut boundary_states = Vec::new();

    let zero_u = ControlInput {
        cl_rate: vec![0.0; d.n_aircraft],
        bank_rate: vec![0.0; d.n_aircraft],
        reel_accel: 0.0,
    };
    let z = guess_multipliers(spec, &geo);

    for k in 0..=spec.n_intervals {
        let t = if k <= n_ro {
            k as f64 * h_ro
        } else {
            t_ro + (k - n_ro) as f64 * h_ri
        };
        boundary_states.push(guess_state(spec, &geo, t));
    }
    for k in 0..spec.n_intervals {
        let (t0, h) = if k < n_ro {
            (k as f64 * h_ro, h_ro)
        } else {
            (t_ro + (k - n_ro) as f64 * h_ri, h_ri)
        };
        for j in 0..spec.degree {
            let t = t0 + scheme.nodes[j] * h;
            times.push(t);
            reel_out.push(k < n_ro);
            quad_weights.push(scheme.quad_weights[j] * h);
            states.push(guess_state(spec, &geo, t));
            controls.push(zero_u.clone());
            multipliers.push(z.clone());
        }
    }

    let mut free_params = model.nominal_free_params();
    if model.topology.kind == TopologyKind::Dual {
        free_params.secondary_length = geo.secondary_length;
    }

    Ok(Trajectory {
        times,
        reel_out,
        quad_weights,
        states,
        controls,
        multipliers,
        boundary_states,
        free_params,
        induction: GUESS_INDUCTION,
        t_reel_out: t_ro,
        t_reel_in: t_ri,
        radius: geo.radius,
        theta_e: geo.theta_e,
        phi0: geo.phi0,
        avg_power: 0.0,
        power_density: 0.0,
        power_per_wing_area: 0.0,
        cycle: CycleAverages {
            swept_weight: vec![0.0; d.n_aircraft],
            mean_tether_force: 0.0,
            induction: GUESS_INDUCTION,
            t_reel_out: t_ro,
            t_reel_in: t_ri,
            period: t_ro + t_ri,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atmosphere::{IsaAtmosphere, WindProfile};
    use crate::vehicle::{
        consistency, AircraftParams, SystemModel, SystemTopology, TetherParams,
    };

    fn dual_spec(fixed_radius: Option<f64>) -> OcpSpec {
        let model = SystemModel::new(
            SystemTopology::dual(16.5, 8e-3),
            AircraftParams::reference(),
            TetherParams::default(),
            WindProfile::default(),
            IsaAtmosphere::default(),
        );
        let mut spec = OcpSpec::new(model).with_mesh(8);
        spec.fixed_radius = fixed_radius;
        spec
    }

    #[test]
    fn guess_loop_radius_from_fixed_radius() {
        let spec = dual_spec(Some(18.4));
        let geo = guess_geometry(&spec).unwrap();
        // max(3 * 5.5, 0.3 * 18.4) = 16.5
        assert!((geo.loop_radius - 16.5).abs() < 1e-12);
    }

    #[test]
    fn guess_is_consistent_and_periodic() {
        for spec in [dual_spec(None), {
            let model = SystemModel::new(
                SystemTopology::single(),
                AircraftParams::reference(),
                TetherParams::default(),
                WindProfile::default(),
                IsaAtmosphere::default(),
            );
            OcpSpec::new(model).with_mesh(10)
        }] {
            let tr = initial_guess(&spec).unwrap();
            let model = &spec.model;
            for s in tr.states.iter().chain(tr.boundary_states.iter()) {
                let x = model.pack_state(s);
                let c = consistency(model, &x, &tr.free_params);
                let worst = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(worst <= 1e-8, "consistency {worst:.3e}");
            }
            // exact closure
            assert!(tr.periodicity_defect(model) < 1e-9);
            // altitudes above the floor
            for s in &tr.states {
                for p in &s.positions {
                    assert!(p[2] >= spec.limits.min_altitude);
                }
            }
            assert_eq!(tr.times.len(), spec.n_intervals * spec.degree);
        }
    }

    #[test]
    fn degenerate_radius_rejected() {
        // force a fixed radius below 3b through the validation path
        let spec = dual_spec(Some(10.0));
        assert!(initial_guess(&spec).is_err());
    }
}
