//! Unpack a solved decision vector into a trajectory with derived outputs.

use crate::error::{Error, Result};
use crate::induction::{solve_induction, CycleAverages};
use crate::vehicle::{AlgebraicState, ControlInput, FreeParams};

use super::transcription::Transcription;
use super::Trajectory;

/// Rebuild the trajectory from a (scaled) solution vector. With `verify`
/// set, the closed-form induction root must agree with the solver's
/// induction variable to 1e-6.
pub fn extract(tr: &Transcription, x_scaled: &[f64], verify: bool) -> Result<Trajectory> {
    let l = &tr.layout;
    let model = &tr.spec.model;
    let xp = l.to_physical(x_scaled);

    let d_t = xp[l.g_tether_diameter()];
    let (d_s, l_s) = if l.dual {
        (xp[l.g_secondary_diameter()], xp[l.g_secondary_length()])
    } else {
        (0.0, 0.0)
    };
    let free_params = FreeParams {
        tether_diameter: d_t,
        secondary_diameter: d_s,
        secondary_length: l_s,
    };
    let induction = xp[l.g_induction()];
    let t_ro = xp[l.g_t_reel_out()];
    let t_ri = xp[l.g_t_reel_in()];
    let t_total = t_ro + t_ri;
    let radius = match l.g_radius() {
        Some(g) => xp[g],
        None => tr.spec.fixed_radius.expect("fixed radius"),
    };
    let theta_e = xp[l.g_theta_e()];
    let phi0 = if l.dual { xp[l.g_phi0()] } else { 0.0 };

    let h_ro = t_ro / l.n_reel_out as f64;
    let n_ri = l.n_intervals - l.n_reel_out;
    let h_ri = t_ri / n_ri as f64;

    let mut times = Vec::new();
    let mut reel_out = Vec::new();
    let mut quad_weights = Vec::new();
    let mut states = Vec::new();
    let mut controls = Vec::new();
    let mut multipliers = Vec::new();

    let mut avg_power = 0.0;
    let mut swept = vec![0.0; l.n_aircraft];
    let mut force_int = 0.0;

    for k in 0..l.n_intervals {
        let ro = l.interval_reel_out(k);
        let (h, t0) = if ro {
            (h_ro, k as f64 * h_ro)
        } else {
            (h_ri, t_ro + (k - l.n_reel_out) as f64 * h_ri)
        };
        for j in 0..l.degree {
            let xb = l.x_coll(k, j);
            let state = model.unpack_state(&xp[xb..xb + l.n_x]);
            let ub = l.u_coll(k, j);
            let mut cl_rate = Vec::new();
            let mut bank_rate = Vec::new();
            for a in 0..l.n_aircraft {
                cl_rate.push(xp[ub + 2 * a]);
                bank_rate.push(xp[ub + 2 * a + 1]);
            }
            let control = ControlInput {
                cl_rate,
                bank_rate,
                reel_accel: xp[ub + l.n_u - 1],
            };
            let zb = l.z_coll(k, j);
            let z = AlgebraicState {
                multipliers: xp[zb..zb + l.n_z].to_vec(),
            };

            let w = h * tr.scheme.quad_weights[j];
            let p = z.multipliers[0] * state.tether_length * state.reel_speed;
            avg_power += w * p;
            if ro {
                force_int += w * z.multipliers[0] * state.tether_length;
                for (a, node) in model.aircraft_nodes().enumerate() {
                    let v = state.velocities[node];
                    let speed = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    swept[a] += w
                        * crate::induction::swept_integrand::<f64>(
                            &model.atmosphere,
                            &model.wind,
                            model.aircraft.span,
                            state.positions[node][2],
                            speed,
                        );
                }
            }

            times.push(t0 + tr.scheme.nodes[j] * h);
            reel_out.push(ro);
            quad_weights.push(w);
            states.push(state);
            controls.push(control);
            multipliers.push(z);
        }
    }
    avg_power /= t_total;

    let boundary_states = (0..=l.n_intervals)
        .map(|k| {
            let b = l.x_boundary(k);
            model.unpack_state(&xp[b..b + l.n_x])
        })
        .collect();

    let mean_force = force_int / t_total;
    let total_swept: f64 = swept.iter().sum();
    let a_closed = solve_induction(mean_force.max(0.0), total_swept.max(mean_force))?;
    if verify && (a_closed - induction).abs() > 1e-6 {
        return Err(Error::InternalConsistency(format!(
            "closed-form induction {a_closed:.8} disagrees with solver value {induction:.8}"
        )));
    }

    let power_density =
        tr.spec.rho_circle * avg_power / (std::f64::consts::PI * radius * radius);
    let power_per_wing_area =
        avg_power / (l.n_aircraft as f64 * model.aircraft.wing_area);

    Ok(Trajectory {
        times,
        reel_out,
        quad_weights,
        states,
        controls,
        multipliers,
        boundary_states,
        free_params,
        induction,
        t_reel_out: t_ro,
        t_reel_in: t_ri,
        radius,
        theta_e,
        phi0,
        avg_power,
        power_density,
        power_per_wing_area,
        cycle: CycleAverages {
            swept_weight: swept,
            mean_tether_force: mean_force,
            induction,
            t_reel_out: t_ro,
            t_reel_in: t_ri,
            period: t_total,
        },
    })
}
