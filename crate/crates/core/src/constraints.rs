//! Flight envelope margins, the tilted elliptical cylinder constraint, and
//! the no-overlap half-plane constraint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::induction::apparent_wind;
use crate::math::{Scalar, V3};
use crate::vehicle::{FreeParams, SystemModel, TopologyKind};

/// Tilted elliptical flight cylinder assigned to one system.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CylinderSpec {
    /// Ground-circle radius (m).
    pub radius: f64,
    /// Elevation angle (rad).
    pub theta_e: f64,
    /// Dividing-plane angle (rad).
    pub phi0: f64,
    /// Wing span shrinking the admissible ellipse (m).
    pub span: f64,
}

impl CylinderSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_e > 0.0 && self.theta_e < std::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidParameter("theta_e must be in (0, pi/2)".into()));
        }
        if self.radius * self.theta_e.sin() <= self.span / 2.0 {
            return Err(Error::InvalidParameter(format!(
                "degenerate cylinder: R sin(theta_e) = {:.2} must exceed b/2 = {:.2}",
                self.radius * self.theta_e.sin(),
                self.span / 2.0
            )));
        }
        Ok(())
    }
}

/// Flight envelope bounds enforced along the trajectory.
///
/// Stress limits come from the tether parameters; everything else is
/// collected here. The paper's attitude bounds map onto the bank-angle
/// bound and the apparent-wind cone of the point-mass reduction.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeLimits {
    /// Minimum main tether tension (N).
    pub min_tension: f64,
    /// Minimum secondary tether tension (N), dual systems.
    pub min_tension_secondary: f64,
    /// Bank angle bound (rad).
    pub bank_max: f64,
    /// Half-angle of the admissible cone between the apparent wind and the
    /// reversed flight direction (rad).
    pub cone_half_angle: f64,
    /// Lift-coefficient rate bound (1/s).
    pub cl_rate_max: f64,
    /// Bank rate bound (rad/s).
    pub bank_rate_max: f64,
    /// Reel acceleration bound (m/s^2).
    pub reel_accel_max: f64,
    /// Reel speed bound (m/s).
    pub reel_speed_max: f64,
    /// Flight speed bound (m/s).
    pub speed_max: f64,
    /// Ground safety distance (m).
    pub min_altitude: f64,
    /// Maximum main tether length (m).
    pub l_t_max: f64,
    /// Maximum induction factor.
    pub a_max: f64,
}

impl Default for EnvelopeLimits {
    fn default() -> Self {
        Self {
            min_tension: 50.0,
            min_tension_secondary: 10.0,
            bank_max: 70f64.to_radians(),
            cone_half_angle: 30f64.to_radians(),
            cl_rate_max: 3.0,
            bank_rate_max: 3.0,
            reel_accel_max: 10.0,
            reel_speed_max: 12.0,
            speed_max: 120.0,
            min_altitude: 100.0,
            l_t_max: 700.0,
            a_max: 0.5,
        }
    }
}

impl EnvelopeLimits {
    pub fn validate(&self) -> Result<()> {
        if self.min_tension <= 0.0 {
            return Err(Error::InvalidParameter("min_tension must be > 0".into()));
        }
        if self.min_altitude <= 0.0 || self.l_t_max <= self.min_altitude {
            return Err(Error::InvalidParameter(
                "need 0 < min_altitude < l_t_max".into(),
            ));
        }
        if !(0.0 < self.a_max && self.a_max <= 0.5) {
            return Err(Error::InvalidParameter("a_max must be in (0, 0.5]".into()));
        }
        Ok(())
    }
}

/// Rotate a position into the cylinder cross-section frame: returns
/// (q_hat_y, q_hat_z).
pub fn to_cylinder_frame(q: [f64; 3], theta_e: f64) -> (f64, f64) {
    let p = to_cylinder_frame_s::<f64>(&V3(q), theta_e);
    (p.0, p.1)
}

#[inline]
pub fn to_cylinder_frame_s<S: Scalar>(q: &V3<S>, theta_e: S) -> (S, S) {
    (q.y(), q.z() * theta_e.cos() - q.x() * theta_e.sin())
}

/// Ellipse membership margin: nonnegative inside the shrunken ellipse.
pub fn cylinder_margin(q: [f64; 3], spec: &CylinderSpec) -> Result<f64> {
    spec.validate()?;
    let (qy, qz) = to_cylinder_frame(q, spec.theta_e);
    Ok(cylinder_margin_s::<f64>(
        qy,
        qz,
        spec.radius,
        spec.theta_e,
        spec.span,
    ))
}

/// Margin 1 - qz^2/Rz^2 - qy^2/Ry^2 with axes shrunk by half the span.
#[inline]
pub fn cylinder_margin_s<S: Scalar>(q_hat_y: S, q_hat_z: S, radius: S, theta_e: S, span: f64) -> S {
    let half = S::c(span / 2.0);
    let ry = radius - half;
    let rz = radius * theta_e.sin() - half;
    S::one() - q_hat_z * q_hat_z / (rz * rz) - q_hat_y * q_hat_y / (ry * ry)
}

/// Signed distance (m, in the cross-section frame) from the dividing plane.
pub fn no_overlap_margin(q: [f64; 3], theta_e: f64, phi0: f64) -> f64 {
    let (qy, qz) = to_cylinder_frame(q, theta_e);
    no_overlap_margin_s::<f64>(qy, qz, phi0)
}

#[inline]
pub fn no_overlap_margin_s<S: Scalar>(q_hat_y: S, q_hat_z: S, phi0: S) -> S {
    q_hat_z * phi0.cos() - q_hat_y * phi0.sin()
}

/// Apparent-wind cone margin: cosine of the angle between the apparent wind
/// and the reversed velocity, minus the cone cosine. Nonnegative when the
/// flow comes from within the admissible cone.
#[inline]
pub fn cone_margin_s<S: Scalar>(u_a: &V3<S>, qdot: &V3<S>, cos_half_angle: f64) -> S {
    let eps = 1e-6;
    let denom = u_a.norm_eps(eps) * qdot.norm_eps(eps);
    -u_a.dot(qdot) / denom - S::c(cos_half_angle)
}

/// One named envelope margin; nonnegative means feasible.
#[derive(Clone, Debug, Serialize)]
pub struct Margin {
    pub name: String,
    pub value: f64,
}

/// Stack of raw envelope margins at one state (unscaled physical units;
/// the transcription normalizes before handing them to the solver).
pub fn envelope(
    model: &SystemModel,
    x: &[f64],
    u: &[f64],
    z: &[f64],
    theta: &FreeParams,
    induction: f64,
    limits: &EnvelopeLimits,
) -> Vec<Margin> {
    let mut out = Vec::new();
    let mut push = |name: String, value: f64| out.push(Margin { name, value });

    let l_t = x[model.idx_lt()];
    let f_main = z[0] * l_t;
    push(
        "stress_main".into(),
        model.tether.max_tension(theta.tether_diameter) - f_main,
    );
    push("tension_main".into(), f_main - limits.min_tension);

    if model.topology.kind == TopologyKind::Dual {
        for k in 0..2 {
            let f_sec = z[1 + k] * theta.secondary_length;
            push(
                format!("stress_secondary_{}", k + 1),
                model.tether.max_tension(theta.secondary_diameter) - f_sec,
            );
            push(
                format!("tension_secondary_{}", k + 1),
                f_sec - limits.min_tension_secondary,
            );
        }
    }

    for (k, node) in model.aircraft_nodes().enumerate() {
        let bank = x[model.idx_bank(k)];
        push(format!("bank_{}", k + 1), limits.bank_max - bank.abs());
        let cl = x[model.idx_cl(k)];
        push(format!("cl_low_{}", k + 1), cl - model.aircraft.cl_min);
        push(format!("cl_high_{}", k + 1), model.aircraft.cl_max - cl);

        let qz = x[model.idx_pos(node, 2)];
        let vel = [
            x[model.idx_vel(node, 0)],
            x[model.idx_vel(node, 1)],
            x[model.idx_vel(node, 2)],
        ];
        let ua = apparent_wind(induction, qz, vel, &model.wind, model.wind_dir);
        push(
            format!("cone_{}", k + 1),
            cone_margin_s::<f64>(
                &V3(ua),
                &V3(vel),
                limits.cone_half_angle.cos(),
            ),
        );
        push(
            format!("speed_{}", k + 1),
            limits.speed_max - V3(vel).norm_eps(0.0),
        );
    }

    for node in 0..model.dims().n_nodes {
        push(
            format!("altitude_{node}"),
            x[model.idx_pos(node, 2)] - limits.min_altitude,
        );
    }

    push("tether_length".into(), limits.l_t_max - l_t);
    push(
        "reel_speed".into(),
        limits.reel_speed_max - x[model.idx_ldt()].abs(),
    );
    push("induction_low".into(), induction);
    push("induction_high".into(), limits.a_max - induction);

    let d = model.dims();
    for k in 0..d.n_aircraft {
        push(
            format!("cl_rate_{}", k + 1),
            limits.cl_rate_max - u[2 * k].abs(),
        );
        push(
            format!("bank_rate_{}", k + 1),
            limits.bank_rate_max - u[2 * k + 1].abs(),
        );
    }
    push(
        "reel_accel".into(),
        limits.reel_accel_max - u[d.n_u - 1].abs(),
    );

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cylinder_frame_rotations() {
        let (qy, qz) = to_cylinder_frame([1.0, 2.0, 3.0], 0.0);
        assert_relative_eq!(qy, 2.0);
        assert_relative_eq!(qz, 3.0);

        let (qy, qz) = to_cylinder_frame([1.0, 2.0, 3.0], 90f64.to_radians());
        assert_relative_eq!(qy, 2.0);
        assert_relative_eq!(qz, -1.0, epsilon = 1e-12);

        let th = 40f64.to_radians();
        let (qy, qz) = to_cylinder_frame([100.0, 50.0, 200.0], th);
        assert_relative_eq!(qy, 50.0);
        assert_relative_eq!(qz, 88.930_127_655_141_67, epsilon = 1e-10);
    }

    #[test]
    fn cylinder_margin_center_boundary_interior() {
        let spec = CylinderSpec {
            radius: 18.4,
            theta_e: 40f64.to_radians(),
            phi0: 0.0,
            span: 5.5,
        };
        // axis point maps to the ellipse center
        let th = spec.theta_e;
        let on_axis = [300.0 * th.cos(), 0.0, 300.0 * th.sin()];
        assert_relative_eq!(cylinder_margin(on_axis, &spec).unwrap(), 1.0, epsilon = 1e-12);

        // boundary point on the y semi-axis
        let ry = spec.radius - spec.span / 2.0;
        let b = [on_axis[0], ry, on_axis[2]];
        assert!(cylinder_margin(b, &spec).unwrap().abs() < 1e-12);

        // interior point from the worked example: qhat = (10, 5)
        let q = [
            on_axis[0] - 5.0 * th.sin(),
            10.0,
            on_axis[2] + 5.0 * th.cos(),
        ];
        assert_relative_eq!(
            cylinder_margin(q, &spec).unwrap(),
            0.288_299_324_606_854_7,
            epsilon = 1e-9
        );
    }

    #[test]
    fn cylinder_margin_symmetric() {
        let spec = CylinderSpec {
            radius: 25.0,
            theta_e: 0.6,
            phi0: 0.3,
            span: 5.5,
        };
        let m = |qy: f64, qz: f64| {
            cylinder_margin_s::<f64>(qy, qz, spec.radius, spec.theta_e, spec.span)
        };
        assert_relative_eq!(m(7.0, 3.0), m(-7.0, 3.0));
        assert_relative_eq!(m(7.0, 3.0), m(7.0, -3.0));
    }

    #[test]
    fn degenerate_cylinder_rejected() {
        let spec = CylinderSpec {
            radius: 3.0,
            theta_e: 0.5,
            phi0: 0.0,
            span: 5.5,
        };
        assert!(cylinder_margin([0.0; 3], &spec).is_err());
    }

    #[test]
    fn no_overlap_half_planes() {
        // phi0 = 0: the half plane is qhat_z >= 0
        let th = 0.0;
        assert_relative_eq!(no_overlap_margin([0.0, 5.0, 3.0], th, 0.0), 3.0);
        // phi0 = 90 deg: margin is -qhat_y
        assert_relative_eq!(
            no_overlap_margin([0.0, 5.0, 3.0], th, 90f64.to_radians()),
            -5.0,
            epsilon = 1e-12
        );
        // points on the dividing plane: qhat = t (cos phi0, sin phi0)
        for t in [-3.0, 0.5, 7.0] {
            let phi0: f64 = 0.77;
            let m = no_overlap_margin_s::<f64>(phi0.cos() * t, phi0.sin() * t, phi0);
            assert!(m.abs() < 1e-12);
        }
        // antisymmetry under phi0 -> phi0 + pi
        let (qy, qz) = (4.0, -2.5);
        let phi0 = 1.1;
        assert_relative_eq!(
            no_overlap_margin_s::<f64>(qy, qz, phi0),
            -no_overlap_margin_s::<f64>(qy, qz, phi0 + std::f64::consts::PI),
            epsilon = 1e-12
        );
    }

    #[test]
    fn envelope_boundary_cases() {
        use crate::atmosphere::{IsaAtmosphere, WindProfile};
        use crate::vehicle::{AircraftParams, SystemState, SystemTopology, TetherParams};

        let model = SystemModel::new(
            SystemTopology::single(),
            AircraftParams::reference(),
            TetherParams::default(),
            WindProfile::default(),
            IsaAtmosphere::default(),
        );
        let limits = EnvelopeLimits::default();
        let theta = model.nominal_free_params();

        let state = SystemState {
            positions: vec![[100.0f64.powi(2) as f64, 0.0, 100.0]],
            velocities: vec![[0.0, 30.0, 0.0]],
            tether_length: 700.0,
            reel_speed: 2.0,
            lift_coeff: vec![1.0],
            bank: vec![0.2],
        };
        // place on the tether sphere for form's sake
        let mut state = state;
        let r = (700.0f64 * 700.0 - 100.0 * 100.0).sqrt();
        state.positions[0] = [r, 0.0, 100.0];
        let x = model.pack_state(&state);
        let u = vec![0.0, 0.0, 0.0];
        let z = vec![1.0];

        let margins = envelope(&model, &x, &u, &z, &theta, 0.25, &limits);
        let get = |name: &str| {
            margins
                .iter()
                .find(|m| m.name == name)
                .unwrap_or_else(|| panic!("missing margin {name}"))
                .value
        };
        // exactly at the altitude floor and at l_t_max
        assert!(get("altitude_0").abs() < 1e-12);
        assert!(get("tether_length").abs() < 1e-12);
        // a = 0.25 splits the induction margins evenly
        assert_relative_eq!(get("induction_low"), 0.25);
        assert_relative_eq!(get("induction_high"), 0.25);
    }
}
