//! Wind shear and air density as functions of altitude.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Scalar;

/// Power-law wind shear profile.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindProfile {
    /// Reference wind speed at `z_ref` (m/s).
    pub u_ref: f64,
    /// Reference altitude (m).
    pub z_ref: f64,
    /// Surface friction exponent.
    pub c_f: f64,
}

impl Default for WindProfile {
    fn default() -> Self {
        Self {
            u_ref: 10.0,
            z_ref: 100.0,
            c_f: 0.15,
        }
    }
}

impl WindProfile {
    pub fn validate(&self) -> Result<()> {
        if self.u_ref < 0.0 {
            return Err(Error::InvalidParameter("u_ref must be >= 0".into()));
        }
        if self.z_ref <= 0.0 {
            return Err(Error::InvalidParameter("z_ref must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.c_f) {
            return Err(Error::InvalidParameter("c_f must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Troposphere slice of the international standard atmosphere.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsaAtmosphere {
    /// Sea-level temperature (K).
    pub t0: f64,
    /// Sea-level density (kg/m^3).
    pub rho0: f64,
    /// Temperature lapse rate (K/m).
    pub t_lapse: f64,
    /// Gravitational acceleration (m/s^2).
    pub g: f64,
    /// Specific gas constant of air (J/(kg K)).
    pub r_gas: f64,
}

impl Default for IsaAtmosphere {
    fn default() -> Self {
        Self {
            t0: 288.15,
            rho0: 1.225,
            t_lapse: 0.0065,
            g: 9.81,
            r_gas: 287.05,
        }
    }
}

impl IsaAtmosphere {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("t0", self.t0),
            ("rho0", self.rho0),
            ("t_lapse", self.t_lapse),
            ("g", self.g),
            ("r_gas", self.r_gas),
        ] {
            if v <= 0.0 {
                return Err(Error::InvalidParameter(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }

    /// Altitude above which the lapse-rate model breaks down.
    pub fn max_altitude(&self) -> f64 {
        self.t0 / self.t_lapse
    }
}

/// Freestream wind speed at altitude `z` (m).
pub fn wind_speed(profile: &WindProfile, z: f64) -> Result<f64> {
    if z <= 0.0 {
        return Err(Error::Domain(format!(
            "wind profile invalid at altitude {z} m (must be > 0)"
        )));
    }
    Ok(wind_speed_s::<f64>(profile, z))
}

/// Air density at altitude `z` (m).
pub fn air_density(atm: &IsaAtmosphere, z: f64) -> Result<f64> {
    if z < 0.0 || z >= atm.max_altitude() {
        return Err(Error::Domain(format!(
            "altitude {z} m outside validity range [0, {:.0}) m",
            atm.max_altitude()
        )));
    }
    Ok(air_density_s::<f64>(atm, z))
}

/// Generic-scalar wind speed; caller guarantees z > 0.
#[inline]
pub fn wind_speed_s<S: Scalar>(profile: &WindProfile, z: S) -> S {
    S::c(profile.u_ref) * (z / S::c(profile.z_ref)).powf_c(profile.c_f)
}

/// Generic-scalar air density; caller guarantees z within the troposphere.
#[inline]
pub fn air_density_s<S: Scalar>(atm: &IsaAtmosphere, z: S) -> S {
    let ratio = (S::c(atm.t0) - S::c(atm.t_lapse) * z) / S::c(atm.t0);
    S::c(atm.rho0) * ratio.powf_c(atm.g / (atm.t_lapse * atm.r_gas) - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn wind_speed_at_reference_altitude() {
        let p = WindProfile {
            u_ref: 10.0,
            z_ref: 100.0,
            c_f: 0.15,
        };
        assert_relative_eq!(wind_speed(&p, 100.0).unwrap(), 10.0, epsilon = 1e-14);
    }

    #[test]
    fn wind_speed_uniform_for_zero_exponent() {
        let p = WindProfile {
            u_ref: 10.0,
            z_ref: 100.0,
            c_f: 0.0,
        };
        assert_relative_eq!(wind_speed(&p, 350.0).unwrap(), 10.0, epsilon = 1e-14);
    }

    #[test]
    fn wind_speed_doubled_altitude() {
        // 10 * 2^0.15, cross-checked against an arbitrary-precision evaluation
        let p = WindProfile::default();
        assert_relative_eq!(
            wind_speed(&p, 200.0).unwrap(),
            11.095_694_720_678_450,
            epsilon = 1e-12
        );
    }

    #[test]
    fn wind_speed_rejects_nonpositive_altitude() {
        let p = WindProfile::default();
        assert!(wind_speed(&p, 0.0).is_err());
        assert!(wind_speed(&p, -5.0).is_err());
    }

    #[test]
    fn density_at_sea_level_is_rho0() {
        let a = IsaAtmosphere::default();
        assert_relative_eq!(air_density(&a, 0.0).unwrap(), 1.225, epsilon = 1e-14);
    }

    #[test]
    fn density_matches_isa_tables() {
        // Published ISA values: 1.1673 kg/m^3 at 500 m, 1.1117 kg/m^3 at 1 km.
        let a = IsaAtmosphere::default();
        let r500 = air_density(&a, 500.0).unwrap();
        let r1000 = air_density(&a, 1000.0).unwrap();
        assert!((r500 - 1.1673).abs() / 1.1673 < 0.005, "rho(500) = {r500}");
        assert!((r1000 - 1.1117).abs() / 1.1117 < 0.005, "rho(1000) = {r1000}");
    }

    #[test]
    fn density_rejects_out_of_range() {
        let a = IsaAtmosphere::default();
        assert!(air_density(&a, -1.0).is_err());
        assert!(air_density(&a, a.max_altitude() + 1.0).is_err());
    }

    #[test]
    fn wind_monotone_density_decreasing() {
        let p = WindProfile::default();
        let a = IsaAtmosphere::default();
        let mut prev_u = 0.0;
        let mut prev_rho = f64::INFINITY;
        for i in 1..200 {
            let z = 10.0 * i as f64;
            let u = wind_speed(&p, z).unwrap();
            let rho = air_density(&a, z).unwrap();
            assert!(u >= prev_u);
            assert!(rho < prev_rho);
            prev_u = u;
            prev_rho = rho;
        }
    }

    #[test]
    fn smoothness_second_derivative_matches_analytic() {
        // d2/dz2 of u_ref (z/z_ref)^c is u_ref c (c-1) z^(c-2) / z_ref^c
        let p = WindProfile::default();
        let z = 250.0;
        let h = 0.1;
        let fd2 = (wind_speed(&p, z + h).unwrap() - 2.0 * wind_speed(&p, z).unwrap()
            + wind_speed(&p, z - h).unwrap())
            / (h * h);
        let analytic =
            p.u_ref * p.c_f * (p.c_f - 1.0) * z.powf(p.c_f - 2.0) / p.z_ref.powf(p.c_f);
        assert_relative_eq!(fd2, analytic, max_relative = 1e-6);

        // same exercise for the density profile
        let a = IsaAtmosphere::default();
        let e = a.g / (a.t_lapse * a.r_gas) - 1.0;
        let h = 0.5;
        let fd2 = (air_density(&a, z + h).unwrap() - 2.0 * air_density(&a, z).unwrap()
            + air_density(&a, z - h).unwrap())
            / (h * h);
        let base = 1.0 - a.t_lapse * z / a.t0;
        let analytic = a.rho0 * e * (e - 1.0) * (a.t_lapse / a.t0).powi(2) * base.powf(e - 2.0);
        assert_relative_eq!(fd2, analytic, max_relative = 1e-6);
    }
}
