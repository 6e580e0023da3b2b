//! Cycle-averaged momentum-balance induction model.
//!
//! The reel-out trajectory sweeps a dynamic-pressure-weighted annulus; the
//! cycle-averaged main tether force acting on that annulus fixes the
//! induction factor through the actuator-disc momentum balance
//! F = 4 a (1 - a) * sum_k A_k.

use serde::{Deserialize, Serialize};

use crate::atmosphere::{air_density_s, wind_speed_s, IsaAtmosphere, WindProfile};
use crate::error::{Error, Result};
use crate::math::Scalar;

/// Cycle-averaged quantities entering the momentum balance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CycleAverages {
    /// Dynamic-pressure-weighted swept measure per aircraft (N).
    pub swept_weight: Vec<f64>,
    /// Mean main tether force over the full cycle (N).
    pub mean_tether_force: f64,
    /// Induction factor.
    pub induction: f64,
    /// Reel-out duration (s).
    pub t_reel_out: f64,
    /// Reel-in duration (s).
    pub t_reel_in: f64,
    /// Cycle period (s).
    pub period: f64,
}

/// One sampled point of a reel-out segment, as needed by the quadratures.
#[derive(Clone, Copy, Debug)]
pub struct SweptSample {
    /// Quadrature weight (s) already including interval scaling.
    pub weight: f64,
    /// Aircraft altitude (m).
    pub altitude: f64,
    /// Aircraft speed (m/s).
    pub speed: f64,
}

/// Swept-measure integrand at one point: 1/2 rho(z) u_inf(z)^2 b |qdot|.
#[inline]
pub fn swept_integrand<S: Scalar>(
    atm: &IsaAtmosphere,
    wind: &WindProfile,
    span: f64,
    altitude: S,
    speed: S,
) -> S {
    let rho = air_density_s(atm, altitude);
    let u = wind_speed_s(wind, altitude);
    S::c(0.5) * rho * u * u * S::c(span) * speed
}

/// Quadrature of the swept measure over one aircraft's reel-out samples.
pub fn swept_weight(
    samples: &[SweptSample],
    span: f64,
    atm: &IsaAtmosphere,
    wind: &WindProfile,
) -> f64 {
    samples
        .iter()
        .map(|s| s.weight * swept_integrand::<f64>(atm, wind, span, s.altitude, s.speed))
        .sum()
}

/// Mean tether force over the full cycle from reel-out samples: the model
/// takes the annulus force to vanish during reel-in, so the quadrature runs
/// over reel-out only and divides by the whole period.
pub fn mean_tether_force(weighted_forces: &[(f64, f64)], period: f64) -> f64 {
    let integral: f64 = weighted_forces.iter().map(|(w, f)| w * f).sum();
    integral / period
}

/// Induction factor from the momentum balance, closed form on [0, 1/2].
pub fn solve_induction(mean_force: f64, total_swept: f64) -> Result<f64> {
    if mean_force < 0.0 {
        return Err(Error::Domain("mean tether force must be >= 0".into()));
    }
    if mean_force > total_swept {
        return Err(Error::InfeasibleInduction {
            force: mean_force,
            swept: total_swept,
        });
    }
    if total_swept == 0.0 {
        return Ok(0.0);
    }
    Ok(0.5 * (1.0 - (1.0 - mean_force / total_swept).sqrt()))
}

/// Apparent wind vector seen by an aircraft: slowed freestream minus the
/// aircraft velocity.
pub fn apparent_wind(
    induction: f64,
    altitude: f64,
    velocity: [f64; 3],
    wind: &WindProfile,
    wind_dir: [f64; 3],
) -> [f64; 3] {
    let u = wind_speed_s::<f64>(wind, altitude.max(1.0));
    let scale = (1.0 - induction) * u;
    [
        scale * wind_dir[0] - velocity[0],
        scale * wind_dir[1] - velocity[1],
        scale * wind_dir[2] - velocity[2],
    ]
}

/// A-posteriori self-overlap screen for single-aircraft annuli: consecutive
/// loops' altitude bands, widened by half a span, must stay disjoint (or
/// the cycle must contain a single loop). Returns a warning string rather
/// than an error.
pub fn check_self_overlap(
    altitudes_per_loop: &[(f64, f64)], // (min, max) altitude per loop
    span: f64,
) -> Option<String> {
    if altitudes_per_loop.len() <= 1 {
        return None;
    }
    for (i, a) in altitudes_per_loop.iter().enumerate() {
        for b in altitudes_per_loop.iter().skip(i + 1) {
            let lo = a.0.max(b.0) - span / 2.0;
            let hi = a.1.min(b.1) + span / 2.0;
            if hi > lo {
                return Some(format!(
                    "swept annulus may self-overlap: loop bands [{:.1}, {:.1}] and [{:.1}, {:.1}] m",
                    a.0, a.1, b.0, b.1
                ));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn swept_weight_zero_for_stationary_aircraft() {
        let atm = IsaAtmosphere::default();
        let wind = WindProfile::default();
        let samples: Vec<SweptSample> = (0..10)
            .map(|_| SweptSample {
                weight: 0.5,
                altitude: 200.0,
                speed: 0.0,
            })
            .collect();
        assert_eq!(swept_weight(&samples, 5.5, &atm, &wind), 0.0);
    }

    #[test]
    fn swept_weight_constant_circle_closed_form() {
        // constant altitude z_ref, speed v_c, duration T_ro:
        // A = 1/2 rho(z_ref) u_ref^2 b v_c T_ro
        let atm = IsaAtmosphere::default();
        let wind = WindProfile::default();
        let (b, v_c, t_ro) = (5.5, 32.0, 18.0);
        let n = 12;
        let samples: Vec<SweptSample> = (0..n)
            .map(|_| SweptSample {
                weight: t_ro / n as f64,
                altitude: wind.z_ref,
                speed: v_c,
            })
            .collect();
        let rho = crate::atmosphere::air_density(&atm, wind.z_ref).unwrap();
        let expected = 0.5 * rho * wind.u_ref * wind.u_ref * b * v_c * t_ro;
        assert_relative_eq!(
            swept_weight(&samples, b, &atm, &wind),
            expected,
            max_relative = 1e-12
        );
        // linear in span
        assert_relative_eq!(
            swept_weight(&samples, 2.0 * b, &atm, &wind),
            2.0 * expected,
            max_relative = 1e-12
        );
    }

    #[test]
    fn mean_force_constant_and_ramp() {
        // constant c over reel-out T/2 averages to c/2
        let t_ro = 15.0;
        let n = 10;
        let samples: Vec<(f64, f64)> = (0..n).map(|_| (t_ro / n as f64, 800.0)).collect();
        assert_relative_eq!(mean_tether_force(&samples, 2.0 * t_ro), 400.0);
        assert_eq!(mean_tether_force(&[(1.0, 0.0); 4], 10.0), 0.0);

        // linear ramp 0 -> 1000 N over T_ro = 20 s, T = 30 s: 333.33 N
        // (trapezoid closed form; trapezoid weights are exact for a line)
        let n = 50;
        let h = 20.0 / n as f64;
        let mut samples = Vec::new();
        for i in 0..=n {
            let t = i as f64 * h;
            let w = if i == 0 || i == n { h / 2.0 } else { h };
            samples.push((w, 1000.0 * t / 20.0));
        }
        assert_relative_eq!(
            mean_tether_force(&samples, 30.0),
            1000.0 / 3.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn induction_trivial_and_derived() {
        assert_eq!(solve_induction(0.0, 100.0).unwrap(), 0.0);
        assert_relative_eq!(solve_induction(100.0, 100.0).unwrap(), 0.5);
        assert_relative_eq!(
            solve_induction(0.64 * 250.0, 250.0).unwrap(),
            0.2,
            epsilon = 1e-14
        );
        assert!(matches!(
            solve_induction(101.0, 100.0),
            Err(Error::InfeasibleInduction { .. })
        ));
    }

    /// Scalar bisection oracle for the momentum balance root.
    fn bisect_induction(force: f64, swept: f64) -> f64 {
        let g = |a: f64| 4.0 * a * (1.0 - a) * swept - force;
        let (mut lo, mut hi) = (0.0, 0.5);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(lo) * g(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn induction_round_trip_against_bisection() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let swept: f64 = rng.gen_range(1.0..1e6);
            let a: f64 = rng.gen_range(0.0..0.5);
            let force = 4.0 * a * (1.0 - a) * swept;
            let a_closed = solve_induction(force, swept).unwrap();
            assert!(
                (a_closed - a).abs() <= 1e-10 * a.max(1e-30),
                "a = {a}, recovered {a_closed}"
            );
            let a_bisect = bisect_induction(force, swept);
            assert!((a_bisect - a).abs() < 1e-9);
        }
    }

    #[test]
    fn induction_monotone_in_force() {
        let swept = 5000.0;
        let mut prev = -1.0;
        for i in 0..=100 {
            let f = swept * i as f64 / 100.0;
            let a = solve_induction(f, swept).unwrap();
            assert!(a > prev || (i == 0 && a == 0.0));
            prev = a;
        }
    }

    #[test]
    fn apparent_wind_values() {
        let wind = WindProfile::default();
        let e_x = [1.0, 0.0, 0.0];
        let ua = apparent_wind(0.0, 100.0, [0.0; 3], &wind, e_x);
        assert_relative_eq!(ua[0], 10.0, epsilon = 1e-12);
        let ua = apparent_wind(0.5, 100.0, [0.0; 3], &wind, e_x);
        assert_relative_eq!(ua[0], 5.0, epsilon = 1e-12);

        let ua = apparent_wind(0.21, 100.0, [0.0, 30.0, 0.0], &wind, e_x);
        assert_relative_eq!(ua[0], 7.9, epsilon = 1e-12);
        assert_relative_eq!(ua[1], -30.0, epsilon = 1e-12);
        let norm = (ua[0] * ua[0] + ua[1] * ua[1] + ua[2] * ua[2]).sqrt();
        assert_relative_eq!(norm, 31.022_733_599_732_954, epsilon = 1e-10);
    }

    #[test]
    fn self_overlap_warning() {
        assert!(check_self_overlap(&[(200.0, 260.0)], 5.5).is_none());
        assert!(check_self_overlap(&[(200.0, 260.0), (300.0, 350.0)], 5.5).is_none());
        assert!(check_self_overlap(&[(200.0, 260.0), (262.0, 320.0)], 5.5).is_some());
    }
}
