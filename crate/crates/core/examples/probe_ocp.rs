// scratch probe binary
use awe_core::atmosphere::{IsaAtmosphere, WindProfile};
use awe_core::ocp::{initial_guess, solve_ocp, HomotopyOptions, OcpSpec};
use awe_core::vehicle::{AircraftParams, SystemModel, SystemTopology, TetherParams};

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "dual".into());
    let n: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(12);
    let topology = if which == "dual" {
        SystemTopology::dual(16.5, 8e-3)
    } else {
        SystemTopology::single()
    };
    let model = SystemModel::new(
        topology,
        AircraftParams::reference(),
        TetherParams::default(),
        WindProfile::default(),
        IsaAtmosphere::default(),
    );
    let spec = OcpSpec::new(model).with_mesh(n);
    let guess = initial_guess(&spec).unwrap();
    eprintln!("guess: R={:.1} r_loop theta={:.1} T={:.2}", guess.radius, guess.theta_e.to_degrees(), guess.period());
    let opts = HomotopyOptions {
        log_dir: Some(std::path::PathBuf::from("/tmp/probe")),
        ..HomotopyOptions::default()
    };
    let t0 = std::time::Instant::now();
    match solve_ocp(&spec, &opts, None) {
        Ok(sol) => {
            for (name, rep) in &sol.stage_reports {
                eprintln!(
                    "stage {name}: {:?} inner {} outer {} obj {:.6e} stat {:.2e} feas {:.2e}",
                    rep.status, rep.iterations, rep.outer_iterations, rep.objective, rep.kkt_stationarity, rep.kkt_feasibility
                );
            }
            let tr = &sol.trajectory;
            eprintln!(
                "solution: P={:.1} W PD={:.3} W/m2 PS={:.1} W/m2 R={:.1} theta={:.1}deg a={:.3} T={:.2}s d_t={:.1}mm",
                tr.avg_power, tr.power_density, tr.power_per_wing_area, tr.radius,
                tr.theta_e.to_degrees(), tr.induction, tr.period(), tr.free_params.tether_diameter*1e3,
            );
            eprintln!("periodicity defect {:.2e}", tr.periodicity_defect(&spec.model));
        }
        Err(e) => eprintln!("FAILED: {e}"),
    }
    eprintln!("elapsed {:.1}s", t0.elapsed().as_secs_f64());
}
