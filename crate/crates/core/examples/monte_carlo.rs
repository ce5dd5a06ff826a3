//! Replay a compensated and an uncompensated plan under random deviations.
//!
//! cargo run --example monte_carlo

use uavsar::config::default_deviation;
use uavsar::model::SystemParams;
use uavsar::robust::compensation;
use uavsar::sca::{sca_solve, ScaConfig, Scheme};
use uavsar::sim::{expected_row_gap, row_gap_moments, simulate, SimConfig};

fn main() -> uavsar::Result<()> {
    let params = SystemParams::baseline();
    let c = params.derived()?;
    let dev = default_deviation();
    let n = 3;

    for scheme in [Scheme::Bench1, Scheme::Proposed] {
        let run = sca_solve(&params, n, &dev, scheme, &ScaConfig::default())?;
        let sim = simulate(&run.plan, &SimConfig { runs: 5000, seed: 1, dev }, &c)?;
        let comp = scheme.compensation(&dev, &c)?;
        let (mean, std) = row_gap_moments(&dev, &comp, &c);
        let oracle = params.mission.slots_per_scan as f64 * c.delta_s_m * expected_row_gap(mean, std);
        println!(
            "{:<9} coverage {:>9.2} m^2  missed/boundary {:>7.3} +- {:.3} m^2 (analytic {:.3})",
            scheme.as_str(),
            run.objective_m2,
            sim.boundary_mean_m2.mean,
            sim.boundary_mean_m2.sem,
            oracle
        );
        println!("          edges kept: near {:.4}, far {:.4}", sim.near_frequency, sim.far_frequency);
    }
    let comp = compensation(&dev, &c)?;
    println!("offsets: dx = {:.4} m, dz = {:.4} m", comp.delta_x_m, comp.delta_z_m);
    Ok(())
}
