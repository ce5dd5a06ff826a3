//! Plan the default mission and print the per-scan altitudes.
//!
//! cargo run --example plan_mission

use uavsar::config::default_deviation;
use uavsar::model::SystemParams;
use uavsar::sca::{plan_mission, ScaConfig, Scheme};

fn main() -> uavsar::Result<()> {
    let params = SystemParams::baseline();
    let report = plan_mission(&params, &default_deviation(), Scheme::Proposed, &ScaConfig::default(), None)?;

    for r in &report.per_n {
        println!("N = {:>2}  {:?}  {:?}", r.n_scans, r.status, r.objective_m2);
    }
    println!("best N = {}, coverage {:.2} m^2 in {:.2} s", report.n_star, report.objective_m2, report.wall_time_s);
    for (s, z) in report.plan.scan_altitudes().iter().enumerate() {
        println!("scan {s}: z = {z:.3} m");
    }
    Ok(())
}
