//! Footprint compensation against the required per-edge reliability.
//!
//! cargo run --example compensation

use uavsar::model::SystemParams;
use uavsar::robust::{compensation, DeviationModel};

fn main() -> uavsar::Result<()> {
    let c = SystemParams::baseline().derived()?;
    println!("{:>6} {:>10} {:>10} {:>10} {:>10}", "r", "dpN", "dpF", "dx", "dz");
    for r in [0.5, 0.8, 0.9, 0.95, 0.99, 0.999] {
        let dev = DeviationModel { offset_x_m: 1.0, offset_z_m: -1.0, sigma_m: 0.3, reliability: r };
        let k = compensation(&dev, &c)?;
        println!(
            "{r:>6} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
            k.delta_pn_m, k.delta_pf_m, k.delta_x_m, k.delta_z_m
        );
    }
    Ok(())
}
