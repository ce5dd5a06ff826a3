//! Propulsion power over forward speed and how many scans the battery allows.
//!
//! cargo run --example energy_model

use uavsar::model::{propulsion_power, SystemParams};
use uavsar::sca::n_upper_bound;

fn main() -> uavsar::Result<()> {
    let mut p = SystemParams::baseline();
    for v in [0.0, 2.0, 5.0, 10.0, 15.0, 20.0, 30.0] {
        println!("v = {v:>4} m/s  P = {:.2} W", propulsion_power(&p.energy, v));
    }
    for q in [20e3, 40e3, 69_984.0, 100e3] {
        p.energy.battery_j = q;
        println!("q = {q:>7.0} J  at most {} scans", n_upper_bound(&p)?);
    }
    Ok(())
}
