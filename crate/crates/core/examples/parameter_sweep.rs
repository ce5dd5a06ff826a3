//! Coverage against the backhaul power budget with a distant ground station.
//!
//! cargo run --example parameter_sweep

use uavsar::cli::{cmd_sweep, SweepParam};
use uavsar::config::MissionConfig;

fn main() -> uavsar::Result<()> {
    let cfg = MissionConfig::from_json(r#"{"comm": {"gs_position": ["-300 m", "30 m", "5 m"]}, "solver": {"n_max": 6}}"#)?;
    let values: Vec<String> = ["15 dBm", "20 dBm", "25 dBm", "30 dBm", "40 dBm"].iter().map(|s| s.to_string()).collect();
    let out = std::env::temp_dir().join("uavsar-sweep");
    let report = cmd_sweep(&cfg, SweepParam::PComMax, &values, &out)?;
    for r in &report.rows {
        println!("{:>8.4} W  {:<10} {:?}  binding: {}", r.value, r.status, r.coverage_m2, r.binding);
    }
    Ok(())
}
