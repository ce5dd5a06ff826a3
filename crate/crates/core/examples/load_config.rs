//! Parse a config with units and show the resolved SI values.
//!
//! cargo run --example load_config -- mission.json

use uavsar::config::MissionConfig;

const SAMPLE: &str = r#"{
    "radar": {"snr_min": "10 dB", "p_sar_max": "46 dBm"},
    "comm": {"p_com_max": "35 dBm", "gs_position": ["0 m", "0 m", "5 m"]},
    "energy": {"q_start": "60 kJ", "p_prop": "model"},
    "mission": {"z_max": "80 m"},
    "deviation": {"sigma": "0.5 m", "reliability": 0.9}
}"#;

fn main() -> uavsar::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => MissionConfig::load(path.as_ref())?,
        None => MissionConfig::from_json(SAMPLE)?,
    };
    let p = &cfg.params;
    println!("P_sar max {:.4} W, P_com max {:.4} W", p.radar.sar_power_max_w, p.comm.com_power_max_w);
    println!("beta {:.1}, battery {:.0} J, propulsion {:.3} W", p.radar.beta_w_inv_m3, p.energy.battery_j, p.prop_power());
    println!("deviation {:?}", cfg.deviation);
    println!("physics hash {}", cfg.physics_hash());

    match MissionConfig::from_json(r#"{"comm": {"p_com_max": "10 parsecs"}}"#) {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
