//! Robust design against the three reduced schemes.
//!
//! cargo run --example compare_schemes

use uavsar::cli::cmd_bench;
use uavsar::config::MissionConfig;

fn main() -> uavsar::Result<()> {
    let cfg = MissionConfig::from_json(r#"{"solver": {"n_max": 4, "sim_runs": 2000}}"#)?;
    let out = std::env::temp_dir().join("uavsar-bench");
    let report = cmd_bench(&cfg, None, 7, &out)?;
    println!("{:<9} {:>4} {:>12} {:>12} {:>12}", "scheme", "N*", "coverage", "missed", "effective");
    for r in &report.rows {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
        println!(
            "{:<9} {:>4} {:>12} {:>12} {:>12}",
            r.scheme.as_str(),
            r.n_star.map_or("-".to_string(), |n| n.to_string()),
            f(r.coverage_m2),
            f(r.missed_mean_m2),
            f(r.effective_coverage_m2)
        );
    }
    println!("artifacts in {}", out.display());
    Ok(())
}
