//! Certify an SCA plan against the polyblock upper bound.
//!
//! cargo run --example upper_bound -- 2

use uavsar::config::default_deviation;
use uavsar::model::SystemParams;
use uavsar::monotonic::{polyblock_solve, BoundProblem, PolyblockConfig};
use uavsar::sca::{sca_solve, ScaConfig, Scheme};

fn main() -> uavsar::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let params = SystemParams::baseline();
    let dev = default_deviation();

    let sca = sca_solve(&params, n, &dev, Scheme::Proposed, &ScaConfig::default())?;
    let bound = polyblock_solve(&BoundProblem::new(&params, n, &dev)?, &PolyblockConfig::default())?;

    println!("SCA    {:.3} m^2 after {} iterations", sca.objective_m2, sca.iterations());
    println!("bound  {:.3} m^2 ({:?}, {} iterations)", bound.upper_bound_m2, bound.status, bound.iterations);
    println!("gap    {:.4}%", 100.0 * (bound.upper_bound_m2 - sca.objective_m2) / sca.objective_m2);
    Ok(())
}
