//! Successive convex approximation for a fixed number of scans, the outer
//! search over the scan count, and the three benchmark schemes.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    battery_trace, build_nominal_trajectory, coverage, max_radar_altitude, required_com_power, required_rate,
    scan_offsets, squared_distance, validate_plan, ConstraintResiduals, DerivedConstants, Plan, SystemParams,
};
use crate::robust::{compensation, robust_trajectory, Compensation, DeviationModel};
use crate::subproblem::{assemble, solve, AssembleOptions, ExpMode, ExpansionPoint, SolveStatus, Weighting};

/// Largest constraint residual tolerated on a returned plan.
pub const VALIDATION_TOLERANCE: f64 = 1e-6;

/// Relative tolerance under which two scan counts count as equally good.
pub const TIE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Full optimization with deviation compensation.
    Proposed,
    /// Same optimization, deviations ignored.
    Bench1,
    /// Communication power held constant over the mission.
    Bench2,
    /// Radar power held constant over the mission.
    Bench3,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Proposed, Scheme::Bench1, Scheme::Bench2, Scheme::Bench3];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Bench1 => "bench1",
            Scheme::Bench2 => "bench2",
            Scheme::Bench3 => "bench3",
        }
    }

    /// Compensation applied by this scheme.
    pub fn compensation(&self, dev: &DeviationModel, c: &DerivedConstants) -> Result<Compensation> {
        match self {
            Scheme::Bench1 => Ok(Compensation::zero()),
            _ => compensation(dev, c),
        }
    }

    fn restrict(&self, mut opts: AssembleOptions) -> AssembleOptions {
        match self {
            Scheme::Bench2 => opts.equal_com_power = true,
            Scheme::Bench3 => opts.equal_sar_power = true,
            _ => {}
        }
        opts
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown scheme {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaConfig {
    pub epsilon_rel: f64,
    pub max_iters: usize,
    /// Starting altitudes as fractions of the altitude cap, tried in order
    /// until the first subproblem is feasible.
    pub initial_altitude_fractions: Vec<f64>,
    pub weighting: Weighting,
    pub exp_mode: ExpMode,
    /// Battery reserve kept by the subproblem, as a fraction of the initial charge.
    pub battery_reserve: f64,
}

impl Default for ScaConfig {
    fn default() -> Self {
        ScaConfig {
            epsilon_rel: 1e-3,
            max_iters: 50,
            initial_altitude_fractions: vec![0.8, 0.5, 0.2],
            weighting: Weighting::Balanced,
            exp_mode: ExpMode::Auto,
            battery_reserve: 1e-5,
        }
    }
}

impl ScaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_rel > 0.0 && self.epsilon_rel.is_finite()) {
            return Err(Error::InvalidParameter("epsilon_rel must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        if self.initial_altitude_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::InvalidParameter("initial altitude fractions must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.battery_reserve) {
            return Err(Error::InvalidParameter("battery_reserve must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Result of the SCA loop for one scan count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaRun {
    pub n_scans: usize,
    /// Coverage of the returned plan, m^2.
    pub objective_m2: f64,
    pub plan: Plan,
    /// Subproblem optimum per iteration, m^2.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub residuals: ConstraintResiduals,
}

impl ScaRun {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

/// Number of scan counts worth searching: `1..=n_upper_bound`.
pub fn n_upper_bound(params: &SystemParams) -> Result<usize> {
    let c = params.derived()?;
    let m = params.mission.slots_per_scan as f64;
    let slots = params.energy.battery_j / (c.delta_t_s * params.prop_power()) + 1.0;
    Ok(((slots / m).ceil() as usize).max(1))
}

/// Highest compensated altitude allowed by the radar and the box.
fn altitude_cap(params: &SystemParams) -> f64 {
    max_radar_altitude(params.radar.sar_power_max_w, params.radar.beta_w_inv_m3).min(params.mission.z_max_m)
}

/// Runs the SCA loop for `n_scans` scans.
pub fn sca_solve(
    params: &SystemParams,
    n_scans: usize,
    dev: &DeviationModel,
    scheme: Scheme,
    cfg: &ScaConfig,
) -> Result<ScaRun> {
    params.validate()?;
    cfg.validate()?;
    if n_scans == 0 {
        return Err(Error::InvalidParameter("at least one scan is required".into()));
    }
    let c = params.derived()?;
    let comp = scheme.compensation(dev, &c)?;
    let m = params.mission.slots_per_scan;
    let (zmin, cap) = (params.mission.z_min_m, altitude_cap(params));
    if cap < zmin {
        return Err(Error::Infeasible(format!(
            "radar power supports at most {cap:.3} m, below the minimum altitude {zmin} m"
        )));
    }
    let flight_j = (n_scans * m - 1) as f64 * c.delta_t_s * params.prop_power();
    if flight_j > params.energy.battery_j {
        return Err(Error::Infeasible(format!(
            "{n_scans} scans need {flight_j:.1} J for propulsion alone, battery holds {} J",
            params.energy.battery_j
        )));
    }

    let opts = scheme.restrict(AssembleOptions {
        weighting: cfg.weighting,
        exp_mode: cfg.exp_mode,
        battery_floor_j: cfg.battery_reserve * params.energy.battery_j,
        ..AssembleOptions::default()
    });
    let project = |z_nominal: &[f64]| -> ExpansionPoint {
        let z: Vec<f64> = z_nominal
            .iter()
            .map(|&z| (z + comp.delta_z_m).clamp(zmin, cap) - comp.delta_z_m)
            .collect();
        let x = scan_offsets(&z, &c);
        ExpansionPoint { z, x }
    };

    let mut starts: Vec<f64> = cfg.initial_altitude_fractions.iter().map(|f| (f * cap).max(zmin)).collect();
    starts.push(zmin);
    let mut first = None;
    let mut last_status = SolveStatus::Infeasible;
    for z0 in starts {
        let point = project(&vec![z0 - comp.delta_z_m; n_scans]);
        let sub = assemble(params, &c, n_scans, &point, &comp, &opts)?;
        let out = solve(&sub)?;
        if out.status == SolveStatus::Optimal {
            first = Some((sub, out));
            break;
        }
        last_status = out.status;
    }
    let (mut sub, mut out) = match first {
        Some(v) => v,
        None if last_status == SolveStatus::Infeasible => {
            return Err(Error::Infeasible(format!("no feasible convex restriction for {n_scans} scans")))
        }
        None => return Err(Error::Solver(format!("subproblem for {n_scans} scans failed to converge"))),
    };

    let mut trace = vec![out.objective_m2];
    let mut converged = false;
    while trace.len() < cfg.max_iters {
        let l = &sub.layout;
        let z: Vec<f64> = (0..n_scans).map(|s| out.values[l.z(s)]).collect();
        let next_sub = assemble(params, &c, n_scans, &project(&z), &comp, &opts)?;
        let next = solve(&next_sub)?;
        if next.status != SolveStatus::Optimal {
            break;
        }
        let (prev, cur) = (trace[trace.len() - 1], next.objective_m2);
        trace.push(cur);
        sub = next_sub;
        out = next;
        if ((cur - prev) / cur).abs() <= cfg.epsilon_rel {
            converged = true;
            break;
        }
    }

    let plan = polish(params, &c, &comp, &sub.layout, &out.values, scheme)?;
    let residuals = validate_plan(&plan, params, &c)?;
    if residuals.max() > VALIDATION_TOLERANCE {
        return Err(Error::Solver(format!(
            "plan for {n_scans} scans fails re-validation: {residuals:?}"
        )));
    }
    Ok(ScaRun { n_scans, objective_m2: coverage(&plan, &c), plan, trace, converged, residuals })
}

/// Turns solver output into a plan that meets the exact constraints:
/// altitudes are projected onto the box, powers lifted to the smallest
/// values the radar and the backhaul need.
fn polish(
    params: &SystemParams,
    c: &DerivedConstants,
    comp: &Compensation,
    l: &crate::subproblem::Layout,
    values: &[f64],
    scheme: Scheme,
) -> Result<Plan> {
    let m = l.slots_per_scan;
    let n = l.n_scans;
    let (zmin, cap) = (params.mission.z_min_m, altitude_cap(params));
    let beta = params.radar.beta_w_inv_m3;
    let p_sar_max = params.radar.sar_power_max_w;
    let p_com_max = params.comm.com_power_max_w;

    let z_r: Vec<f64> = (0..n).map(|s| (values[l.z(s)] + comp.delta_z_m).clamp(zmin, cap)).collect();
    let z: Vec<f64> = z_r.iter().map(|z| z - comp.delta_z_m).collect();
    let nominal = build_nominal_trajectory(&z, c, &params.mission)?;
    let compensated = robust_trajectory(&nominal, comp);

    let mut scan_sar: Vec<f64> = (0..n)
        .map(|s| values[l.p_sar(s)].max(z_r[s].powi(3) / beta).min(p_sar_max))
        .collect();
    if scheme == Scheme::Bench3 {
        let top = scan_sar.iter().copied().fold(0.0, f64::max);
        scan_sar.iter_mut().for_each(|p| *p = top);
    }
    let p_sar_w = l.expand_per_scan(&scan_sar);

    let gs = params.comm.gs_position_m;
    let mut p_com_w: Vec<f64> = (0..l.n_slots())
        .map(|k| {
            let u = compensated.point(k);
            let need = required_com_power(
                required_rate(u[2], &params.radar, &params.comm, c),
                squared_distance(u, gs),
                &params.comm,
            );
            values[l.p_com(k)].max(need).clamp(0.0, p_com_max)
        })
        .collect();
    if scheme == Scheme::Bench2 {
        let top = p_com_w.iter().copied().fold(0.0, f64::max);
        p_com_w.iter_mut().for_each(|p| *p = top);
    }

    let nm = l.n_slots();
    let trace = battery_trace(
        &p_sar_w[..nm - 1],
        &p_com_w[..nm - 1],
        params.energy.battery_j,
        params.prop_power(),
        c.delta_t_s,
    )?;
    Ok(Plan {
        n_scans: n,
        slots_per_scan: m,
        nominal,
        compensated,
        p_sar_w,
        p_com_w,
        battery_j: trace.levels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanCountStatus {
    Solved,
    Infeasible,
    SolverFailure,
}

/// Outcome of the SCA loop at one scan count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanCountResult {
    pub n_scans: usize,
    pub status: ScanCountStatus,
    pub objective_m2: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub scheme: Scheme,
    pub compensation: Compensation,
    pub n_upper_bound: usize,
    pub n_star: usize,
    pub objective_m2: f64,
    pub per_n: Vec<ScanCountResult>,
    pub residuals: ConstraintResiduals,
    pub plan: Plan,
    /// Wall time of the search. Left out of serialized reports so that
    /// reruns produce identical bytes.
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// Searches every scan count up to the bound (or `n_max`) and keeps the
/// smallest one reaching the best coverage.
pub fn plan_mission(
    params: &SystemParams,
    dev: &DeviationModel,
    scheme: Scheme,
    cfg: &ScaConfig,
    n_max: Option<usize>,
) -> Result<PlanReport> {
    let started = Instant::now();
    params.validate()?;
    dev.validate()?;
    cfg.validate()?;
    let c = params.derived()?;
    let comp = scheme.compensation(dev, &c)?;
    let bound = n_upper_bound(params)?;
    let top = n_max.map_or(bound, |n| n.min(bound)).max(1);

    let runs: Vec<(usize, Result<ScaRun>)> =
        (1..=top).into_par_iter().map(|n| (n, sca_solve(params, n, dev, scheme, cfg))).collect();

    let mut per_n = Vec::with_capacity(runs.len());
    let mut best: Option<ScaRun> = None;
    let mut any_failure = None;
    for (n, run) in runs {
        match run {
            Ok(run) => {
                per_n.push(ScanCountResult {
                    n_scans: n,
                    status: ScanCountStatus::Solved,
                    objective_m2: Some(run.objective_m2),
                    iterations: run.iterations(),
                    converged: run.converged,
                    trace: run.trace.clone(),
                    message: None,
                });
                let better = match &best {
                    None => true,
                    Some(b) => run.objective_m2 > b.objective_m2 * (1.0 + TIE_TOLERANCE),
                };
                if better {
                    best = Some(run);
                }
            }
            Err(e) => {
                let status = match e {
                    Error::Infeasible(_) => ScanCountStatus::Infeasible,
                    Error::Solver(_) => ScanCountStatus::SolverFailure,
                    other => return Err(other),
                };
                if status == ScanCountStatus::SolverFailure {
                    any_failure.get_or_insert_with(|| e.to_string());
                }
                per_n.push(ScanCountResult {
                    n_scans: n,
                    status,
                    objective_m2: None,
                    iterations: 0,
                    converged: false,
                    trace: Vec::new(),
                    message: Some(e.to_string()),
                });
            }
        }
    }
    let best = match (best, any_failure) {
        (Some(b), _) => b,
        (None, Some(msg)) => return Err(Error::Solver(msg)),
        (None, None) => return Err(Error::Infeasible(format!("no scan count in 1..={top} admits a plan"))),
    };
    Ok(PlanReport {
        scheme,
        compensation: comp,
        n_upper_bound: bound,
        n_star: best.n_scans,
        objective_m2: best.objective_m2,
        per_n,
        residuals: best.residuals,
        plan: best.plan,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dev95() -> DeviationModel {
        DeviationModel { offset_x_m: 1.0, offset_z_m: -1.0, sigma_m: 0.3, reliability: 0.95 }
    }

    #[test]
    fn scan_bound_baseline() {
        let p = SystemParams::baseline();
        assert_eq!(n_upper_bound(&p).unwrap(), 13);
        let mut empty = p.clone();
        empty.energy.battery_j = 0.0;
        assert_eq!(n_upper_bound(&empty).unwrap(), 1);
        let mut double = p.clone();
        double.energy.battery_j *= 2.0;
        assert_eq!(n_upper_bound(&double).unwrap(), 26);
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.as_str().parse::<Scheme>().unwrap(), s);
        }
        assert!("bench4".parse::<Scheme>().is_err());
    }

    #[test]
    fn single_scan_matches_closed_form() {
        let p = SystemParams::baseline();
        let c = p.derived().unwrap();
        let run = sca_solve(&p, 1, &dev95(), Scheme::Proposed, &ScaConfig::default()).unwrap();
        let oracle = p.mission.aoi_length_m * c.width_slope() * altitude_cap(&p);
        assert_relative_eq!(run.objective_m2, oracle, max_relative = 0.02);
        assert!(run.residuals.max() <= VALIDATION_TOLERANCE);
        assert!(run.converged);
    }

    #[test]
    fn loose_tolerance_stops_after_two_iterations() {
        let p = SystemParams::baseline();
        let cfg = ScaConfig { epsilon_rel: 1.0, ..ScaConfig::default() };
        let run = sca_solve(&p, 2, &dev95(), Scheme::Proposed, &cfg).unwrap();
        assert_eq!(run.iterations(), 2);
    }

    #[test]
    fn propulsion_alone_exhausts_battery() {
        let p = SystemParams::baseline();
        let err = sca_solve(&p, 14, &dev95(), Scheme::Proposed, &ScaConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn bench1_has_no_compensation() {
        let p = SystemParams::baseline();
        let run = sca_solve(&p, 1, &dev95(), Scheme::Bench1, &ScaConfig::default()).unwrap();
        assert_eq!(run.plan.nominal, run.plan.compensated);
    }

    #[test]
    fn benchmarks_hold_their_power_fixed() {
        let mut p = SystemParams::baseline();
        p.comm.gs_position_m = [-100.0, 30.0, 5.0];
        let b2 = sca_solve(&p, 3, &dev95(), Scheme::Bench2, &ScaConfig::default()).unwrap();
        let first = b2.plan.p_com_w[0];
        assert!(b2.plan.p_com_w.iter().all(|&x| x == first));
        let b3 = sca_solve(&p, 3, &dev95(), Scheme::Bench3, &ScaConfig::default()).unwrap();
        let first = b3.plan.p_sar_w[0];
        assert!(b3.plan.p_sar_w.iter().all(|&x| x == first));
    }

    #[test]
    fn mission_with_small_battery_picks_a_feasible_count() {
        let mut p = SystemParams::baseline();
        p.energy.battery_j = 20_000.0;
        let r = plan_mission(&p, &dev95(), Scheme::Proposed, &ScaConfig::default(), None).unwrap();
        assert_eq!(r.per_n.len(), r.n_upper_bound);
        assert!(r.per_n.iter().any(|x| x.status == ScanCountStatus::Infeasible));
        let best = r
            .per_n
            .iter()
            .filter_map(|x| x.objective_m2)
            .fold(0.0, f64::max);
        assert!(r.objective_m2 >= best * (1.0 - TIE_TOLERANCE));
    }
}
