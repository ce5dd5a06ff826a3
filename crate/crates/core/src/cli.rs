//! Batch commands behind the `uavsar` binary. Each writes schema-versioned
//! CSV/JSON artifacts into an output directory and returns its report.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{quantity, Dim, MissionConfig, Value};
use crate::error::{Error, Result};
use crate::model::{max_radar_altitude, validate_plan, Plan, SystemParams};
use crate::monotonic::{polyblock_solve, BoundProblem, BoundStatus};
use crate::sca::{plan_mission, sca_solve, PlanReport, Scheme};
use crate::sim::{expected_row_gap, row_gap_moments, simulate, SimConfig, SimResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        Error::Solver(_) => EXIT_SOLVER,
        Error::Config { .. } | Error::InvalidParameter(_) | Error::Dimension(_) | Error::Io { .. } => EXIT_CONFIG,
    }
}

/// Scan counts above this make the bound's vertex set grow impractically.
pub const BOUND_SCAN_WARN: usize = 4;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.display().to_string(), source }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).map_err(io_err(&path))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    let path = dir.join(name);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io { path: path.display().to_string(), source: e.into() })?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(&path))
}

/// CSV with a leading schema comment line.
fn write_csv<R: Serialize>(dir: &Path, name: &str, schema: &str, rows: &[R]) -> Result<()> {
    let path = dir.join(name);
    let mut w = create(dir, name)?;
    writeln!(w, "# schema: {schema}").map_err(io_err(&path))?;
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r).map_err(|e| Error::Io { path: path.display().to_string(), source: e.into() })?;
    }
    csv.flush().map_err(io_err(&path))
}

#[derive(Debug, Clone, Default)]
pub struct PlanArgs {
    pub reliability: Option<f64>,
    pub scheme: Option<Scheme>,
    pub n_max: Option<usize>,
}

/// `report.json` of the plan command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanArtifact {
    pub schema: String,
    /// Physics hash of the config file the plan was made from.
    pub config_hash: String,
    pub config: MissionConfig,
    pub report: PlanReport,
}

#[derive(Debug, Clone, Serialize)]
struct TrajectoryRow {
    slot: usize,
    x: f64,
    y: f64,
    z: f64,
    x_r: f64,
    z_r: f64,
    p_sar: f64,
    p_com: f64,
    q: f64,
}

fn trajectory_rows(plan: &Plan) -> Vec<TrajectoryRow> {
    (0..plan.n_slots())
        .map(|k| TrajectoryRow {
            slot: k + 1,
            x: plan.nominal.x[k],
            y: plan.nominal.y[k],
            z: plan.nominal.z[k],
            x_r: plan.compensated.x[k],
            z_r: plan.compensated.z[k],
            p_sar: plan.p_sar_w[k],
            p_com: plan.p_com_w[k],
            q: plan.battery_j[k],
        })
        .collect()
}

fn apply_plan_args(cfg: &MissionConfig, args: &PlanArgs) -> Result<MissionConfig> {
    let mut cfg = cfg.clone();
    if let Some(r) = args.reliability {
        cfg.deviation.reliability = r;
        cfg.deviation.validate()?;
    }
    if let Some(s) = args.scheme {
        cfg.scheme = s;
    }
    if args.n_max.is_some() {
        cfg.n_max = args.n_max;
    }
    if cfg.n_max == Some(0) {
        return Err(Error::InvalidParameter("n-max must be at least 1".into()));
    }
    Ok(cfg)
}

fn plan_with(cfg: &MissionConfig) -> Result<PlanReport> {
    let report = plan_mission(&cfg.params, &cfg.deviation, cfg.scheme, &cfg.sca, cfg.n_max)?;
    // Independent re-validation before anything is written.
    let c = cfg.params.derived()?;
    let res = validate_plan(&report.plan, &cfg.params, &c)?;
    if res.max() > crate::sca::VALIDATION_TOLERANCE {
        return Err(Error::Solver(format!("plan violates a constraint by {:.3e}", res.max())));
    }
    Ok(report)
}

/// Plans the mission and writes `trajectory.csv` and `report.json`.
pub fn cmd_plan(loaded: &MissionConfig, args: &PlanArgs, out: &Path) -> Result<PlanArtifact> {
    let cfg = apply_plan_args(loaded, args)?;
    let report = plan_with(&cfg)?;
    write_csv(out, "trajectory.csv", "trajectory v1", &trajectory_rows(&report.plan))?;
    let art = PlanArtifact { schema: "plan_report v1".into(), config_hash: loaded.physics_hash(), config: cfg, report };
    write_json(out, "report.json", &art)?;
    Ok(art)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub schema: String,
    pub config_hash: String,
    pub n_scans: usize,
    pub upper_bound_m2: f64,
    pub cbv_m2: Option<f64>,
    pub status: BoundStatus,
    pub iterations: usize,
    pub epsilon_m2: f64,
    /// SCA coverage at the same scan count, when feasible.
    pub sca_objective_m2: Option<f64>,
    /// `(bound - sca) / sca`.
    pub relative_gap: Option<f64>,
    pub warnings: Vec<String>,
}

/// Upper bound for `n` scans; writes `bound_trace.csv` and `report.json`.
pub fn cmd_bound(loaded: &MissionConfig, n: usize, epsilon_m2: Option<f64>, out: &Path) -> Result<BoundReport> {
    let cfg = loaded;
    let mut warnings = Vec::new();
    if n > BOUND_SCAN_WARN {
        warnings.push(format!(
            "{n} scans: the vertex set grows exponentially with the scan count; expect the vertex cap"
        ));
    }
    let c = cfg.params.derived()?;
    let comp = cfg.scheme.compensation(&cfg.deviation, &c)?;
    let problem = BoundProblem::with_compensation(&cfg.params, n, comp)?;
    let mut pb = cfg.bound.clone();
    if epsilon_m2.is_some() {
        pb.epsilon_m2 = epsilon_m2;
    }
    let r = polyblock_solve(&problem, &pb)?;
    if r.status != BoundStatus::Converged {
        warnings.push(format!("stopped on {:?}; the bound is valid but loose", r.status));
    }
    let sca = match sca_solve(&cfg.params, n, &cfg.deviation, cfg.scheme, &cfg.sca) {
        Ok(run) => Some(run.objective_m2),
        Err(Error::Infeasible(_)) | Err(Error::Solver(_)) => None,
        Err(e) => return Err(e),
    };
    let path = out.join("bound_trace.csv");
    let mut w = create(out, "bound_trace.csv")?;
    r.write_trace_csv(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))?;
    let report = BoundReport {
        schema: "bound_report v1".into(),
        config_hash: loaded.physics_hash(),
        n_scans: n,
        upper_bound_m2: r.upper_bound_m2,
        cbv_m2: r.cbv_m2,
        status: r.status,
        iterations: r.iterations,
        epsilon_m2: r.epsilon_m2,
        sca_objective_m2: sca,
        relative_gap: sca.map(|s| (r.upper_bound_m2 - s) / s),
        warnings,
    };
    write_json(out, "report.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCase {
    pub label: String,
    pub n_scans: usize,
    pub coverage_m2: f64,
    /// Analytic mean missed area per scan boundary.
    pub oracle_boundary_m2: f64,
    pub missed_fraction: f64,
    pub result: SimResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub schema: String,
    pub config_hash: String,
    pub seed: u64,
    pub runs: usize,
    pub cases: Vec<SimCase>,
}

#[derive(Debug, Clone, Serialize)]
struct SimRow<'a> {
    case: &'a str,
    run: u64,
    missed_area_m2: Option<f64>,
    near_frequency: f64,
    far_frequency: f64,
}

fn sim_case(label: &str, plan: &Plan, cfg: &MissionConfig, runs: usize, seed: u64) -> Result<SimCase> {
    let c = cfg.params.derived()?;
    let result = simulate(plan, &SimConfig { runs, seed, dev: cfg.deviation }, &c)?;
    let (mu, sd) = row_gap_moments(&cfg.deviation, &result.compensation, &c);
    let coverage_m2 = crate::model::coverage(plan, &c);
    Ok(SimCase {
        label: label.to_string(),
        n_scans: plan.n_scans,
        coverage_m2,
        oracle_boundary_m2: plan.slots_per_scan as f64 * c.delta_s_m * expected_row_gap(mu, sd),
        missed_fraction: result.missed_m2.mean / coverage_m2,
        result,
    })
}

fn write_sim(out: &Path, summary: &SimSummary) -> Result<()> {
    let rows: Vec<SimRow> = summary
        .cases
        .iter()
        .flat_map(|case| {
            case.result.outcomes.iter().map(|o| SimRow {
                case: &case.label,
                run: o.run,
                missed_area_m2: o.missed_m2,
                near_frequency: o.near_frequency,
                far_frequency: o.far_frequency,
            })
        })
        .collect();
    write_csv(out, "sim_runs.csv", "sim_runs v1", &rows)?;
    write_json(out, "sim_summary.json", summary)
}

pub fn read_plan(path: &Path) -> Result<PlanArtifact> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Config { path: path.display().to_string(), msg: e.to_string() })
}

/// Replays a saved plan, or without one plans the compensated and the
/// uncompensated mission and replays both. Writes `sim_summary.json` and
/// `sim_runs.csv`.
pub fn cmd_simulate(
    loaded: &MissionConfig,
    plan_path: Option<&Path>,
    runs: Option<usize>,
    seed: u64,
    out: &Path,
) -> Result<SimSummary> {
    let runs = runs.unwrap_or(loaded.sim_runs);
    let hash = loaded.physics_hash();
    let cases = match plan_path {
        Some(p) => {
            let art = read_plan(p)?;
            if art.config_hash != hash {
                return Err(Error::Config {
                    path: p.display().to_string(),
                    msg: format!("plan was made from config {} but the current config is {hash}", art.config_hash),
                });
            }
            vec![sim_case(art.report.scheme.as_str(), &art.report.plan, loaded, runs, seed)?]
        }
        None => {
            let plans: Vec<Result<PlanReport>> = [Scheme::Proposed, Scheme::Bench1]
                .into_par_iter()
                .map(|s| plan_with(&MissionConfig { scheme: s, ..loaded.clone() }))
                .collect();
            let mut cases = Vec::new();
            for p in plans {
                let p = p?;
                cases.push(sim_case(p.scheme.as_str(), &p.plan, loaded, runs, seed)?);
            }
            cases
        }
    };
    let summary = SimSummary { schema: "sim_summary v1".into(), config_hash: hash, seed, runs, cases };
    write_sim(out, &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scheme: Scheme,
    pub status: String,
    pub n_star: Option<usize>,
    pub coverage_m2: Option<f64>,
    pub missed_mean_m2: Option<f64>,
    pub missed_std_m2: Option<f64>,
    /// Coverage minus the mean missed area.
    pub effective_coverage_m2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema: String,
    pub config_hash: String,
    pub seed: u64,
    pub runs: usize,
    pub rows: Vec<BenchRow>,
}

fn status_tag(e: &Error) -> &'static str {
    match e {
        Error::Infeasible(_) => "infeasible",
        Error::Solver(_) => "solver_failure",
        _ => "error",
    }
}

/// Plans and replays every scheme; writes `bench.csv` and `report.json`.
pub fn cmd_bench(loaded: &MissionConfig, runs: Option<usize>, seed: u64, out: &Path) -> Result<BenchReport> {
    let runs = runs.unwrap_or(loaded.sim_runs);
    let rows: Vec<Result<BenchRow>> = Scheme::ALL
        .into_par_iter()
        .map(|scheme| {
            let cfg = MissionConfig { scheme, ..loaded.clone() };
            match plan_with(&cfg) {
                Ok(p) => {
                    let case = sim_case(scheme.as_str(), &p.plan, &cfg, runs, seed)?;
                    let missed = case.result.missed_m2;
                    Ok(BenchRow {
                        scheme,
                        status: "solved".into(),
                        n_star: Some(p.n_star),
                        coverage_m2: Some(p.objective_m2),
                        missed_mean_m2: Some(missed.mean),
                        missed_std_m2: Some(missed.std),
                        effective_coverage_m2: Some(p.objective_m2 - missed.mean),
                    })
                }
                Err(e @ (Error::Infeasible(_) | Error::Solver(_))) => Ok(BenchRow {
                    scheme,
                    status: status_tag(&e).into(),
                    n_star: None,
                    coverage_m2: None,
                    missed_mean_m2: None,
                    missed_std_m2: None,
                    effective_coverage_m2: None,
                }),
                Err(e) => Err(e),
            }
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    write_csv(out, "bench.csv", "bench v1", &rows)?;
    let report = BenchReport { schema: "bench_report v1".into(), config_hash: loaded.physics_hash(), seed, runs, rows };
    write_json(out, "report.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    PComMax,
    QStart,
    SnrMin,
    /// In-range (x) position of the ground station.
    GsPosition,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<SweepParam> {
        match s {
            "p_com_max" => Ok(SweepParam::PComMax),
            "q_start" => Ok(SweepParam::QStart),
            "snr_min" => Ok(SweepParam::SnrMin),
            "gs_position" => Ok(SweepParam::GsPosition),
            _ => Err(Error::Config {
                path: "--param".into(),
                msg: format!("{s:?} is not one of p_com_max, q_start, snr_min, gs_position"),
            }),
        }
    }

    fn dim(self) -> Dim {
        match self {
            SweepParam::PComMax => Dim::Power,
            SweepParam::QStart => Dim::Energy,
            SweepParam::SnrMin => Dim::Ratio,
            SweepParam::GsPosition => Dim::Length,
        }
    }

    /// Parses one sweep value, e.g. `"35 dBm"`, to SI.
    pub fn value(self, text: &str) -> Result<f64> {
        let v = match text.trim().parse::<f64>() {
            Ok(x) => Value::Num(x),
            Err(_) => Value::Text(text.to_string()),
        };
        quantity("--values", &Some(v), self.dim(), 0.0)
    }

    pub fn apply(self, params: &SystemParams, x: f64) -> SystemParams {
        let mut p = params.clone();
        match self {
            SweepParam::PComMax => p.comm.com_power_max_w = x,
            SweepParam::QStart => p.energy.battery_j = x,
            SweepParam::SnrMin => {
                p.radar.beta_w_inv_m3 *= p.radar.snr_min_linear / x;
                p.radar.snr_min_linear = x;
            }
            SweepParam::GsPosition => p.comm.gs_position_m[0] = x,
        }
        p
    }
}

/// Constraints active at a plan: altitude ceiling, radar SNR, backhaul
/// power and battery, joined with `+`.
pub fn binding_tags(report: &PlanReport, params: &SystemParams) -> String {
    let tol = 1e-6;
    let zr = report.plan.scan_altitudes();
    let top = zr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let snr_cap = max_radar_altitude(params.radar.sar_power_max_w, params.radar.beta_w_inv_m3);
    let mut tags = Vec::new();
    if top >= params.mission.z_max_m * (1.0 - tol) {
        tags.push("altitude");
    }
    if top >= snr_cap * (1.0 - tol) {
        tags.push("radar_snr");
    }
    let p_com_top = report.plan.p_com_w.iter().copied().fold(0.0, f64::max);
    if params.comm.com_power_max_w > 0.0 && p_com_top >= params.comm.com_power_max_w * (1.0 - tol) {
        tags.push("comm_power");
    }
    if report.plan.battery_j.last().is_some_and(|q| *q <= 1e-3 * params.energy.battery_j) {
        tags.push("battery");
    }
    if tags.is_empty() {
        "none".into()
    } else {
        tags.join("+")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub status: String,
    pub coverage_m2: Option<f64>,
    pub n_star: Option<usize>,
    pub binding: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema: String,
    pub config_hash: String,
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
    /// For `p_com_max` and `q_start`: whether coverage never decreased over
    /// the solved points, within the tie tolerance.
    pub nondecreasing: Option<bool>,
}

/// True when `ys` never drops by more than `rel` of the running value.
pub fn is_nondecreasing(ys: &[f64], rel: f64) -> bool {
    ys.windows(2).all(|w| w[1] >= w[0] * (1.0 - rel))
}

/// One mission plan per value; failures are recorded and the sweep goes on.
/// Writes `sweep.csv` and `report.json`.
pub fn cmd_sweep(loaded: &MissionConfig, param: SweepParam, values: &[String], out: &Path) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::Config { path: "--values".into(), msg: "no values given".into() });
    }
    let xs = values.iter().map(|v| param.value(v)).collect::<Result<Vec<_>>>()?;
    let rows: Vec<Result<SweepRow>> = xs
        .par_iter()
        .map(|&x| {
            let cfg = MissionConfig { params: param.apply(&loaded.params, x), ..loaded.clone() };
            let row = |status: &str| SweepRow {
                param,
                value: x,
                status: status.into(),
                coverage_m2: None,
                n_star: None,
                binding: String::new(),
            };
            if let Err(e) = cfg.params.validate() {
                return Ok(SweepRow { binding: e.to_string(), ..row("invalid") });
            }
            match plan_with(&cfg) {
                Ok(p) => Ok(SweepRow {
                    coverage_m2: Some(p.objective_m2),
                    n_star: Some(p.n_star),
                    binding: binding_tags(&p, &cfg.params),
                    ..row("solved")
                }),
                Err(e @ (Error::Infeasible(_) | Error::Solver(_))) => Ok(row(status_tag(&e))),
                Err(e) => Err(e),
            }
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let nondecreasing = matches!(param, SweepParam::PComMax | SweepParam::QStart).then(|| {
        let mut pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.coverage_m2.map(|c| (r.value, c))).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        is_nondecreasing(&ys, 1e-3)
    });
    write_csv(out, "sweep.csv", "sweep v1", &rows)?;
    let report =
        SweepReport { schema: "sweep_report v1".into(), config_hash: loaded.physics_hash(), param, rows, nondecreasing };
    write_json(out, "report.json", &report)?;
    Ok(report)
}
