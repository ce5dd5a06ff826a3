//! Monte-Carlo replay of a plan under per-slot Gaussian position errors.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{DerivedConstants, Plan, Trajectory};
use crate::robust::{footprint_errors, normal_quantile, Compensation, DeviationModel};

const AXES: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub runs: usize,
    pub seed: u64,
    pub dev: DeviationModel,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return invalid("at least one Monte-Carlo run is required");
        }
        self.dev.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    X = 0,
    Y = 1,
    Z = 2,
}

/// Standard normal draws for one (run, axis) pair. Each pair owns its own
/// ChaCha stream, so the result does not depend on how runs are scheduled.
fn normals(seed: u64, run: u64, axis: Axis, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run * AXES + axis as u64);
    (0..n)
        .map(|_| {
            // 53 random bits centred in their cell: never 0 or 1.
            let u = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
            normal_quantile(u).expect("u lies strictly inside (0, 1)")
        })
        .collect()
}

fn perturb(base: &[f64], offset: f64, sigma: f64, seed: u64, run: u64, axis: Axis) -> Vec<f64> {
    if sigma == 0.0 {
        return base.iter().map(|b| b + offset).collect();
    }
    base.iter()
        .zip(normals(seed, run, axis, base.len()))
        .map(|(b, g)| b + offset + sigma * g)
        .collect()
}

/// Flown positions for run `run`: the compensated plan plus independent
/// Gaussian errors per slot and axis. The azimuth error is drawn but plays
/// no part in coverage.
pub fn sample_actual_trajectory(plan: &Plan, dev: &DeviationModel, seed: u64, run: u64) -> Trajectory {
    let r = &plan.compensated;
    Trajectory {
        x: perturb(&r.x, dev.offset_x_m, dev.sigma_m, seed, run, Axis::X),
        y: perturb(&r.y, 0.0, dev.sigma_m, seed, run, Axis::Y),
        z: perturb(&r.z, dev.offset_z_m, dev.sigma_m, seed, run, Axis::Z),
    }
}

/// Ground positions of the near and far footprint edges, or `None` when the
/// platform is at or below the ground.
pub fn footprint_edges(x_m: f64, z_m: f64, c: &DerivedConstants) -> Option<(f64, f64)> {
    (z_m > 0.0).then_some((x_m + c.c1 * z_m, x_m + c.c2 * z_m))
}

/// Index in scan `n + 1` of the slot flying over the same azimuth row as
/// slot `m` of scan `n`; the direction reverses between scans.
pub fn paired_slot(n: usize, m: usize, slots_per_scan: usize) -> usize {
    (n + 1) * slots_per_scan + (slots_per_scan - 1 - m)
}

/// Uncovered area between each pair of adjacent scans, in m^2. `None` if any
/// slot is at or below the ground.
pub fn missed_area(actual: &Trajectory, plan: &Plan, c: &DerivedConstants) -> Result<Option<Vec<f64>>> {
    let (n, m) = (plan.n_scans, plan.slots_per_scan);
    if actual.x.len() != plan.n_slots() || actual.z.len() != plan.n_slots() {
        return Err(Error::Dimension(format!(
            "trajectory has {} slots, plan has {}",
            actual.x.len(),
            plan.n_slots()
        )));
    }
    let edges: Option<Vec<(f64, f64)>> =
        actual.x.iter().zip(&actual.z).map(|(&x, &z)| footprint_edges(x, z, c)).collect();
    let Some(edges) = edges else { return Ok(None) };
    let per_boundary = (0..n.saturating_sub(1))
        .map(|s| {
            (0..m)
                .map(|j| {
                    let far = edges[s * m + j].1;
                    let near = edges[paired_slot(s, j, m)].0;
                    c.delta_s_m * (near - far).max(0.0)
                })
                .sum()
        })
        .collect();
    Ok(Some(per_boundary))
}

/// Compensation baked into a plan, read back from its first slot.
pub fn plan_compensation(plan: &Plan, c: &DerivedConstants) -> Compensation {
    let dx = plan.compensated.x[0] - plan.nominal.x[0];
    let dz = plan.compensated.z[0] - plan.nominal.z[0];
    let (delta_pn_m, delta_pf_m) = footprint_errors(dx, dz, c);
    Compensation { delta_pn_m, delta_pf_m, delta_x_m: dx, delta_z_m: dz }
}

/// Slots where each edge's error stays inside its compensation margin:
/// `(near hits, far hits, slots)`.
pub fn edge_hits(actual: &Trajectory, plan: &Plan, comp: &Compensation, c: &DerivedConstants) -> (usize, usize, usize) {
    let r = &plan.compensated;
    let mut near = 0;
    let mut far = 0;
    for k in 0..r.len() {
        let (en, ef) = footprint_errors(actual.x[k] - r.x[k], actual.z[k] - r.z[k], c);
        near += usize::from(en + comp.delta_pn_m <= 0.0);
        far += usize::from(ef + comp.delta_pf_m >= 0.0);
    }
    (near, far, r.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run: u64,
    /// `None` when the run was excluded for touching the ground.
    pub missed_m2: Option<f64>,
    pub per_boundary_m2: Vec<f64>,
    pub near_frequency: f64,
    pub far_frequency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    /// Standard error of the mean.
    pub sem: f64,
}

impl Stat {
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Stat {
        let xs: Vec<f64> = xs.into_iter().collect();
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Stat { mean: f64::NAN, std: f64::NAN, sem: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Stat { mean, std: var.sqrt(), sem: (var / n).sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub runs: usize,
    pub excluded_runs: usize,
    pub n_scans: usize,
    pub compensation: Compensation,
    pub missed_m2: Stat,
    /// Missed area of each boundary over the kept runs.
    pub per_boundary_m2: Vec<Stat>,
    /// Missed area per boundary, pooled over boundaries and runs.
    pub boundary_mean_m2: Stat,
    pub near_frequency: f64,
    pub far_frequency: f64,
    pub edge_samples: usize,
    #[serde(skip)]
    pub outcomes: Vec<RunOutcome>,
}

/// Replays `plan` `cfg.runs` times. Results depend only on the plan and `cfg`.
pub fn simulate(plan: &Plan, cfg: &SimConfig, c: &DerivedConstants) -> Result<SimResult> {
    cfg.validate()?;
    let comp = plan_compensation(plan, c);
    let outcomes: Vec<(RunOutcome, usize, usize, usize)> = (0..cfg.runs as u64)
        .into_par_iter()
        .map(|run| {
            let actual = sample_actual_trajectory(plan, &cfg.dev, cfg.seed, run);
            let gaps = missed_area(&actual, plan, c)?;
            let (near, far, slots) = edge_hits(&actual, plan, &comp, c);
            let out = RunOutcome {
                run,
                missed_m2: gaps.as_ref().map(|g| g.iter().sum()),
                per_boundary_m2: gaps.unwrap_or_default(),
                near_frequency: near as f64 / slots as f64,
                far_frequency: far as f64 / slots as f64,
            };
            Ok((out, near, far, slots))
        })
        .collect::<Result<_>>()?;

    let kept: Vec<&RunOutcome> = outcomes.iter().map(|o| &o.0).filter(|o| o.missed_m2.is_some()).collect();
    let boundaries = plan.n_scans.saturating_sub(1);
    let per_boundary_m2 = (0..boundaries).map(|b| Stat::of(kept.iter().map(|o| o.per_boundary_m2[b]))).collect();
    let (near, far, slots) =
        outcomes.iter().fold((0, 0, 0), |(a, b, s), o| (a + o.1, b + o.2, s + o.3));
    Ok(SimResult {
        runs: cfg.runs,
        excluded_runs: outcomes.len() - kept.len(),
        n_scans: plan.n_scans,
        compensation: comp,
        missed_m2: Stat::of(kept.iter().filter_map(|o| o.missed_m2)),
        per_boundary_m2,
        boundary_mean_m2: Stat::of(kept.iter().flat_map(|o| o.per_boundary_m2.iter().copied())),
        near_frequency: near as f64 / slots as f64,
        far_frequency: far as f64 / slots as f64,
        edge_samples: slots,
        outcomes: outcomes.into_iter().map(|o| o.0).collect(),
    })
}

/// Expected uncovered width of one azimuth row when the gap between the
/// facing edges is Gaussian: `E[max(G, 0)]` for `G ~ N(mean, std^2)`.
pub fn expected_row_gap(mean: f64, std: f64) -> f64 {
    if std == 0.0 {
        return mean.max(0.0);
    }
    let t = mean / std;
    let pdf = (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let cdf = 0.5 * crate::robust::erfc(-t / std::f64::consts::SQRT_2);
    mean * cdf + std * pdf
}

/// Analytic mean and standard deviation of the facing-edge gap for a
/// compensation, under the deviation model.
pub fn row_gap_moments(dev: &DeviationModel, comp: &Compensation, c: &DerivedConstants) -> (f64, f64) {
    let mean = (c.c1 - c.c2) * dev.offset_z_m - comp.overlap();
    let std = dev.sigma_m * (2.0 + c.c1 * c.c1 + c.c2 * c.c2).sqrt();
    (mean, std)
}
