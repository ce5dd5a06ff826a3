//! Upper bound on the best coverage for a fixed scan count.
//!
//! Each scan is reduced to one representative slot at its smallest ground
//! station distance, the backhaul constraint is split into a difference of
//! increasing functions, and the resulting monotonic program is solved by
//! polyblock outer approximation. Vertices are laid out as
//! `[z(0..N), t(0..N), p_com(0..N)]` with `z` the nominal scan altitudes.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{azimuth_positions, DerivedConstants, SystemParams};
use crate::robust::{compensation, Compensation, DeviationModel};

/// Relative slack for rounding in the radar power check.
const ROUNDING: f64 = 1e-12;

/// For each scan, the slot azimuth closest to the ground station's `g_y`.
pub fn per_scan_y(g_y: f64, aoi_length_m: f64, slots_per_scan: usize, n_scans: usize) -> Vec<f64> {
    let m = slots_per_scan;
    let y = azimuth_positions(n_scans * m, m, aoi_length_m / m as f64);
    y.chunks(m)
        .map(|scan| {
            scan.iter()
                .copied()
                .min_by(|a, b| (a - g_y).abs().total_cmp(&(b - g_y).abs()).then(a.total_cmp(b)))
                .expect("scans are nonempty")
        })
        .collect()
}

/// The per-scan monotonic program for `n_scans` scans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundProblem {
    pub n_scans: usize,
    pub y_bar: Vec<f64>,
    pub compensation: Compensation,
    /// Box `[0, v_max]` containing the normal set.
    pub v_max: Vec<f64>,
    /// `f` at the top of the altitude box, per scan.
    pub f_top: Vec<f64>,
    /// `f` at zero altitude, per scan.
    pub f_bottom: Vec<f64>,
    params: SystemParams,
    c: DerivedConstants,
}

/// Result of one bisection along a ray.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// Largest scale known to stay in the normal set.
    pub lambda: f64,
    /// Smallest scale known to leave it (1 when `lambda` is 1).
    pub lambda_out: f64,
    pub point: Vec<f64>,
}

impl BoundProblem {
    pub fn new(params: &SystemParams, n_scans: usize, dev: &DeviationModel) -> Result<Self> {
        let c = params.derived()?;
        Self::with_compensation(params, n_scans, compensation(dev, &c)?)
    }

    pub fn with_compensation(params: &SystemParams, n_scans: usize, comp: Compensation) -> Result<Self> {
        params.validate()?;
        if n_scans == 0 {
            return Err(Error::InvalidParameter("at least one scan is required".into()));
        }
        let c = params.derived()?;
        let mission = &params.mission;
        let y_bar = per_scan_y(params.comm.gs_position_m[1], mission.aoi_length_m, mission.slots_per_scan, n_scans);
        let z_top = mission.z_max_m - comp.delta_z_m;
        if !(z_top > 0.0) {
            return Err(Error::Infeasible(format!(
                "altitude compensation {:.3} m leaves no room below z_max",
                comp.delta_z_m
            )));
        }
        let mut prob = BoundProblem {
            n_scans,
            y_bar,
            compensation: comp,
            v_max: Vec::new(),
            f_top: Vec::new(),
            f_bottom: Vec::new(),
            params: params.clone(),
            c,
        };
        if prob.h(0.0) < 0.0 {
            return Err(Error::InvalidParameter(
                "rate factor is negative at zero altitude; the split needs it nonnegative".into(),
            ));
        }
        let zeros = vec![0.0; n_scans];
        prob.f_top = prob.f_g(&vec![z_top; n_scans], &zeros).0;
        prob.f_bottom = prob.f_g(&zeros, &zeros).0;
        let mut v_max = vec![z_top; n_scans];
        v_max.extend(prob.f_top.iter().zip(&prob.f_bottom).map(|(a, b)| a - b));
        v_max.extend(std::iter::repeat_n(params.comm.com_power_max_w, n_scans));
        if let Some(i) = v_max.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!("box coordinate {i} is {} ; it must be positive", v_max[i])));
        }
        prob.v_max = v_max;
        Ok(prob)
    }

    pub fn dim(&self) -> usize {
        3 * self.n_scans
    }

    pub fn constants(&self) -> &DerivedConstants {
        &self.c
    }

    /// Coverage of a vertex: `L (c2 - c1) sum(z + delta_z)`.
    pub fn objective(&self, v: &[f64]) -> f64 {
        let per_m = self.params.mission.aoi_length_m * self.c.width_slope();
        v[..self.n_scans].iter().map(|z| per_m * (z + self.compensation.delta_z_m)).sum()
    }

    /// `A 2^(alpha z^r + R_sl/B_c) - 1` at nominal altitude `z`.
    pub fn h(&self, z: f64) -> f64 {
        (self.c.ln_a_sync() + self.c.kappa() * (z + self.compensation.delta_z_m)).exp_m1()
    }

    /// Increasing functions `f` and `g` with `f - g` equal to the rate
    /// constraint's left side `h d^2 - gamma p` at each scan.
    pub fn f_g(&self, z: &[f64], p_com: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (c1, d) = (self.c.c1, self.c.width_slope());
        let gs = self.params.comm.gs_position_m;
        let gamma = self.params.comm.gamma_linear;
        let (dx, dz) = (self.compensation.delta_x_m, self.compensation.delta_z_m);
        let a = c1 * gs[0] - c1 * dx + dz - gs[2];
        let b = dx - gs[0];
        let mut f = Vec::with_capacity(self.n_scans);
        let mut g = Vec::with_capacity(self.n_scans);
        let mut s = 0.0;
        for n in 0..self.n_scans {
            let zn = z[n];
            let cn = b * b + (dz - gs[2]).powi(2) + (self.y_bar[n] - gs[1]).powi(2);
            let up = d * d * s * s
                + (1.0 + c1 * c1) * zn * zn
                + cn
                + 2.0 * zn * a.max(0.0)
                + 2.0 * d * s * b.max(0.0);
            let down = 2.0 * d * c1 * s * zn + 2.0 * zn * (-a).max(0.0) + 2.0 * d * s * (-b).max(0.0);
            let h = self.h(zn);
            f.push(h * up);
            g.push(gamma * p_com[n] + h * down);
            s += zn;
        }
        (f, g)
    }

    /// Per-scan residuals of the three split constraints (`<= 0` holds):
    /// `f + t - f_top`, `f_top - g - t`, and the distance of `t` outside `[0, f_top - f_bottom]`.
    pub fn split_residuals(&self, v: &[f64]) -> Vec<[f64; 3]> {
        let n = self.n_scans;
        let (z, t, p) = (&v[..n], &v[n..2 * n], &v[2 * n..]);
        let (f, g) = self.f_g(z, p);
        (0..n)
            .map(|i| {
                let span = self.f_top[i] - self.f_bottom[i];
                [f[i] + t[i] - self.f_top[i], self.f_top[i] - g[i] - t[i], (-t[i]).max(t[i] - span)]
            })
            .collect()
    }

    pub fn in_box(&self, v: &[f64]) -> bool {
        v.len() == self.dim() && v.iter().zip(&self.v_max).all(|(x, hi)| *x >= 0.0 && x <= hi)
    }

    /// Membership in the normal set: box, radar power, the first split
    /// constraint and the battery budget.
    pub fn in_g(&self, v: &[f64]) -> bool {
        if !self.in_box(v) {
            return false;
        }
        let n = self.n_scans;
        let beta = self.params.radar.beta_w_inv_m3;
        let dz = self.compensation.delta_z_m;
        let (z, t, p) = (&v[..n], &v[n..2 * n], &v[2 * n..]);
        let p_sar: Vec<f64> = z.iter().map(|z| (z + dz).max(0.0).powi(3) / beta).collect();
        if p_sar.iter().any(|&ps| ps > self.params.radar.sar_power_max_w * (1.0 + ROUNDING)) {
            return false;
        }
        let (f, _) = self.f_g(z, p);
        if (0..n).any(|i| f[i] + t[i] > self.f_top[i]) {
            return false;
        }
        // Every slot but the mission's last one draws energy.
        let m = self.params.mission.slots_per_scan as f64;
        let prop = self.params.prop_power();
        let mut q = self.params.energy.battery_j;
        for i in 0..n {
            let slots = if i + 1 == n { m - 1.0 } else { m };
            q -= slots * self.c.delta_t_s * (p[i] + p_sar[i] + prop);
            if q < 0.0 {
                return false;
            }
        }
        true
    }

    /// Membership in the conormal set: lowest altitude and the second split constraint.
    pub fn in_h(&self, v: &[f64]) -> bool {
        let n = self.n_scans;
        let zmin = self.params.mission.z_min_m;
        if v[..n].iter().any(|z| z + self.compensation.delta_z_m < zmin) {
            return false;
        }
        let (_, g) = self.f_g(&v[..n], &v[2 * n..]);
        (0..n).all(|i| g[i] + v[n + i] >= self.f_top[i])
    }

    /// Membership in the feasible set of the per-scan program.
    pub fn feasibility_check(&self, v: &[f64]) -> bool {
        self.in_g(v) && self.in_h(v)
    }

    /// Lowest corner of the conormal set: nominal altitudes at `z_min`.
    fn lower_corner(&self) -> Vec<f64> {
        let n = self.n_scans;
        let zlo = (self.params.mission.z_min_m - self.compensation.delta_z_m).max(0.0);
        let mut a = vec![0.0; 3 * n];
        a[..n].iter_mut().for_each(|z| *z = zlo);
        a
    }

    /// Smallest vertex `w <= v` whose box keeps every feasible point of `[0, v]`;
    /// `None` when `[0, v]` holds no feasible point.
    ///
    /// A feasible `y <= v` has `y >= a` (the conormal corner), so
    /// `t <= f_top - f(a)`, and `f(y_z) <= f_top - t <= g(v)`, which caps each
    /// altitude through the increasing `f`.
    pub fn reduce(&self, v: &[f64]) -> Option<Vec<f64>> {
        let n = self.n_scans;
        let a = self.lower_corner();
        if v.iter().zip(&a).any(|(x, lo)| x < lo) || !self.in_h(v) {
            return None;
        }
        let mut w = v.to_vec();
        let (fa, _) = self.f_g(&a[..n], &a[2 * n..]);
        for i in 0..n {
            w[n + i] = w[n + i].min(self.f_top[i] - fa[i]);
        }
        let (_, gv) = self.f_g(&v[..n], &v[2 * n..]);
        let fits = |k: usize, s: f64| -> bool {
            let mut z = a[..n].to_vec();
            z[k] = s;
            let (f, _) = self.f_g(&z, &a[2 * n..]);
            (k..n).all(|i| f[i] <= gv[i])
        };
        for k in 0..n {
            if fits(k, w[k]) {
                continue;
            }
            if !fits(k, a[k]) {
                return None;
            }
            let (mut lo, mut hi) = (a[k], w[k]);
            while hi - lo > 1e-12 * (1.0 + hi) {
                let mid = 0.5 * (lo + hi);
                if fits(k, mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            w[k] = hi;
        }
        for i in 0..n {
            if w[n + i] < self.f_top[i] - gv[i] {
                return None;
            }
        }
        Some(w)
    }

    /// Bisection for the largest `lambda` in `[0, 1]` with `lambda v` in the normal set.
    pub fn bisect_project(&self, v: &[f64], tol: f64) -> Result<Projection> {
        if v.len() != self.dim() {
            return Err(Error::Dimension(format!("vertex has {} entries, expected {}", v.len(), self.dim())));
        }
        if !(tol > 0.0 && tol < 1.0) {
            return Err(Error::InvalidParameter("bisection tolerance must lie in (0, 1)".into()));
        }
        let scaled = |l: f64| -> Vec<f64> { v.iter().map(|x| l * x).collect() };
        if self.in_g(v) {
            return Ok(Projection { lambda: 1.0, lambda_out: 1.0, point: v.to_vec() });
        }
        if !self.in_g(&vec![0.0; v.len()]) {
            return Err(Error::Infeasible(
                "the origin violates the normal set: propulsion alone exceeds the battery".into(),
            ));
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if self.in_g(&scaled(mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(Projection { lambda: lo, lambda_out: hi, point: scaled(lo) })
    }

    /// Shrinks the box to the normal set's axis intercepts. Every point of the
    /// normal set satisfies `v_i <= intercept_i`, since the set is downward closed.
    pub fn tightened_box(&self, tol: f64) -> Result<Vec<f64>> {
        let mut top = self.v_max.clone();
        for i in 0..self.dim() {
            let mut axis = vec![0.0; self.dim()];
            axis[i] = self.v_max[i];
            let pr = self.bisect_project(&axis, tol)?;
            top[i] = pr.lambda_out * self.v_max[i];
        }
        Ok(top)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyblockConfig {
    /// Termination gap in m^2; `None` means 1% of the box-corner coverage.
    pub epsilon_m2: Option<f64>,
    pub projection_tol: f64,
    pub max_vertices: usize,
    pub max_iters: usize,
}

impl Default for PolyblockConfig {
    fn default() -> Self {
        PolyblockConfig { epsilon_m2: None, projection_tol: 1e-9, max_vertices: 20_000, max_iters: 200_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundStatus {
    Converged,
    VertexCap,
    IterationCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// Coverage of the selected vertex: the running upper bound.
    pub vertex_value_m2: f64,
    /// Best feasible coverage found so far.
    pub cbv_m2: Option<f64>,
    pub vertices: usize,
    /// Vertices replaced by the cut in this iteration.
    pub replaced: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub n_scans: usize,
    /// Valid upper bound on the coverage of any plan with this scan count.
    pub upper_bound_m2: f64,
    pub cbv_m2: Option<f64>,
    pub best: Option<Vec<f64>>,
    pub iterations: usize,
    pub epsilon_m2: f64,
    pub status: BoundStatus,
    pub trace: Vec<TraceRow>,
}

impl BoundResult {
    /// Writes the convergence trace as CSV. The last row, tagged `final`,
    /// carries the certified bound.
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        writeln!(w, "# schema: bound_trace v1")?;
        writeln!(w, "iteration,vertex_value_m2,cbv_m2,vertices")?;
        for r in &self.trace {
            writeln!(w, "{},{:.6},{},{}", r.iteration, r.vertex_value_m2, opt(r.cbv_m2), r.vertices)?;
        }
        let vertices = self.trace.last().map_or(0, |r| r.vertices);
        writeln!(w, "final,{:.6},{},{}", self.upper_bound_m2, opt(self.cbv_m2), vertices)
    }
}

struct Vertex {
    coords: Vec<f64>,
    value: f64,
    /// Creation order; ties in value go to the oldest vertex so that every
    /// coordinate direction gets cut in turn.
    born: usize,
}

fn better(a: &Vertex, b: &Vertex) -> bool {
    match a.value.total_cmp(&b.value) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match a.born.cmp(&b.born) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => a.coords.iter().zip(&b.coords).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne())
                == Some(Ordering::Less),
        },
    }
}

fn dominated(v: &[f64], by: &[f64]) -> bool {
    v.iter().zip(by).all(|(a, b)| a <= b)
}

/// Polyblock outer approximation.
pub fn polyblock_solve(problem: &BoundProblem, cfg: &PolyblockConfig) -> Result<BoundResult> {
    let eps = cfg.epsilon_m2.unwrap_or(0.01 * problem.objective(&problem.v_max));
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter("polyblock tolerance must be positive".into()));
    }
    let top = problem.tightened_box(cfg.projection_tol)?;
    let mut born = 0;
    let mut make = |coords: Vec<f64>| -> Vertex {
        let value = problem.objective(&coords);
        born += 1;
        Vertex { coords, value, born }
    };
    let mut verts: Vec<Vertex> = problem.reduce(&top).into_iter().map(&mut make).collect();
    let mut cbv: Option<f64> = None;
    let mut best: Option<Vec<f64>> = None;
    let mut trace = Vec::new();
    let mut status = BoundStatus::IterationCap;
    let mut bound = f64::NEG_INFINITY;

    for k in 1..=cfg.max_iters {
        let Some(sel) = (0..verts.len()).reduce(|i, j| if better(&verts[j], &verts[i]) { j } else { i }) else {
            return Err(Error::Infeasible(format!(
                "no point of the {}-scan bound problem is feasible",
                problem.n_scans
            )));
        };
        let vk = verts[sel].coords.clone();
        let value = verts[sel].value;
        bound = value;
        let proj = problem.bisect_project(&vk, cfg.projection_tol)?;
        if proj.lambda == 1.0 {
            cbv = Some(value);
            best = Some(vk.clone());
        } else if problem.in_h(&proj.point) {
            let c = problem.objective(&proj.point);
            if cbv.is_none_or(|b| c >= b) {
                cbv = Some(c);
                best = Some(proj.point.clone());
            }
        }
        trace.push(TraceRow { iteration: k, vertex_value_m2: value, cbv_m2: cbv, vertices: verts.len(), replaced: 0 });
        if value - cbv.unwrap_or(0.0) <= eps {
            status = BoundStatus::Converged;
            break;
        }

        // Cut at the first scale known to leave the normal set: nothing at or
        // above that point is feasible, so the polyblock stays an outer cover.
        // When even the bisection's outer end is the vertex itself, fall back
        // to the inner end; the cover then errs by at most the tolerance.
        let scale = if proj.lambda_out < 1.0 { proj.lambda_out } else { proj.lambda };
        let cut: Vec<f64> = vk.iter().map(|x| scale * x).collect();
        let support: Vec<usize> = (0..cut.len()).filter(|&i| cut[i] > 0.0).collect();
        let (hit, keep): (Vec<Vertex>, Vec<Vertex>) = verts
            .into_iter()
            .partition(|v| support.iter().all(|&i| v.coords[i] > cut[i]));
        verts = keep;
        if let Some(row) = trace.last_mut() {
            row.replaced = hit.len();
        }
        let mut fresh: Vec<Vec<f64>> = Vec::new();
        for v in &hit {
            for &i in &support {
                let mut c = v.coords.clone();
                c[i] = cut[i];
                if let Some(c) = problem.reduce(&c) {
                    fresh.push(c);
                }
            }
        }
        // Only new vertices can be improper: an old vertex below a new one
        // would already have been below that vertex's parent.
        for (idx, c) in fresh.iter().enumerate() {
            let beaten = verts.iter().any(|w| dominated(c, &w.coords))
                || fresh.iter().enumerate().any(|(j, w)| j != idx && dominated(c, w) && (c != w || j < idx));
            if !beaten {
                verts.push(make(c.clone()));
            }
        }
        if verts.len() > cfg.max_vertices {
            status = BoundStatus::VertexCap;
            bound = verts.iter().map(|v| v.value).fold(f64::NEG_INFINITY, f64::max).max(cbv.unwrap_or(f64::NEG_INFINITY));
            break;
        }
    }
    if status == BoundStatus::IterationCap {
        bound = verts.iter().map(|v| v.value).fold(bound, f64::max);
    }
    Ok(BoundResult {
        n_scans: problem.n_scans,
        upper_bound_m2: bound,
        cbv_m2: cbv,
        best,
        iterations: trace.len(),
        epsilon_m2: eps,
        status,
        trace,
    })
}
