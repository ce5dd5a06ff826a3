//! Convex subproblem solved at every successive-convex-approximation step.
//!
//! The problem is held in a small solver-neutral representation (affine
//! expressions grouped into tagged blocks) and handed to Clarabel.

use std::fmt::{self, Write as _};

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{azimuth_positions, DerivedConstants, SystemParams};
use crate::robust::Compensation;

/// Battery levels are carried in kJ inside the subproblem.
pub const ENERGY_SCALE_J: f64 = 1e3;

/// Index layout of the decision vector.
///
/// Altitude, in-range offset and radar power are held once per scan since
/// they are constant along a scan; communication power, battery level and
/// the rate slacks are per slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub n_scans: usize,
    pub slots_per_scan: usize,
    z: usize,
    x: usize,
    p_sar: usize,
    psi: usize,
    e: usize,
    w: usize,
    v: usize,
    p_com: usize,
    q: usize,
    t: usize,
    o: usize,
    ta: usize,
    ob: usize,
    n_vars: usize,
}

impl Layout {
    pub fn n_slots(&self) -> usize {
        self.n_scans * self.slots_per_scan
    }
    pub fn n_vars(&self) -> usize {
        self.n_vars
    }
    pub fn z(&self, s: usize) -> usize {
        self.z + s
    }
    pub fn x(&self, s: usize) -> usize {
        self.x + s
    }
    pub fn p_sar(&self, s: usize) -> usize {
        self.p_sar + s
    }
    /// Slack bounding the squared compensated altitude (over `z_max`) from above.
    pub fn psi(&self, s: usize) -> usize {
        self.psi + s
    }
    /// Epigraph of `A 2^(alpha z^r) - 1`, in units of `h_scales.0`.
    pub fn e(&self, s: usize) -> usize {
        self.e + s
    }
    /// Epigraph of `(z^r - g_z)^2`, in units of `h_scales.1`.
    pub fn w(&self, s: usize) -> usize {
        self.w + s
    }
    /// Epigraph of `(x^r - g_x)^2`, in units of `h_scales.2`.
    pub fn v(&self, s: usize) -> usize {
        self.v + s
    }
    pub fn p_com(&self, k: usize) -> usize {
        self.p_com + k
    }
    /// Battery level in units of [`ENERGY_SCALE_J`].
    pub fn q(&self, k: usize) -> usize {
        self.q + k
    }
    pub fn t(&self, k: usize) -> usize {
        self.t + k
    }
    pub fn o(&self, k: usize) -> usize {
        self.o + k
    }
    /// Epigraph of `t^2 / 2`.
    pub fn ta(&self, k: usize) -> usize {
        self.ta + k
    }
    /// Epigraph of `o^2 / 2`.
    pub fn ob(&self, k: usize) -> usize {
        self.ob + k
    }
    pub fn scan_of(&self, k: usize) -> usize {
        k / self.slots_per_scan
    }

    /// Repeats per-scan values over the slots of each scan.
    pub fn expand_per_scan(&self, per_scan: &[f64]) -> Vec<f64> {
        (0..self.n_slots()).map(|k| per_scan[self.scan_of(k)]).collect()
    }

    /// Human-readable name of variable `i`.
    pub fn name(&self, i: usize) -> String {
        let groups = [
            ("z", self.z, self.n_scans),
            ("x", self.x, self.n_scans),
            ("p_sar", self.p_sar, self.n_scans),
            ("psi", self.psi, self.n_scans),
            ("e", self.e, self.n_scans),
            ("w", self.w, self.n_scans),
            ("v", self.v, self.n_scans),
            ("p_com", self.p_com, self.n_slots()),
            ("q", self.q, self.n_slots()),
            ("t", self.t, self.n_slots()),
            ("o", self.o, self.n_slots()),
            ("ta", self.ta, self.n_slots()),
            ("ob", self.ob, self.n_slots()),
        ];
        for (name, start, len) in groups {
            if i >= start && i < start + len {
                return format!("{name}[{}]", i - start);
            }
        }
        format!("var[{i}]")
    }
}

pub fn exploit_per_scan_structure(n_scans: usize, slots_per_scan: usize) -> Result<Layout> {
    if n_scans == 0 || slots_per_scan < 2 {
        return Err(Error::Dimension(format!(
            "need at least one scan and two slots per scan, got {n_scans} x {slots_per_scan}"
        )));
    }
    let n = n_scans;
    let nm = n_scans * slots_per_scan;
    let mut next = 0;
    let mut take = |len: usize| {
        let start = next;
        next += len;
        start
    };
    let (z, x, p_sar, psi, e, w, v) = (take(n), take(n), take(n), take(n), take(n), take(n), take(n));
    let (p_com, q, t, o, ta, ob) = (take(nm), take(nm), take(nm), take(nm), take(nm), take(nm));
    Ok(Layout {
        n_scans,
        slots_per_scan,
        z,
        x,
        p_sar,
        psi,
        e,
        w,
        v,
        p_com,
        q,
        t,
        o,
        ta,
        ob,
        n_vars: next,
    })
}

/// `sum terms + constant`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Affine { terms: Vec::new(), constant: c }
    }
    pub fn var(i: usize) -> Self {
        Affine { terms: vec![(i, 1.0)], constant: 0.0 }
    }
    pub fn term(mut self, i: usize, a: f64) -> Self {
        self.terms.push((i, a));
        self
    }
    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }
    pub fn scaled(mut self, a: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= a;
        }
        self.constant *= a;
        self
    }
    pub fn add(mut self, other: &Affine) -> Self {
        self.terms.extend_from_slice(&other.terms);
        self.constant += other.constant;
        self
    }
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, a)| a * x[i]).sum::<f64>() + self.constant
    }
}

/// Which constraint family of the subproblem a block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    ScanStart,
    ScanAdjacency,
    AltitudeBox,
    SnrSquare,
    SnrPower,
    SnrSlackSign,
    RateExp,
    RateAltitudeSquare,
    RateOffsetSquare,
    RateSquareT,
    RateSquareO,
    RateOverestimate,
    RateSlackT,
    RateSlackO,
    PowerBox,
    BatteryStart,
    BatteryFloor,
    BatteryUpdate,
    EqualComPower,
    EqualSarPower,
}

impl Tag {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tag::ScanStart => "scan_start",
            Tag::ScanAdjacency => "scan_adjacency",
            Tag::AltitudeBox => "altitude_box",
            Tag::SnrSquare => "snr_square",
            Tag::SnrPower => "snr_power",
            Tag::SnrSlackSign => "snr_slack_sign",
            Tag::RateExp => "rate_exp",
            Tag::RateAltitudeSquare => "rate_altitude_square",
            Tag::RateOffsetSquare => "rate_offset_square",
            Tag::RateSquareT => "rate_square_t",
            Tag::RateSquareO => "rate_square_o",
            Tag::RateOverestimate => "rate_overestimate",
            Tag::RateSlackT => "rate_slack_t",
            Tag::RateSlackO => "rate_slack_o",
            Tag::PowerBox => "power_box",
            Tag::BatteryStart => "battery_start",
            Tag::BatteryFloor => "battery_floor",
            Tag::BatteryUpdate => "battery_update",
            Tag::EqualComPower => "equal_com_power",
            Tag::EqualSarPower => "equal_sar_power",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BlockKind {
    /// `expr == 0`
    Eq(Affine),
    /// `expr <= 0`
    Le(Affine),
    /// `2 u v >= w^2`, `u, v >= 0`
    RotatedCone { u: Affine, v: Affine, w: Affine },
    /// `y exp(x / y) <= z`, `y > 0`
    ExpCone { x: Affine, y: Affine, z: Affine },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub tag: Tag,
    pub index: usize,
    pub kind: BlockKind,
}

impl Block {
    fn new(tag: Tag, index: usize, kind: BlockKind) -> Self {
        Block { tag, index, kind }
    }

    /// Amount by which `x` violates the block (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        match &self.kind {
            BlockKind::Eq(e) => e.eval(x).abs(),
            BlockKind::Le(e) => e.eval(x).max(0.0),
            BlockKind::RotatedCone { u, v, w } => {
                let (u, v, w) = (u.eval(x), v.eval(x), w.eval(x));
                let gap = ((u + v) * (u + v)).max(0.0).sqrt() - ((u - v).powi(2) + 2.0 * w * w).sqrt();
                (-gap).max(-(u + v)).max(0.0)
            }
            BlockKind::ExpCone { x: a, y, z } => {
                let (a, y, z) = (a.eval(x), y.eval(x), z.eval(x));
                if y <= 0.0 {
                    return f64::INFINITY;
                }
                (y * (a / y).exp() - z).max(0.0)
            }
        }
    }
}

/// First-order expansion `value + slope * (p - center)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearForm {
    pub center: f64,
    pub value: f64,
    pub slope: f64,
}

impl LinearForm {
    pub fn eval(&self, p: f64) -> f64 {
        self.value + self.slope * (p - self.center)
    }
}

/// Nominal per-scan altitude and in-range offset around which the
/// nonconvex terms are linearized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionPoint {
    pub z: Vec<f64>,
    pub x: Vec<f64>,
}

/// `(A 2^(alpha z^r + R_sl/B_c) - 1, (z^r - g_z)^2, (x^r - g_x)^2)` at compensated coordinates.
pub fn h_functions(z_r: f64, x_r: f64, gs: [f64; 3], c: &DerivedConstants) -> (f64, f64, f64) {
    let h1 = (c.ln_a_sync() + c.kappa() * z_r).exp_m1();
    (h1, (z_r - gs[2]).powi(2), (x_r - gs[0]).powi(2))
}

/// Exact path-loss/rate term `h1 * d^2` of the backhaul constraint.
pub fn rate_term(z_r: f64, x_r: f64, y: f64, gs: [f64; 3], c: &DerivedConstants) -> f64 {
    let (h1, h2, h3) = h_functions(z_r, x_r, gs, c);
    h1 * (h2 + h3 + (y - gs[1]).powi(2))
}

/// Taylor minorants of `f_i = h_i^2 / 2` around one scan's expansion point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaylorForms {
    pub f1: LinearForm,
    pub f2: LinearForm,
    pub f3: LinearForm,
}

/// Tangent minorants at compensated coordinates `(z_r, x_r)`.
pub fn taylor_underestimates(z_r: f64, x_r: f64, gs: [f64; 3], c: &DerivedConstants) -> TaylorForms {
    let (h1, h2, h3) = h_functions(z_r, x_r, gs, c);
    let dz = z_r - gs[2];
    let dx = x_r - gs[0];
    TaylorForms {
        f1: LinearForm { center: z_r, value: 0.5 * h1 * h1, slope: h1 * (h1 + 1.0) * c.kappa() },
        f2: LinearForm { center: z_r, value: 0.5 * h2 * h2, slope: 2.0 * dz.powi(3) },
        f3: LinearForm { center: x_r, value: 0.5 * h3 * h3, slope: 2.0 * dx.powi(3) },
    }
}

/// How the products `h1 h2` and `h1 h3` are split into differences of squares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `h1 h = ((h1 + h)^2 - h1^2 - h^2) / 2`.
    Unit,
    /// `h1 h = ((k h1 + h/k)^2 - k^2 h1^2 - h^2/k^2) / 2` with `k^2 = h / h1`
    /// at the expansion point, so both squares have the same magnitude.
    #[default]
    Balanced,
}

/// Per-scan split weights `(k_a, k_b)` for the altitude and offset products.
pub fn split_weights(forms_h: (f64, f64, f64), weighting: Weighting) -> (f64, f64) {
    match weighting {
        Weighting::Unit => (1.0, 1.0),
        Weighting::Balanced => {
            let (h1, h2, h3) = forms_h;
            ((h2.max(1.0) / h1).sqrt(), (h3.max(1.0) / h1).sqrt())
        }
    }
}

/// Units of the `h1`, `h2`, `h3` epigraph variables: their values at the
/// expansion point, floored away from zero.
pub fn reference_scales(h: (f64, f64, f64)) -> (f64, f64, f64) {
    (h.0, h.1.max(1.0), h.2.max(1.0))
}

/// Left side of the convexified rate constraint (without the `-gamma p`
/// term), with the slacks set tight.
pub fn overestimate_lhs(
    forms: &TaylorForms,
    weights: (f64, f64),
    z_r: f64,
    x_r: f64,
    y: f64,
    gs: [f64; 3],
    c: &DerivedConstants,
) -> f64 {
    let (ka, kb) = weights;
    let (h1, h2, h3) = h_functions(z_r, x_r, gs, c);
    let t = ka * h1 + h2 / ka;
    let o = kb * h1 + h3 / kb;
    0.5 * t * t + 0.5 * o * o
        - (ka * ka + kb * kb) * forms.f1.eval(z_r)
        - forms.f2.eval(z_r) / (ka * ka)
        - forms.f3.eval(x_r) / (kb * kb)
        + h1 * (y - gs[1]).powi(2)
}

/// `scale psi >= z_r^2`, `beta p_sar z_r >= (scale psi)^2`, `psi >= 0`.
///
/// Together they imply `z_r^3 <= beta p_sar`. `scale` only rescales the
/// slack so that all cone entries have similar magnitude.
pub fn snr_cone_blocks(z_r: Affine, p_sar: Affine, psi: Affine, beta: f64, scale: f64, index: usize) -> [Block; 3] {
    [
        Block::new(
            Tag::SnrSquare,
            index,
            BlockKind::RotatedCone { u: psi.clone(), v: Affine::constant(0.5 * scale), w: z_r.clone() },
        ),
        Block::new(
            Tag::SnrPower,
            index,
            BlockKind::RotatedCone { u: p_sar.scaled(0.5 * beta / (scale * scale)), v: z_r, w: psi.clone() },
        ),
        Block::new(Tag::SnrSlackSign, index, BlockKind::Le(psi.scaled(-1.0))),
    ]
}

/// Encoding of the convex term `A 2^(alpha z^r) - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpMode {
    /// Exact exponential-cone epigraph.
    Cone,
    /// Chord over the altitude box: a linear overestimate, valid on the box.
    Chord,
    /// `Chord` when its worst-case excess over `h1` is below
    /// [`CHORD_SLACK`] of `h1`, `Cone` otherwise.
    #[default]
    Auto,
}

/// Relative excess of the chord over `h1` accepted by [`ExpMode::Auto`].
pub const CHORD_SLACK: f64 = 1e-4;

/// Largest relative gap between the chord of `h1` over `[z_min, z_max]` and `h1` itself.
pub fn chord_excess(z_min: f64, z_max: f64, c: &DerivedConstants) -> f64 {
    let k = c.kappa();
    let top = (c.ln_a_sync() + k * z_max).exp();
    let floor = (c.ln_a_sync() + k * z_min).exp_m1();
    k * k * top * (z_max - z_min).powi(2) / 8.0 / floor
}

impl ExpMode {
    /// Replaces `Auto` with the concrete encoding for this parameter set.
    pub fn resolve(self, z_min: f64, z_max: f64, c: &DerivedConstants) -> ExpMode {
        match self {
            ExpMode::Auto if chord_excess(z_min, z_max, c) <= CHORD_SLACK => ExpMode::Chord,
            ExpMode::Auto => ExpMode::Cone,
            other => other,
        }
    }
}

/// Restrictions that turn the proposed scheme into a benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssembleOptions {
    pub equal_com_power: bool,
    pub equal_sar_power: bool,
    pub weighting: Weighting,
    pub exp_mode: ExpMode,
    /// Lowest admissible battery level, J.
    pub battery_floor_j: f64,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions {
            equal_com_power: false,
            equal_sar_power: false,
            weighting: Weighting::Balanced,
            exp_mode: ExpMode::Auto,
            battery_floor_j: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicSubproblem {
    pub layout: Layout,
    /// Coverage in m^2 as an affine function of the variables (maximized).
    pub objective: Affine,
    pub blocks: Vec<Block>,
    /// Per-scan units of the `e`, `w`, `v` epigraph variables.
    pub h_scales: Vec<(f64, f64, f64)>,
}

impl ConicSubproblem {
    pub fn count(&self, tag: Tag) -> usize {
        self.blocks.iter().filter(|b| b.tag == tag).count()
    }

    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.blocks.iter().map(|b| b.violation(x)).fold(0.0, f64::max)
    }

    /// The most violated block and its violation.
    pub fn worst_block(&self, x: &[f64]) -> Option<(Tag, usize, f64)> {
        self.blocks
            .iter()
            .map(|b| (b.tag, b.index, b.violation(x)))
            .max_by(|a, b| a.2.total_cmp(&b.2))
    }

    /// Canonical text form, one constraint per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let l = &self.layout;
        let _ = writeln!(out, "# conic subproblem: {} variables, {} blocks", l.n_vars(), self.blocks.len());
        let _ = writeln!(out, "maximize {}", AffineDisplay(&self.objective, l));
        for b in &self.blocks {
            let _ = match &b.kind {
                BlockKind::Eq(e) => writeln!(out, "{}[{}]: {} == 0", b.tag.as_str(), b.index, AffineDisplay(e, l)),
                BlockKind::Le(e) => writeln!(out, "{}[{}]: {} <= 0", b.tag.as_str(), b.index, AffineDisplay(e, l)),
                BlockKind::RotatedCone { u, v, w } => writeln!(
                    out,
                    "{}[{}]: rsoc({} ; {} ; {})",
                    b.tag.as_str(),
                    b.index,
                    AffineDisplay(u, l),
                    AffineDisplay(v, l),
                    AffineDisplay(w, l)
                ),
                BlockKind::ExpCone { x, y, z } => writeln!(
                    out,
                    "{}[{}]: exp({} ; {} ; {})",
                    b.tag.as_str(),
                    b.index,
                    AffineDisplay(x, l),
                    AffineDisplay(y, l),
                    AffineDisplay(z, l)
                ),
            };
        }
        out
    }
}

struct AffineDisplay<'a>(&'a Affine, &'a Layout);

impl fmt::Display for AffineDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in &self.0.terms {
            write!(f, "{a:+e} {} ", self.1.name(*i))?;
        }
        write!(f, "{:+e}", self.0.constant)
    }
}

/// Builds the convex subproblem around `point` (nominal coordinates).
pub fn assemble(
    params: &SystemParams,
    c: &DerivedConstants,
    n_scans: usize,
    point: &ExpansionPoint,
    comp: &Compensation,
    opts: &AssembleOptions,
) -> Result<ConicSubproblem> {
    let m = params.mission.slots_per_scan;
    let l = exploit_per_scan_structure(n_scans, m)?;
    if point.z.len() != n_scans || point.x.len() != n_scans {
        return Err(Error::Dimension(format!(
            "expansion point has {} altitudes and {} offsets for {n_scans} scans",
            point.z.len(),
            point.x.len()
        )));
    }
    let gs = params.comm.gs_position_m;
    let (dx, dz) = (comp.delta_x_m, comp.delta_z_m);
    let nm = l.n_slots();
    let y = azimuth_positions(nm, m, c.delta_s_m);
    let mut blocks = Vec::new();
    let mut push = |tag, index, kind| blocks.push(Block::new(tag, index, kind));

    let z_r = |s: usize| Affine::var(l.z(s)).plus(dz);
    let x_r = |s: usize| Affine::var(l.x(s)).plus(dx);

    // Trajectory shape: first scan starts at the AoI edge, scans abut.
    push(Tag::ScanStart, 0, BlockKind::Eq(Affine::var(l.x(0)).term(l.z(0), c.c1)));
    for s in 1..n_scans {
        let e = Affine::var(l.x(s))
            .term(l.x(s - 1), -1.0)
            .term(l.z(s - 1), -c.c2)
            .term(l.z(s), c.c1);
        push(Tag::ScanAdjacency, s, BlockKind::Eq(e));
    }

    let (zmin, zmax) = (params.mission.z_min_m, params.mission.z_max_m);
    for s in 0..n_scans {
        push(Tag::AltitudeBox, s, BlockKind::Le(z_r(s).scaled(-1.0).plus(zmin)));
        push(Tag::AltitudeBox, s, BlockKind::Le(z_r(s).plus(-zmax)));
    }

    for s in 0..n_scans {
        for b in snr_cone_blocks(z_r(s), Affine::var(l.p_sar(s)), Affine::var(l.psi(s)), params.radar.beta_w_inv_m3, zmax, s) {
            push(b.tag, b.index, b.kind);
        }
    }

    // Backhaul constraint, convexified around the expansion point.
    let gamma = params.comm.gamma_linear;
    let mut refs = Vec::with_capacity(n_scans);
    for s in 0..n_scans {
        let (zc, xc) = (point.z[s] + dz, point.x[s] + dx);
        let hs = h_functions(zc, xc, gs, c);
        let (ka, kb) = split_weights(hs, opts.weighting);
        let (r1, r2, r3) = reference_scales(hs);
        refs.push((r1, r2, r3));
        let forms = taylor_underestimates(zc, xc, gs, c);

        match opts.exp_mode.resolve(zmin, zmax, c) {
            ExpMode::Cone | ExpMode::Auto => push(
                Tag::RateExp,
                s,
                // The cone is homogeneous; scaling by 1/r1 keeps the epigraph
                // variable's coefficient at unity.
                BlockKind::ExpCone {
                    x: z_r(s).scaled(c.kappa()).plus(c.ln_a_sync()).scaled(1.0 / r1),
                    y: Affine::constant(1.0 / r1),
                    z: Affine::var(l.e(s)).plus(1.0 / r1),
                },
            ),
            ExpMode::Chord => {
                let lo = h_functions(zmin, 0.0, gs, c).0;
                let hi = h_functions(zmax, 0.0, gs, c).0;
                let slope = (hi - lo) / (zmax - zmin);
                push(
                    Tag::RateExp,
                    s,
                    BlockKind::Le(z_r(s).plus(-zmin).scaled(slope).plus(lo).term(l.e(s), -r1)),
                );
            }
        }
        push(
            Tag::RateAltitudeSquare,
            s,
            BlockKind::RotatedCone { u: Affine::var(l.w(s)), v: Affine::constant(0.5 * r2), w: z_r(s).plus(-gs[2]) },
        );
        push(
            Tag::RateOffsetSquare,
            s,
            BlockKind::RotatedCone { u: Affine::var(l.v(s)), v: Affine::constant(0.5 * r3), w: x_r(s).plus(-gs[0]) },
        );

        // Linear minorant of (ka^2 + kb^2) f1 + f2 / ka^2 + f3 / kb^2.
        let k1 = ka * ka + kb * kb;
        let slope_z = k1 * forms.f1.slope + forms.f2.slope / (ka * ka);
        let slope_x = forms.f3.slope / (kb * kb);
        let value = k1 * forms.f1.value + forms.f2.value / (ka * ka) + forms.f3.value / (kb * kb);
        let minorant = Affine::var(l.z(s))
            .scaled(slope_z)
            .term(l.x(s), slope_x)
            .plus(value + slope_z * (dz - zc) + slope_x * (dx - xc));

        for k in s * m..(s + 1) * m {
            push(
                Tag::RateSlackT,
                k,
                BlockKind::Le(Affine::var(l.e(s)).scaled(ka * r1).term(l.w(s), r2 / ka).term(l.t(k), -1.0)),
            );
            push(
                Tag::RateSlackO,
                k,
                BlockKind::Le(Affine::var(l.e(s)).scaled(kb * r1).term(l.v(s), r3 / kb).term(l.o(k), -1.0)),
            );
            push(
                Tag::RateSquareT,
                k,
                BlockKind::RotatedCone { u: Affine::var(l.ta(k)), v: Affine::constant(1.0), w: Affine::var(l.t(k)) },
            );
            push(
                Tag::RateSquareO,
                k,
                BlockKind::RotatedCone { u: Affine::var(l.ob(k)), v: Affine::constant(1.0), w: Affine::var(l.o(k)) },
            );
            let e = Affine::var(l.ta(k))
                .term(l.ob(k), 1.0)
                .add(&minorant.clone().scaled(-1.0))
                .term(l.e(s), r1 * (y[k] - gs[1]).powi(2))
                .term(l.p_com(k), -gamma);
            push(Tag::RateOverestimate, k, BlockKind::Le(e));
        }
    }

    for s in 0..n_scans {
        push(Tag::PowerBox, s, BlockKind::Le(Affine::var(l.p_sar(s)).scaled(-1.0)));
        push(Tag::PowerBox, s, BlockKind::Le(Affine::var(l.p_sar(s)).plus(-params.radar.sar_power_max_w)));
    }
    for k in 0..nm {
        push(Tag::PowerBox, k, BlockKind::Le(Affine::var(l.p_com(k)).scaled(-1.0)));
        push(Tag::PowerBox, k, BlockKind::Le(Affine::var(l.p_com(k)).plus(-params.comm.com_power_max_w)));
    }

    let dt = c.delta_t_s / ENERGY_SCALE_J;
    push(Tag::BatteryStart, 0, BlockKind::Eq(Affine::var(l.q(0)).plus(-params.energy.battery_j / ENERGY_SCALE_J)));
    for k in 0..nm {
        push(
            Tag::BatteryFloor,
            k,
            BlockKind::Le(Affine::var(l.q(k)).scaled(-1.0).plus(opts.battery_floor_j / ENERGY_SCALE_J)),
        );
    }
    let prop = params.prop_power();
    for k in 0..nm - 1 {
        let e = Affine::var(l.q(k + 1))
            .term(l.q(k), -1.0)
            .term(l.p_com(k), dt)
            .term(l.p_sar(l.scan_of(k)), dt)
            .plus(dt * prop);
        push(Tag::BatteryUpdate, k, BlockKind::Eq(e));
    }

    if opts.equal_com_power {
        for k in 1..nm {
            push(Tag::EqualComPower, k, BlockKind::Eq(Affine::var(l.p_com(k)).term(l.p_com(0), -1.0)));
        }
    }
    if opts.equal_sar_power {
        for s in 1..n_scans {
            push(Tag::EqualSarPower, s, BlockKind::Eq(Affine::var(l.p_sar(s)).term(l.p_sar(0), -1.0)));
        }
    }

    let per_scan = m as f64 * c.delta_s_m * c.width_slope();
    let mut objective = Affine::constant(per_scan * dz * n_scans as f64);
    for s in 0..n_scans {
        objective = objective.term(l.z(s), per_scan);
    }
    Ok(ConicSubproblem { layout: l, objective, blocks, h_scales: refs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub objective_m2: f64,
    pub values: Vec<f64>,
    pub iterations: u32,
}

/// Interior-point iteration cap.
pub const SOLVER_MAX_ITER: u32 = 500;

/// Solves the subproblem with Clarabel.
pub fn solve(sub: &ConicSubproblem) -> Result<SolveOutcome> {
    let n = sub.layout.n_vars();
    let mut rows: Vec<(usize, usize, f64)> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();

    // Each cone row holds `s = b - A x`, i.e. A = -terms, b = constant.
    let emit = |e: &Affine, sign: f64, rows: &mut Vec<(usize, usize, f64)>, b: &mut Vec<f64>| {
        let r = b.len();
        for &(i, a) in &e.terms {
            rows.push((r, i, -sign * a));
        }
        b.push(sign * e.constant);
    };

    let eqs: Vec<&Affine> = sub
        .blocks
        .iter()
        .filter_map(|bl| if let BlockKind::Eq(e) = &bl.kind { Some(e) } else { None })
        .collect();
    for e in &eqs {
        emit(e, 1.0, &mut rows, &mut b);
    }
    if !eqs.is_empty() {
        cones.push(SupportedConeT::ZeroConeT(eqs.len()));
    }
    let les: Vec<&Affine> = sub
        .blocks
        .iter()
        .filter_map(|bl| if let BlockKind::Le(e) = &bl.kind { Some(e) } else { None })
        .collect();
    for e in &les {
        emit(e, -1.0, &mut rows, &mut b);
    }
    if !les.is_empty() {
        cones.push(SupportedConeT::NonnegativeConeT(les.len()));
    }
    for bl in &sub.blocks {
        if let BlockKind::RotatedCone { u, v, w } = &bl.kind {
            emit(&u.clone().add(v), 1.0, &mut rows, &mut b);
            emit(&u.clone().add(&v.clone().scaled(-1.0)), 1.0, &mut rows, &mut b);
            emit(&w.clone().scaled(std::f64::consts::SQRT_2), 1.0, &mut rows, &mut b);
            cones.push(SupportedConeT::SecondOrderConeT(3));
        }
    }
    for bl in &sub.blocks {
        if let BlockKind::ExpCone { x, y, z } = &bl.kind {
            emit(x, 1.0, &mut rows, &mut b);
            emit(y, 1.0, &mut rows, &mut b);
            emit(z, 1.0, &mut rows, &mut b);
            cones.push(SupportedConeT::ExponentialConeT());
        }
    }

    let (ri, (ci, vi)): (Vec<usize>, (Vec<usize>, Vec<f64>)) =
        rows.into_iter().map(|(r, c, v)| (r, (c, v))).unzip();
    let a = CscMatrix::new_from_triplets(b.len(), n, ri, ci, vi);
    let p = CscMatrix::zeros((n, n));
    let mut q = vec![0.0; n];
    for &(i, coef) in &sub.objective.terms {
        q[i] -= coef;
    }
    let settings = DefaultSettingsBuilder::default()
        .verbose(std::env::var("UAVSAR_DEBUG_SOLVER").is_ok_and(|v| v == "2"))
        .max_iter(SOLVER_MAX_ITER)
        .build()
        .map_err(|e| Error::Solver(format!("settings: {e:?}")))?;
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
        .map_err(|e| Error::Solver(format!("setup: {e:?}")))?;
    solver.solve();
    let sol = &solver.solution;
    let status = match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        _ => SolveStatus::NumericalFailure,
    };
    let values = sol.x.clone();
    let objective_m2 = if status == SolveStatus::Optimal { sub.objective.eval(&values) } else { f64::NAN };
    Ok(SolveOutcome { status, objective_m2, values, iterations: sol.iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_nominal_trajectory, scan_offsets, squared_distance};
    use crate::robust::{compensation, robust_trajectory, DeviationModel};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn t3() -> (SystemParams, DerivedConstants) {
        let p = SystemParams::baseline();
        let c = p.derived().unwrap();
        (p, c)
    }

    fn point(z: &[f64], c: &DerivedConstants) -> ExpansionPoint {
        ExpansionPoint { z: z.to_vec(), x: scan_offsets(z, c) }
    }

    #[test]
    fn layout_counts() {
        let l = exploit_per_scan_structure(3, 100).unwrap();
        assert_eq!((l.z(2) - l.z(0) + 1, l.x(2) - l.x(0) + 1, l.p_sar(2) - l.p_sar(0) + 1), (3, 3, 3));
        assert_eq!(l.p_com(299) - l.p_com(0) + 1, 300);
        assert_eq!(l.n_vars(), 7 * 3 + 6 * 300);
        let one = exploit_per_scan_structure(1, 2).unwrap();
        assert_eq!(one.n_slots(), 2);
        assert!(exploit_per_scan_structure(0, 10).is_err());
        assert!(exploit_per_scan_structure(2, 1).is_err());
        let vals = l.expand_per_scan(&[1.0, 2.0, 3.0]);
        assert!(vals[..100].iter().all(|&v| v == 1.0) && vals[200..].iter().all(|&v| v == 3.0));
        let names: std::collections::HashSet<String> = (0..l.n_vars()).map(|i| l.name(i)).collect();
        assert_eq!(names.len(), l.n_vars());
    }

    #[test]
    fn snr_cone_boundary_is_tight() {
        let z = 1e4f64.cbrt();
        let vals = [z, 1.0, z * z];
        let bl = snr_cone_blocks(Affine::var(0), Affine::var(1), Affine::var(2), 1e4, 1.0, 0);
        assert!(bl.iter().all(|b| b.violation(&vals) < 1e-9));
        let zero = [0.0, 0.0, 0.0];
        assert!(bl.iter().all(|b| b.violation(&zero) == 0.0));
    }

    #[test]
    fn snr_cones_match_cubic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let bl = snr_cone_blocks(Affine::var(0), Affine::var(1), Affine::var(2), 1e4, 1.0, 0);
        for _ in 0..1000 {
            let z: f64 = rng.gen_range(0.0..100.0);
            let p: f64 = rng.gen_range(0.0..60.0);
            let cubic = z.powi(3) <= 1e4 * p;
            let cone = bl.iter().all(|b| b.violation(&[z, p, z * z]) <= 1e-9 * (1.0 + z.powi(3)));
            let margin = (z.powi(3) - 1e4 * p).abs() / z.powi(3).max(1.0);
            if margin > 1e-8 {
                assert_eq!(cubic, cone, "z={z} p={p}");
            }
        }
    }

    #[test]
    fn h_function_values() {
        let (p, c) = t3();
        let gs = p.comm.gs_position_m;
        let (h1, _, _) = h_functions(0.0, 3.0, gs, &c);
        assert_relative_eq!(h1, 1.1e-4f64.exp2() - 1.0, max_relative = 1e-12);
        let mut quiet = p.clone();
        quiet.comm.sync_rate_bps = 0.0;
        let cq = quiet.derived().unwrap();
        assert_relative_eq!(h_functions(0.0, 3.0, gs, &cq).0, 6.9317e-5, epsilon = 1e-9);
        let (_, h2, h3) = h_functions(gs[2], gs[0], gs, &c);
        assert_eq!((h2, h3), (0.0, 0.0));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (z, x, y) = (rng.gen_range(0.0..100.0), rng.gen_range(-200.0..200.0), rng.gen_range(0.0..60.0));
            let (h1, h2, h3) = h_functions(z, x, gs, &c);
            let direct = (c.big_a * (c.alpha * z + c.sync_ratio).exp2() - 1.0) * squared_distance([x, y, z], gs);
            assert_relative_eq!(h1 * h2 + h1 * h3 + h1 * (y - gs[1]).powi(2), direct, max_relative = 1e-9);
        }
    }

    #[test]
    fn taylor_minorants() {
        let (p, c) = t3();
        let gs = p.comm.gs_position_m;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let (zc, xc) = (rng.gen_range(2.0..100.0), rng.gen_range(-300.0..300.0));
            let (zp, xp) = (rng.gen_range(2.0..100.0), rng.gen_range(-300.0..300.0));
            let f = taylor_underestimates(zc, xc, gs, &c);
            let (h1, h2, h3) = h_functions(zp, xp, gs, &c);
            assert!(f.f1.eval(zp) <= 0.5 * h1 * h1 + 1e-9);
            assert!(f.f2.eval(zp) <= 0.5 * h2 * h2 + 1e-9 * (0.5 * h2 * h2).max(1.0));
            assert!(f.f3.eval(xp) <= 0.5 * h3 * h3 + 1e-9 * (0.5 * h3 * h3).max(1.0));
            let (h1c, h2c, h3c) = h_functions(zc, xc, gs, &c);
            assert_eq!(f.f1.eval(zc), 0.5 * h1c * h1c);
            assert_eq!(f.f2.eval(zc), 0.5 * h2c * h2c);
            assert_eq!(f.f3.eval(xc), 0.5 * h3c * h3c);
        }
        let xj = 37.0;
        let f3 = |x: f64| 0.5 * h_functions(10.0, x, gs, &c).2.powi(2);
        let step = 1e-5;
        let fd = (f3(xj + step) - f3(xj - step)) / (2.0 * step);
        let slope = taylor_underestimates(10.0, xj, gs, &c).f3.slope;
        assert_relative_eq!(slope, 2.0 * (xj - gs[0]) * h_functions(10.0, xj, gs, &c).2, max_relative = 1e-12);
        assert!(((fd - slope) / slope).abs() < 1e-6);
    }

    #[test]
    fn overestimate_dominates_rate_term() {
        let (p, c) = t3();
        let gs = p.comm.gs_position_m;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for weighting in [Weighting::Unit, Weighting::Balanced] {
            for _ in 0..1000 {
                let (zc, xc) = (rng.gen_range(2.0..100.0), rng.gen_range(-150.0..150.0));
                let (zp, xp, y) = (rng.gen_range(2.0..100.0), rng.gen_range(-150.0..150.0), rng.gen_range(0.0..60.0));
                let forms = taylor_underestimates(zc, xc, gs, &c);
                let w = split_weights(h_functions(zc, xc, gs, &c), weighting);
                let h = rate_term(zp, xp, y, gs, &c);
                let over = overestimate_lhs(&forms, w, zp, xp, y, gs, &c);
                // With unit weights the squared slacks reach ~1e8 and rounding grows with them.
                let scale = match weighting {
                    Weighting::Unit => {
                        let (_, a2, a3) = h_functions(zp, xp, gs, &c);
                        let (_, b2, b3) = h_functions(zc, xc, gs, &c);
                        1e-15 * a2.max(a3).max(b2).max(b3).powi(2)
                    }
                    Weighting::Balanced => 0.0,
                };
                assert!(over >= h - 1e-9 - scale, "{weighting:?} over={over} h={h}");
                let at = overestimate_lhs(&forms, w, zc, xc, y, gs, &c);
                let hc = rate_term(zc, xc, y, gs, &c);
                assert!((at - hc).abs() <= 1e-9 + scale, "{at} vs {hc}");
            }
        }
    }

    #[test]
    fn assembled_sizes_single_scan() {
        let (p, c) = t3();
        let sub = assemble(&p, &c, 1, &point(&[50.0], &c), &Compensation::zero(), &AssembleOptions::default()).unwrap();
        assert_eq!(sub.count(Tag::SnrSquare), 1);
        assert_eq!(sub.count(Tag::SnrPower), 1);
        for tag in [Tag::RateOverestimate, Tag::RateSlackT, Tag::RateSlackO] {
            assert_eq!(sub.count(tag), 100);
        }
        assert_eq!(sub.layout.n_vars(), 7 + 600);
        let per_scan = 60.0 * c.width_slope();
        assert_eq!(sub.objective.terms, vec![(sub.layout.z(0), per_scan)]);
        assert!(assemble(&p, &c, 2, &point(&[50.0], &c), &Compensation::zero(), &AssembleOptions::default()).is_err());
        let dump = sub.dump();
        assert_eq!(dump.lines().count(), 2 + sub.blocks.len());
    }

    #[test]
    fn zero_compensation_matches_nonrobust() {
        let (p, c) = t3();
        let pt = point(&[40.0, 45.0], &c);
        let opts = AssembleOptions::default();
        let a = assemble(&p, &c, 2, &pt, &Compensation::zero(), &opts).unwrap();
        let b = assemble(&p, &c, 2, &pt, &Compensation::default(), &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_scan_reaches_radar_limit() {
        let (mut p, c) = t3();
        p.energy.battery_j = 1e6;
        for exp_mode in [ExpMode::Cone, ExpMode::Chord] {
            let opts = AssembleOptions { exp_mode, ..AssembleOptions::default() };
            let sub = assemble(&p, &c, 1, &point(&[50.0], &c), &Compensation::zero(), &opts).unwrap();
            let out = solve(&sub).unwrap();
            assert_eq!(out.status, SolveStatus::Optimal);
            let z = out.values[sub.layout.z(0)];
            let want = (1e4 * p.radar.sar_power_max_w).cbrt().min(100.0);
            assert!((z - want).abs() < 1e-4, "{z} vs {want}");
            assert!(sub.max_violation(&out.values) < 1e-6, "{:?}", sub.worst_block(&out.values));
            // Deterministic replay.
            assert_eq!(solve(&sub).unwrap(), out);
        }
    }

    #[test]
    fn chord_bounds_h1_on_the_box() {
        let (p, c) = t3();
        let gs = p.comm.gs_position_m;
        let (lo, hi) = (p.mission.z_min_m, p.mission.z_max_m);
        let excess = chord_excess(lo, hi, &c);
        assert!(excess > 0.0 && excess <= CHORD_SLACK);
        assert_eq!(ExpMode::Auto.resolve(lo, hi, &c), ExpMode::Chord);
        let (h_lo, h_hi) = (h_functions(lo, 0.0, gs, &c).0, h_functions(hi, 0.0, gs, &c).0);
        let mut worst = 0.0f64;
        for i in 0..=1000 {
            let z = lo + (hi - lo) * i as f64 / 1000.0;
            let chord = h_lo + (h_hi - h_lo) * (z - lo) / (hi - lo);
            let h = h_functions(z, 0.0, gs, &c).0;
            assert!(chord >= h * (1.0 - 1e-14), "z={z}");
            worst = worst.max((chord - h) / h);
        }
        assert!(worst <= excess);
        // A steep exponent makes the chord too loose.
        let mut steep = c;
        steep.alpha *= 1e3;
        assert_eq!(ExpMode::Auto.resolve(lo, hi, &steep), ExpMode::Cone);
    }

    #[test]
    fn empty_battery_is_infeasible() {
        let (mut p, c) = t3();
        p.energy.battery_j = 0.0;
        let sub = assemble(&p, &c, 1, &point(&[50.0], &c), &Compensation::zero(), &AssembleOptions::default()).unwrap();
        assert_eq!(solve(&sub).unwrap().status, SolveStatus::Infeasible);
    }

    #[test]
    fn robust_solution_replays_through_exact_constraints() {
        let (mut p, c) = t3();
        p.comm.gs_position_m = [-150.0, 20.0, 10.0];
        p.comm.com_power_max_w = 0.05;
        let dev = DeviationModel { offset_x_m: 1.0, offset_z_m: -1.0, sigma_m: 0.3, reliability: 0.95 };
        let comp = compensation(&dev, &c).unwrap();
        let pt = point(&[30.0, 30.0], &c);
        for exp_mode in [ExpMode::Auto, ExpMode::Chord] {
            let opts = AssembleOptions { exp_mode, ..AssembleOptions::default() };
            let sub = assemble(&p, &c, 2, &pt, &comp, &opts).unwrap();
            let out = solve(&sub).unwrap();
            assert_eq!(out.status, SolveStatus::Optimal);
            let l = sub.layout;
            let z: Vec<f64> = (0..2).map(|s| out.values[l.z(s)]).collect();
            let nominal = build_nominal_trajectory(&z, &c, &p.mission).unwrap();
            let r = robust_trajectory(&nominal, &comp);
            for k in 0..l.n_slots() {
                let u = r.point(k);
                let need = crate::model::required_rate(u[2], &p.radar, &p.comm, &c);
                let have = crate::model::link_rate(out.values[l.p_com(k)], u, &p.comm).unwrap();
                assert!(have >= need * (1.0 - 1e-6), "{exp_mode:?} slot {k}: {have} < {need}");
            }
        }
    }
}
