//! Physical constants, derived geometry and pure evaluators for the
//! coverage problem: trajectory shape, swath, data rates, radar SNR,
//! backhaul rate and battery bookkeeping.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Speed of light used by every rate formula, in m/s.
pub const SPEED_OF_LIGHT: f64 = 2.998e8;

/// Optional radar link-budget terms. Only used to cross-check `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub antenna_gain_tx: f64,
    pub antenna_gain_rx: f64,
    pub backscatter: f64,
    pub noise_temp_k: f64,
    pub noise_figure: f64,
    pub losses: f64,
    pub boltzmann: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarParams {
    pub depression_angle_deg: f64,
    pub beamwidth_deg: f64,
    pub pulse_duration_s: f64,
    pub prf_hz: f64,
    pub bandwidth_hz: f64,
    pub center_frequency_hz: f64,
    pub snr_min_linear: f64,
    pub sar_power_max_w: f64,
    /// Aggregate radar constant: `(z^r)^3 <= beta * p_sar` is the SNR constraint.
    pub beta_w_inv_m3: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_budget: Option<LinkBudget>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommParams {
    pub bandwidth_hz: f64,
    pub gamma_linear: f64,
    pub com_power_max_w: f64,
    pub sync_rate_bps: f64,
    pub gs_position_m: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    pub battery_j: f64,
    pub blade_power_w: f64,
    pub induced_power_w: f64,
    pub tip_speed_mps: f64,
    pub fuselage_drag_ratio: f64,
    pub air_density_kgm3: f64,
    pub rotor_solidity: f64,
    pub rotor_disc_area_m2: f64,
    pub uav_weight_n: f64,
    /// Tabulated propulsion power. When absent the rotary-wing model is evaluated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propulsion_power_w: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionParams {
    pub aoi_length_m: f64,
    pub slots_per_scan: usize,
    pub velocity_mps: f64,
    pub z_min_m: f64,
    pub z_max_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub radar: RadarParams,
    pub comm: CommParams,
    pub energy: EnergyParams,
    pub mission: MissionParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub c1: f64,
    pub c2: f64,
    pub omega: f64,
    pub big_a: f64,
    pub alpha: f64,
    /// Fixed side-channel rate over the backhaul bandwidth, `R_sl / B_c`.
    pub sync_ratio: f64,
    pub delta_s_m: f64,
    pub delta_t_s: f64,
}

impl DerivedConstants {
    /// `c2 - c1`, the swath width per metre of altitude.
    pub fn width_slope(&self) -> f64 {
        self.c2 - self.c1
    }

    /// `ln A`, so that `A * 2^(alpha z) = exp(ln_a + kappa z)`.
    pub fn ln_a(&self) -> f64 {
        self.big_a.ln()
    }

    /// `ln(A 2^(R_sl / B_c))`: the rate constraint is
    /// `(exp(ln_a_sync + kappa z) - 1) d^2 <= gamma p`.
    pub fn ln_a_sync(&self) -> f64 {
        self.ln_a() + self.sync_ratio * std::f64::consts::LN_2
    }

    /// `alpha * ln 2`.
    pub fn kappa(&self) -> f64 {
        self.alpha * std::f64::consts::LN_2
    }
}

fn dbm_to_w(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

impl SystemParams {
    /// The published default parameter set.
    pub fn baseline() -> Self {
        SystemParams {
            radar: RadarParams {
                depression_angle_deg: 45.0,
                beamwidth_deg: 30.0,
                pulse_duration_s: 1e-6,
                prf_hz: 100.0,
                bandwidth_hz: 1e8,
                center_frequency_hz: 2e9,
                snr_min_linear: db_to_linear(20.0),
                sar_power_max_w: dbm_to_w(46.0),
                beta_w_inv_m3: 1e4,
                link_budget: None,
            },
            comm: CommParams {
                bandwidth_hz: 1e8,
                gamma_linear: db_to_linear(20.0),
                com_power_max_w: dbm_to_w(40.0),
                sync_rate_bps: 1000.0,
                gs_position_m: [0.0, 0.0, 5.0],
            },
            energy: EnergyParams {
                battery_j: 19.44 * 3600.0,
                blade_power_w: 79.86,
                induced_power_w: 420.6,
                tip_speed_mps: 120.0,
                fuselage_drag_ratio: 0.6,
                air_density_kgm3: 1.225,
                rotor_solidity: 0.05,
                rotor_disc_area_m2: 0.503,
                uav_weight_n: 56.5,
                propulsion_power_w: Some(450.0),
            },
            mission: MissionParams {
                aoi_length_m: 60.0,
                slots_per_scan: 100,
                velocity_mps: 5.0,
                z_min_m: 2.0,
                z_max_m: 100.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.radar;
        if !(r.depression_angle_deg > 0.0 && r.depression_angle_deg < 90.0) {
            return invalid("depression angle must lie in (0, 90) deg");
        }
        if !(r.beamwidth_deg > 0.0 && r.beamwidth_deg < 2.0 * r.depression_angle_deg) {
            return invalid("beamwidth must lie in (0, 2 * depression angle)");
        }
        for (name, v) in [
            ("pulse duration", r.pulse_duration_s),
            ("prf", r.prf_hz),
            ("radar bandwidth", r.bandwidth_hz),
            ("center frequency", r.center_frequency_hz),
            ("snr_min", r.snr_min_linear),
            ("beta", r.beta_w_inv_m3),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be positive, got {v}"));
            }
        }
        if !(r.sar_power_max_w >= 0.0) {
            return invalid("sar power max must be nonnegative");
        }
        let c = &self.comm;
        if !(c.bandwidth_hz > 0.0 && c.gamma_linear > 0.0) {
            return invalid("comm bandwidth and gamma must be positive");
        }
        if !(c.sync_rate_bps >= 0.0 && c.com_power_max_w >= 0.0) {
            return invalid("sync rate and comm power max must be nonnegative");
        }
        if c.gs_position_m.iter().any(|v| !v.is_finite()) {
            return invalid("ground station position must be finite");
        }
        let e = &self.energy;
        for (name, v) in [
            ("blade power", e.blade_power_w),
            ("induced power", e.induced_power_w),
            ("tip speed", e.tip_speed_mps),
            ("fuselage drag ratio", e.fuselage_drag_ratio),
            ("air density", e.air_density_kgm3),
            ("rotor solidity", e.rotor_solidity),
            ("rotor disc area", e.rotor_disc_area_m2),
            ("uav weight", e.uav_weight_n),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be positive, got {v}"));
            }
        }
        if !(e.battery_j >= 0.0) {
            return invalid("battery energy must be nonnegative");
        }
        if let Some(p) = e.propulsion_power_w {
            if !(p > 0.0) {
                return invalid("propulsion power must be positive");
            }
        }
        let m = &self.mission;
        if !(m.aoi_length_m > 0.0) {
            return invalid("AoI length must be positive");
        }
        if m.slots_per_scan < 2 {
            return invalid("slots per scan must be at least 2");
        }
        if !(m.velocity_mps > 0.0) {
            return invalid("velocity must be positive");
        }
        if !(m.z_min_m > 0.0 && m.z_min_m < m.z_max_m) {
            return invalid("altitude limits must satisfy 0 < z_min < z_max");
        }
        if let Some(lb) = &r.link_budget {
            let want = beta_from_link_budget(r, lb, m.velocity_mps);
            if ((want - r.beta_w_inv_m3) / want).abs() > 1e-6 {
                return invalid(format!(
                    "beta {} inconsistent with link budget value {want}",
                    r.beta_w_inv_m3
                ));
            }
        }
        Ok(())
    }

    pub fn derived(&self) -> Result<DerivedConstants> {
        derive_constants(&self.radar, &self.comm, &self.mission)
    }

    /// Propulsion power in W: the tabulated value if present, the model otherwise.
    pub fn prop_power(&self) -> f64 {
        self.energy
            .propulsion_power_w
            .unwrap_or_else(|| propulsion_power(&self.energy, self.mission.velocity_mps))
    }
}

/// Aggregate radar constant from the individual link-budget terms.
pub fn beta_from_link_budget(r: &RadarParams, lb: &LinkBudget, velocity: f64) -> f64 {
    let lambda = SPEED_OF_LIGHT / r.center_frequency_hz;
    let sin_d = r.depression_angle_deg.to_radians().sin();
    let num = lb.antenna_gain_tx
        * lb.antenna_gain_rx
        * lambda.powi(3)
        * lb.backscatter
        * SPEED_OF_LIGHT
        * r.pulse_duration_s
        * r.prf_hz
        * sin_d
        * sin_d;
    let den = (4.0 * std::f64::consts::PI).powi(4)
        * lb.boltzmann
        * lb.noise_temp_k
        * lb.noise_figure
        * r.bandwidth_hz
        * lb.losses
        * velocity
        * r.snr_min_linear;
    num / den
}

pub fn derive_constants(
    radar: &RadarParams,
    comm: &CommParams,
    mission: &MissionParams,
) -> Result<DerivedConstants> {
    let theta1 = radar.depression_angle_deg - radar.beamwidth_deg / 2.0;
    let theta2 = radar.depression_angle_deg + radar.beamwidth_deg / 2.0;
    if theta1 <= 0.0 {
        return invalid(format!("near slant angle {theta1} deg must be positive"));
    }
    if theta2 >= 90.0 {
        return invalid(format!("far slant angle {theta2} deg must be below 90"));
    }
    if mission.slots_per_scan < 1 || !(mission.velocity_mps > 0.0) {
        return invalid("slots per scan and velocity must be positive");
    }
    let (t1, t2) = (theta1.to_radians(), theta2.to_radians());
    let omega = (t1.cos() - t2.cos()) / (t1.cos() * t2.cos());
    let ratio = radar.bandwidth_hz / comm.bandwidth_hz;
    let big_a = (ratio * radar.pulse_duration_s * radar.prf_hz).exp2();
    let alpha = 2.0 * omega * ratio * radar.prf_hz / SPEED_OF_LIGHT;
    let delta_s_m = mission.aoi_length_m / mission.slots_per_scan as f64;
    Ok(DerivedConstants {
        c1: t1.tan(),
        c2: t2.tan(),
        omega,
        big_a,
        alpha,
        sync_ratio: comm.sync_rate_bps / comm.bandwidth_hz,
        delta_s_m,
        delta_t_s: delta_s_m / mission.velocity_mps,
    })
}

/// Rotary-wing propulsion power at forward speed `v`.
pub fn propulsion_power(e: &EnergyParams, v: f64) -> f64 {
    let v0 = (e.uav_weight_n / (2.0 * e.air_density_kgm3 * e.rotor_disc_area_m2)).sqrt();
    let blade = e.blade_power_w * (1.0 + 3.0 * v * v / (e.tip_speed_mps * e.tip_speed_mps));
    let r = v.powi(4) / (4.0 * v0.powi(4));
    let induced = e.induced_power_w * ((1.0 + r).sqrt() - v * v / (2.0 * v0 * v0)).sqrt();
    let parasite = 0.5
        * e.fuselage_drag_ratio
        * e.air_density_kgm3
        * e.rotor_solidity
        * e.rotor_disc_area_m2
        * v.powi(3);
    blade + induced + parasite
}

pub fn swath_width(z_m: f64, c: &DerivedConstants) -> f64 {
    c.width_slope() * z_m
}

/// Raw SAR data rate at altitude `z_m`, in bit/s.
pub fn sar_data_rate(z_m: f64, radar: &RadarParams, c: &DerivedConstants) -> f64 {
    radar.bandwidth_hz
        * (2.0 * z_m * c.omega / SPEED_OF_LIGHT + radar.pulse_duration_s)
        * radar.prf_hz
}

pub fn radar_snr_ok(p_sar_w: f64, z_r_m: f64, beta: f64) -> bool {
    z_r_m.powi(3) <= beta * p_sar_w
}

/// Highest compensated altitude the radar can serve with power `p_sar_w`.
pub fn max_radar_altitude(p_sar_w: f64, beta: f64) -> f64 {
    (beta * p_sar_w).cbrt()
}

pub fn squared_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Backhaul throughput in bit/s for transmit power `p_com_w` at `uav_xyz`.
pub fn link_rate(p_com_w: f64, uav_xyz: [f64; 3], comm: &CommParams) -> Result<f64> {
    let d2 = squared_distance(uav_xyz, comm.gs_position_m);
    if d2 == 0.0 {
        return invalid("UAV coincides with the ground station");
    }
    Ok(comm.bandwidth_hz * (p_com_w * comm.gamma_linear / d2).ln_1p() / std::f64::consts::LN_2)
}

/// Smallest transmit power achieving `rate_bps` over squared distance `d2`.
pub fn required_com_power(rate_bps: f64, d2: f64, comm: &CommParams) -> f64 {
    (rate_bps / comm.bandwidth_hz * std::f64::consts::LN_2).exp_m1() * d2 / comm.gamma_linear
}

/// Rate the backhaul must carry at compensated altitude `z_r`.
pub fn required_rate(z_r: f64, radar: &RadarParams, comm: &CommParams, c: &DerivedConstants) -> f64 {
    sar_data_rate(z_r, radar, c) + comm.sync_rate_bps
}

pub fn realtime_constraint_ok(
    p_com_w: f64,
    uav_xyz_r: [f64; 3],
    comm: &CommParams,
    radar: &RadarParams,
    c: &DerivedConstants,
) -> Result<bool> {
    Ok(link_rate(p_com_w, uav_xyz_r, comm)? >= required_rate(uav_xyz_r[2], radar, comm, c))
}

/// Battery levels `q(1..=n+1)` for `n` slots of consumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryTrace {
    pub levels: Vec<f64>,
    /// 0-based index into `levels` of the first negative entry, if any.
    pub first_negative: Option<usize>,
}

impl BatteryTrace {
    pub fn is_feasible(&self) -> bool {
        self.first_negative.is_none()
    }
}

pub fn battery_trace(
    p_sar: &[f64],
    p_com: &[f64],
    battery_j: f64,
    prop_power_w: f64,
    delta_t_s: f64,
) -> Result<BatteryTrace> {
    if p_sar.len() != p_com.len() {
        return Err(Error::Dimension(format!(
            "p_sar has {} slots, p_com has {}",
            p_sar.len(),
            p_com.len()
        )));
    }
    let mut levels = Vec::with_capacity(p_sar.len() + 1);
    let mut q = battery_j;
    levels.push(q);
    for (ps, pc) in p_sar.iter().zip(p_com) {
        q -= delta_t_s * (pc + ps + prop_power_w);
        levels.push(q);
    }
    let first_negative = levels.iter().position(|&q| q < 0.0);
    Ok(BatteryTrace { levels, first_negative })
}

/// Per-slot positions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn point(&self, k: usize) -> [f64; 3] {
        [self.x[k], self.y[k], self.z[k]]
    }
}

/// Azimuth direction of slot `k` (0-based): +1 on odd scans, -1 on even ones.
pub fn direction(k: usize, m: usize) -> f64 {
    if (k / m).is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Boustrophedon azimuth positions for `n_slots` slots.
pub fn azimuth_positions(n_slots: usize, m: usize, delta_s: f64) -> Vec<f64> {
    let mut y = Vec::with_capacity(n_slots);
    let mut cur = 0.0;
    for k in 0..n_slots {
        if k > 0 {
            cur += direction(k - 1, m) * delta_s;
        }
        y.push(cur);
    }
    y
}

/// Per-scan in-range positions implied by the scan-adjacency recursion.
pub fn scan_offsets(z_per_scan: &[f64], c: &DerivedConstants) -> Vec<f64> {
    let mut x = Vec::with_capacity(z_per_scan.len());
    for (n, &z) in z_per_scan.iter().enumerate() {
        if n == 0 {
            x.push(-c.c1 * z);
        } else {
            x.push(x[n - 1] + c.c2 * z_per_scan[n - 1] - c.c1 * z);
        }
    }
    x
}

/// Nominal slot positions for the given per-scan altitudes.
pub fn build_nominal_trajectory(
    z_per_scan: &[f64],
    c: &DerivedConstants,
    mission: &MissionParams,
) -> Result<Trajectory> {
    if z_per_scan.is_empty() {
        return invalid("at least one scan is required");
    }
    // A nominal altitude may dip below zero when the compensation lifts it.
    if let Some(z) = z_per_scan.iter().find(|z| !z.is_finite()) {
        return invalid(format!("scan altitude {z} must be finite"));
    }
    let m = mission.slots_per_scan;
    let xs = scan_offsets(z_per_scan, c);
    let n_slots = z_per_scan.len() * m;
    Ok(Trajectory {
        x: (0..n_slots).map(|k| xs[k / m]).collect(),
        y: azimuth_positions(n_slots, m, c.delta_s_m),
        z: (0..n_slots).map(|k| z_per_scan[k / m]).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub n_scans: usize,
    pub slots_per_scan: usize,
    pub nominal: Trajectory,
    pub compensated: Trajectory,
    pub p_sar_w: Vec<f64>,
    pub p_com_w: Vec<f64>,
    pub battery_j: Vec<f64>,
}

impl Plan {
    pub fn n_slots(&self) -> usize {
        self.n_scans * self.slots_per_scan
    }

    /// Compensated altitude of each scan.
    pub fn scan_altitudes(&self) -> Vec<f64> {
        (0..self.n_scans)
            .map(|n| self.compensated.z[n * self.slots_per_scan])
            .collect()
    }
}

/// Ground area covered by the compensated trajectory.
pub fn coverage(plan: &Plan, c: &DerivedConstants) -> f64 {
    plan.compensated
        .z
        .iter()
        .map(|&z| c.delta_s_m * swath_width(z, c))
        .sum()
}

/// Coverage for per-scan compensated altitudes, `M` slots each.
pub fn coverage_of_scans(z_r: &[f64], c: &DerivedConstants, m: usize) -> f64 {
    z_r.iter()
        .map(|&z| m as f64 * c.delta_s_m * swath_width(z, c))
        .sum()
}

/// Largest violation of each constraint family of the original problem.
///
/// Units: positions in m, powers in W, energies in J, the backhaul
/// constraint as a relative rate shortfall.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintResiduals {
    pub trajectory_shape: f64,
    pub radar_power_constant: f64,
    pub altitude_box: f64,
    pub radar_snr: f64,
    pub realtime_rate: f64,
    pub power_box: f64,
    pub battery: f64,
}

impl ConstraintResiduals {
    pub fn max(&self) -> f64 {
        [
            self.trajectory_shape,
            self.radar_power_constant,
            self.altitude_box,
            self.radar_snr,
            self.realtime_rate,
            self.power_box,
            self.battery,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Replays `plan` through the exact constraint evaluators.
pub fn validate_plan(
    plan: &Plan,
    params: &SystemParams,
    c: &DerivedConstants,
) -> Result<ConstraintResiduals> {
    let n = plan.n_slots();
    let m = plan.slots_per_scan;
    for (name, len) in [
        ("nominal.x", plan.nominal.x.len()),
        ("nominal.y", plan.nominal.y.len()),
        ("nominal.z", plan.nominal.z.len()),
        ("compensated.x", plan.compensated.x.len()),
        ("compensated.y", plan.compensated.y.len()),
        ("compensated.z", plan.compensated.z.len()),
        ("p_sar", plan.p_sar_w.len()),
        ("p_com", plan.p_com_w.len()),
        ("battery", plan.battery_j.len()),
    ] {
        if len != n {
            return Err(Error::Dimension(format!("{name} has {len} entries, expected {n}")));
        }
    }
    if m != params.mission.slots_per_scan {
        return Err(Error::Dimension("slots per scan differs from parameters".into()));
    }
    let mut r = ConstraintResiduals::default();

    let scan_z: Vec<f64> = (0..plan.n_scans).map(|s| plan.nominal.z[s * m]).collect();
    let want = build_nominal_trajectory(&scan_z, c, &params.mission)?;
    for k in 0..n {
        let d = (plan.nominal.x[k] - want.x[k])
            .abs()
            .max((plan.nominal.y[k] - want.y[k]).abs())
            .max((plan.nominal.z[k] - want.z[k]).abs());
        r.trajectory_shape = r.trajectory_shape.max(d);
        if k % m != 0 {
            r.radar_power_constant = r
                .radar_power_constant
                .max((plan.p_sar_w[k] - plan.p_sar_w[k - 1]).abs());
        }
    }

    let (zmin, zmax) = (params.mission.z_min_m, params.mission.z_max_m);
    let beta = params.radar.beta_w_inv_m3;
    for k in 0..n {
        let u = plan.compensated.point(k);
        r.altitude_box = r.altitude_box.max(zmin - u[2]).max(u[2] - zmax);
        r.radar_snr = r.radar_snr.max(u[2].powi(3) / beta - plan.p_sar_w[k]);
        let need = required_rate(u[2], &params.radar, &params.comm, c);
        let have = link_rate(plan.p_com_w[k], u, &params.comm)?;
        r.realtime_rate = r.realtime_rate.max((need - have) / need.max(1.0));
        r.power_box = r
            .power_box
            .max(-plan.p_sar_w[k])
            .max(plan.p_sar_w[k] - params.radar.sar_power_max_w)
            .max(-plan.p_com_w[k])
            .max(plan.p_com_w[k] - params.comm.com_power_max_w);
    }

    let trace = battery_trace(
        &plan.p_sar_w[..n - 1],
        &plan.p_com_w[..n - 1],
        params.energy.battery_j,
        params.prop_power(),
        c.delta_t_s,
    )?;
    for (k, q) in trace.levels.iter().enumerate() {
        r.battery = r
            .battery
            .max((plan.battery_j[k] - q).abs())
            .max(-plan.battery_j[k]);
    }
    Ok(r)
}
