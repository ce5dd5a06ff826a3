//! JSON mission configuration with unit-suffixed quantities.
//!
//! Every dimensioned field is a string `"<number> <unit>"`; omitted fields take
//! the published defaults. The loaded config is SI-normalized.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::SystemParams;
use crate::monotonic::PolyblockConfig;
use crate::robust::DeviationModel;
use crate::sca::{ScaConfig, Scheme};
use crate::subproblem::{ExpMode, Weighting};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dim {
    Power,
    Energy,
    Frequency,
    /// Power ratio: `dB` or a bare linear number.
    Ratio,
    Angle,
    Time,
    Length,
    Speed,
    DataRate,
    Area,
    Density,
    Force,
    /// Radar constant in m^3/W.
    Volume,
}

impl Dim {
    fn units(self) -> &'static [&'static str] {
        match self {
            Dim::Power => &["W", "mW", "kW", "dBm", "dBW"],
            Dim::Energy => &["J", "kJ", "Wh", "kWh"],
            Dim::Frequency => &["Hz", "kHz", "MHz", "GHz"],
            Dim::Ratio => &["dB"],
            Dim::Angle => &["deg", "rad"],
            Dim::Time => &["s", "ms", "us", "ns"],
            Dim::Length => &["m", "cm", "km"],
            Dim::Speed => &["m/s", "km/h"],
            Dim::DataRate => &["bit/s", "kbit/s", "Mbit/s"],
            Dim::Area => &["m2"],
            Dim::Density => &["kg/m3"],
            Dim::Force => &["N"],
            Dim::Volume => &["m3/W"],
        }
    }
}

/// Converts `x unit` to SI (degrees for angles).
pub fn to_si(x: f64, unit: &str, dim: Dim) -> Option<f64> {
    let v = match (dim, unit) {
        (Dim::Power, "W") | (Dim::Energy, "J") | (Dim::Frequency, "Hz") | (Dim::Angle, "deg") => x,
        (Dim::Time, "s") | (Dim::Length, "m") | (Dim::Speed, "m/s") | (Dim::DataRate, "bit/s") => x,
        (Dim::Area, "m2") | (Dim::Density, "kg/m3") | (Dim::Force, "N") | (Dim::Volume, "m3/W") => x,
        (Dim::Power, "mW") => x * 1e-3,
        (Dim::Power, "kW") | (Dim::Energy, "kJ") | (Dim::Frequency, "kHz") | (Dim::Length, "km") => x * 1e3,
        (Dim::DataRate, "kbit/s") => x * 1e3,
        (Dim::Power, "dBm") => 10f64.powf((x - 30.0) / 10.0),
        (Dim::Power, "dBW") | (Dim::Ratio, "dB") => 10f64.powf(x / 10.0),
        (Dim::Energy, "Wh") => x * 3600.0,
        (Dim::Energy, "kWh") => x * 3.6e6,
        (Dim::Frequency, "MHz") | (Dim::DataRate, "Mbit/s") => x * 1e6,
        (Dim::Frequency, "GHz") => x * 1e9,
        (Dim::Angle, "rad") => x.to_degrees(),
        (Dim::Time, "ms") => x * 1e-3,
        (Dim::Time, "us") => x * 1e-6,
        (Dim::Time, "ns") => x * 1e-9,
        (Dim::Length, "cm") => x * 1e-2,
        (Dim::Speed, "km/h") => x / 3.6,
        _ => return None,
    };
    Some(v)
}

/// A JSON scalar: a quantity string or a bare number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Num(f64),
    Text(String),
}

fn cfg_err<T>(path: &str, msg: impl Into<String>) -> Result<T> {
    Err(Error::Config { path: path.to_string(), msg: msg.into() })
}

/// Parses a field, falling back to `default` (already SI) when absent.
pub fn quantity(path: &str, v: &Option<Value>, dim: Dim, default: f64) -> Result<f64> {
    let Some(v) = v else { return Ok(default) };
    let x = match v {
        Value::Num(x) if dim == Dim::Ratio => *x,
        Value::Num(x) => {
            return cfg_err(path, format!("`{x}` needs a unit, one of {}", dim.units().join(", ")));
        }
        Value::Text(s) => {
            let Some((num, unit)) = s.trim().split_once(char::is_whitespace) else {
                return cfg_err(path, format!("expected \"<number> <unit>\", got {s:?}"));
            };
            let Ok(x) = num.parse::<f64>() else {
                return cfg_err(path, format!("{num:?} is not a number"));
            };
            let unit = unit.trim();
            match to_si(x, unit, dim) {
                Some(x) => x,
                None => return cfg_err(path, format!("unit {unit:?} not one of {}", dim.units().join(", "))),
            }
        }
    };
    if !x.is_finite() {
        return cfg_err(path, "value must be finite");
    }
    Ok(x)
}

fn plain(path: &str, v: Option<f64>, default: f64) -> Result<f64> {
    match v {
        Some(x) if !x.is_finite() => cfg_err(path, "value must be finite"),
        Some(x) => Ok(x),
        None => Ok(default),
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadarSection {
    pub depression_angle: Option<Value>,
    pub beamwidth: Option<Value>,
    pub pulse_duration: Option<Value>,
    pub prf: Option<Value>,
    pub bandwidth: Option<Value>,
    pub center_frequency: Option<Value>,
    pub snr_min: Option<Value>,
    pub p_sar_max: Option<Value>,
    /// Radar constant; when omitted it follows `snr_min` from the default.
    pub beta: Option<Value>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommSection {
    pub bandwidth: Option<Value>,
    pub gamma: Option<Value>,
    pub p_com_max: Option<Value>,
    pub sync_rate: Option<Value>,
    pub gs_position: Option<[Value; 3]>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySection {
    pub q_start: Option<Value>,
    /// A power, or `"model"` to evaluate the rotary-wing model.
    pub p_prop: Option<Value>,
    pub blade_power: Option<Value>,
    pub induced_power: Option<Value>,
    pub tip_speed: Option<Value>,
    pub fuselage_drag_ratio: Option<f64>,
    pub air_density: Option<Value>,
    pub rotor_solidity: Option<f64>,
    pub rotor_disc_area: Option<Value>,
    pub uav_weight: Option<Value>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionSection {
    pub aoi_length: Option<Value>,
    pub slots_per_scan: Option<usize>,
    pub velocity: Option<Value>,
    pub z_min: Option<Value>,
    pub z_max: Option<Value>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviationSection {
    pub offset_x: Option<Value>,
    pub offset_z: Option<Value>,
    pub sigma: Option<Value>,
    pub reliability: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub scheme: Option<Scheme>,
    pub epsilon: Option<f64>,
    pub max_iters: Option<usize>,
    pub initial_altitude_fractions: Option<Vec<f64>>,
    pub weighting: Option<Weighting>,
    pub exp_mode: Option<ExpMode>,
    pub battery_reserve: Option<f64>,
    pub n_max: Option<usize>,
    pub bound_epsilon: Option<Value>,
    pub projection_tol: Option<f64>,
    pub max_vertices: Option<usize>,
    pub max_bound_iters: Option<usize>,
    pub sim_runs: Option<usize>,
}

/// The document as written, before unit conversion.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub radar: RadarSection,
    #[serde(default)]
    pub comm: CommSection,
    #[serde(default)]
    pub energy: EnergySection,
    #[serde(default)]
    pub mission: MissionSection,
    #[serde(default)]
    pub deviation: DeviationSection,
    #[serde(default)]
    pub solver: SolverSection,
}

/// Validated, SI-normalized configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionConfig {
    pub params: SystemParams,
    pub deviation: DeviationModel,
    pub scheme: Scheme,
    pub sca: ScaConfig,
    pub n_max: Option<usize>,
    pub bound: PolyblockConfig,
    pub sim_runs: usize,
}

/// Deviation statistics of the robustness experiments.
pub fn default_deviation() -> DeviationModel {
    DeviationModel { offset_x_m: 1.0, offset_z_m: -1.0, sigma_m: 0.3, reliability: 0.95 }
}

impl Default for MissionConfig {
    fn default() -> Self {
        MissionConfig {
            params: SystemParams::baseline(),
            deviation: default_deviation(),
            scheme: Scheme::Proposed,
            sca: ScaConfig::default(),
            n_max: None,
            bound: PolyblockConfig::default(),
            sim_runs: 10_000,
        }
    }
}

impl MissionConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<MissionConfig> {
        let d = MissionConfig::default();
        let mut p = d.params.clone();

        let r = &raw.radar;
        let rp = &mut p.radar;
        rp.depression_angle_deg = quantity("radar.depression_angle", &r.depression_angle, Dim::Angle, rp.depression_angle_deg)?;
        rp.beamwidth_deg = quantity("radar.beamwidth", &r.beamwidth, Dim::Angle, rp.beamwidth_deg)?;
        rp.pulse_duration_s = quantity("radar.pulse_duration", &r.pulse_duration, Dim::Time, rp.pulse_duration_s)?;
        rp.prf_hz = quantity("radar.prf", &r.prf, Dim::Frequency, rp.prf_hz)?;
        rp.bandwidth_hz = quantity("radar.bandwidth", &r.bandwidth, Dim::Frequency, rp.bandwidth_hz)?;
        rp.center_frequency_hz =
            quantity("radar.center_frequency", &r.center_frequency, Dim::Frequency, rp.center_frequency_hz)?;
        let snr_default = rp.snr_min_linear;
        rp.snr_min_linear = quantity("radar.snr_min", &r.snr_min, Dim::Ratio, snr_default)?;
        rp.sar_power_max_w = quantity("radar.p_sar_max", &r.p_sar_max, Dim::Power, rp.sar_power_max_w)?;
        // The radar constant is inversely proportional to the SNR threshold.
        let beta_default = rp.beta_w_inv_m3 * snr_default / rp.snr_min_linear;
        rp.beta_w_inv_m3 = quantity("radar.beta", &r.beta, Dim::Volume, beta_default)?;

        let c = &raw.comm;
        let cp = &mut p.comm;
        cp.bandwidth_hz = quantity("comm.bandwidth", &c.bandwidth, Dim::Frequency, cp.bandwidth_hz)?;
        cp.gamma_linear = quantity("comm.gamma", &c.gamma, Dim::Ratio, cp.gamma_linear)?;
        cp.com_power_max_w = quantity("comm.p_com_max", &c.p_com_max, Dim::Power, cp.com_power_max_w)?;
        cp.sync_rate_bps = quantity("comm.sync_rate", &c.sync_rate, Dim::DataRate, cp.sync_rate_bps)?;
        if let Some(g) = &c.gs_position {
            for (i, v) in g.iter().enumerate() {
                cp.gs_position_m[i] = quantity(&format!("comm.gs_position[{i}]"), &Some(v.clone()), Dim::Length, 0.0)?;
            }
        }

        let e = &raw.energy;
        let ep = &mut p.energy;
        ep.battery_j = quantity("energy.q_start", &e.q_start, Dim::Energy, ep.battery_j)?;
        ep.propulsion_power_w = match &e.p_prop {
            Some(Value::Text(s)) if s.trim() == "model" => None,
            other => Some(quantity("energy.p_prop", other, Dim::Power, ep.propulsion_power_w.unwrap_or(450.0))?),
        };
        ep.blade_power_w = quantity("energy.blade_power", &e.blade_power, Dim::Power, ep.blade_power_w)?;
        ep.induced_power_w = quantity("energy.induced_power", &e.induced_power, Dim::Power, ep.induced_power_w)?;
        ep.tip_speed_mps = quantity("energy.tip_speed", &e.tip_speed, Dim::Speed, ep.tip_speed_mps)?;
        ep.fuselage_drag_ratio = plain("energy.fuselage_drag_ratio", e.fuselage_drag_ratio, ep.fuselage_drag_ratio)?;
        ep.air_density_kgm3 = quantity("energy.air_density", &e.air_density, Dim::Density, ep.air_density_kgm3)?;
        ep.rotor_solidity = plain("energy.rotor_solidity", e.rotor_solidity, ep.rotor_solidity)?;
        ep.rotor_disc_area_m2 = quantity("energy.rotor_disc_area", &e.rotor_disc_area, Dim::Area, ep.rotor_disc_area_m2)?;
        ep.uav_weight_n = quantity("energy.uav_weight", &e.uav_weight, Dim::Force, ep.uav_weight_n)?;

        let m = &raw.mission;
        let mp = &mut p.mission;
        mp.aoi_length_m = quantity("mission.aoi_length", &m.aoi_length, Dim::Length, mp.aoi_length_m)?;
        mp.slots_per_scan = m.slots_per_scan.unwrap_or(mp.slots_per_scan);
        mp.velocity_mps = quantity("mission.velocity", &m.velocity, Dim::Speed, mp.velocity_mps)?;
        mp.z_min_m = quantity("mission.z_min", &m.z_min, Dim::Length, mp.z_min_m)?;
        mp.z_max_m = quantity("mission.z_max", &m.z_max, Dim::Length, mp.z_max_m)?;
        p.validate().or_else(|e| cfg_err("physics", e.to_string()))?;

        let v = &raw.deviation;
        let dd = d.deviation;
        let deviation = DeviationModel {
            offset_x_m: quantity("deviation.offset_x", &v.offset_x, Dim::Length, dd.offset_x_m)?,
            offset_z_m: quantity("deviation.offset_z", &v.offset_z, Dim::Length, dd.offset_z_m)?,
            sigma_m: quantity("deviation.sigma", &v.sigma, Dim::Length, dd.sigma_m)?,
            reliability: plain("deviation.reliability", v.reliability, dd.reliability)?,
        };
        deviation.validate().or_else(|e| cfg_err("deviation", e.to_string()))?;

        let s = &raw.solver;
        let sca = ScaConfig {
            epsilon_rel: plain("solver.epsilon", s.epsilon, d.sca.epsilon_rel)?,
            max_iters: s.max_iters.unwrap_or(d.sca.max_iters),
            initial_altitude_fractions: s.initial_altitude_fractions.clone().unwrap_or(d.sca.initial_altitude_fractions),
            weighting: s.weighting.unwrap_or(d.sca.weighting),
            exp_mode: s.exp_mode.unwrap_or(d.sca.exp_mode),
            battery_reserve: plain("solver.battery_reserve", s.battery_reserve, d.sca.battery_reserve)?,
        };
        sca.validate().or_else(|e| cfg_err("solver", e.to_string()))?;
        let bound = PolyblockConfig {
            epsilon_m2: match &s.bound_epsilon {
                None => None,
                eps => Some(quantity("solver.bound_epsilon", eps, Dim::Area, 0.0)?),
            },
            projection_tol: plain("solver.projection_tol", s.projection_tol, d.bound.projection_tol)?,
            max_vertices: s.max_vertices.unwrap_or(d.bound.max_vertices),
            max_iters: s.max_bound_iters.unwrap_or(d.bound.max_iters),
        };
        if bound.epsilon_m2.is_some_and(|e| e <= 0.0) {
            return cfg_err("solver.bound_epsilon", "must be positive");
        }
        if !(bound.projection_tol > 0.0 && bound.projection_tol < 1.0) {
            return cfg_err("solver.projection_tol", "must lie in (0, 1)");
        }
        if s.n_max == Some(0) {
            return cfg_err("solver.n_max", "must be at least 1");
        }
        let sim_runs = s.sim_runs.unwrap_or(d.sim_runs);
        if sim_runs == 0 {
            return cfg_err("solver.sim_runs", "must be at least 1");
        }
        Ok(MissionConfig {
            params: p,
            deviation,
            scheme: s.scheme.unwrap_or(d.scheme),
            sca,
            n_max: s.n_max,
            bound,
            sim_runs,
        })
    }

    pub fn from_json(text: &str) -> Result<MissionConfig> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config { path, msg: e.into_inner().to_string() }
        })?;
        MissionConfig::from_raw(&raw)
    }

    pub fn load(path: &Path) -> Result<MissionConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        MissionConfig::from_json(&text)
    }

    /// Digest of the physical inputs a plan depends on: parameters and the
    /// deviation model. Solver settings are excluded.
    pub fn physics_hash(&self) -> String {
        let bytes = serde_json::to_vec(&(&self.params, &self.deviation)).expect("plain data serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(MissionConfig::from_json("{}").unwrap(), MissionConfig::default());
        let p = MissionConfig::from_json("{}").unwrap().params;
        assert_relative_eq!(p.radar.sar_power_max_w, 39.8107, epsilon = 1e-4);
        assert_eq!(p.energy.battery_j, 69984.0);
        assert_eq!(p.prop_power(), 450.0);
    }

    #[test]
    fn unit_conversions() {
        let c = MissionConfig::from_json(
            r#"{"radar": {"p_sar_max": "46 dBm", "bandwidth": "100 MHz", "pulse_duration": "1 us"},
                "energy": {"q_start": "19.44 Wh"},
                "comm": {"sync_rate": "1 kbit/s", "gamma": 100, "gs_position": ["-0.1 km", "20 m", "500 cm"]}}"#,
        )
        .unwrap();
        let p = &c.params;
        assert_relative_eq!(p.radar.sar_power_max_w, 39.810717, epsilon = 1e-6);
        assert_relative_eq!(p.energy.battery_j, 69984.0, epsilon = 1e-9);
        assert_eq!(p.radar.bandwidth_hz, 1e8);
        assert_relative_eq!(p.radar.pulse_duration_s, 1e-6, max_relative = 1e-12);
        assert_eq!(p.comm.sync_rate_bps, 1000.0);
        assert_eq!(p.comm.gamma_linear, 100.0);
        assert_eq!(p.comm.gs_position_m, [-100.0, 20.0, 5.0]);
        assert_relative_eq!(to_si(20.0, "dB", Dim::Ratio).unwrap(), 100.0, max_relative = 1e-12);
        assert_relative_eq!(to_si(10.0, "dBW", Dim::Power).unwrap(), 10.0, max_relative = 1e-12);
        assert_relative_eq!(to_si(18.0, "km/h", Dim::Speed).unwrap(), 5.0, max_relative = 1e-12);
        assert_relative_eq!(to_si(std::f64::consts::PI, "rad", Dim::Angle).unwrap(), 180.0, max_relative = 1e-12);
        assert!(to_si(1.0, "Wh", Dim::Power).is_none());
    }

    #[test]
    fn bare_number_needs_a_unit() {
        let e = MissionConfig::from_json(r#"{"energy": {"q_start": 69984}}"#).unwrap_err();
        match e {
            Error::Config { path, msg } => {
                assert_eq!(path, "energy.q_start");
                assert!(msg.contains("unit"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_report_their_path() {
        for (doc, want) in [
            (r#"{"radar": {"p_sar_maxx": "1 W"}}"#, "radar"),
            (r#"{"radarr": {}}"#, ""),
            (r#"{"solver": {"scheme": "bench9"}}"#, "solver.scheme"),
            (r#"{"mission": {"slots_per_scan": -3}}"#, "mission.slots_per_scan"),
        ] {
            match MissionConfig::from_json(doc).unwrap_err() {
                Error::Config { path, .. } => assert!(path.starts_with(want), "{doc}: {path}"),
                other => panic!("{doc}: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_units_and_values() {
        for (doc, want) in [
            (r#"{"radar": {"p_sar_max": "46 Wh"}}"#, "radar.p_sar_max"),
            (r#"{"radar": {"p_sar_max": "46dBm"}}"#, "radar.p_sar_max"),
            (r#"{"mission": {"z_min": "x m"}}"#, "mission.z_min"),
            (r#"{"mission": {"z_min": "200 m"}}"#, "physics"),
            (r#"{"deviation": {"reliability": 1.0}}"#, "deviation"),
            (r#"{"solver": {"epsilon": 0}}"#, "solver"),
            (r#"{"solver": {"n_max": 0}}"#, "solver.n_max"),
        ] {
            match MissionConfig::from_json(doc).unwrap_err() {
                Error::Config { path, .. } => assert_eq!(path, want, "{doc}"),
                other => panic!("{doc}: {other:?}"),
            }
        }
    }

    #[test]
    fn snr_threshold_rescales_the_radar_constant() {
        let c = MissionConfig::from_json(r#"{"radar": {"snr_min": "23 dB"}}"#).unwrap();
        assert_relative_eq!(c.params.radar.beta_w_inv_m3, 1e4 / 10f64.powf(0.3), max_relative = 1e-12);
        let c = MissionConfig::from_json(r#"{"radar": {"snr_min": "23 dB", "beta": "5000 m3/W"}}"#).unwrap();
        assert_eq!(c.params.radar.beta_w_inv_m3, 5000.0);
    }

    #[test]
    fn propulsion_model_on_request() {
        let c = MissionConfig::from_json(r#"{"energy": {"p_prop": "model"}}"#).unwrap();
        assert_eq!(c.params.energy.propulsion_power_w, None);
        assert_relative_eq!(c.params.prop_power(), 449.0, epsilon = 0.5);
    }

    #[test]
    fn hash_tracks_physics_only() {
        let a = MissionConfig::default();
        let mut b = a.clone();
        b.sca.max_iters = 7;
        b.sim_runs = 3;
        assert_eq!(a.physics_hash(), b.physics_hash());
        b.params.comm.com_power_max_w = 5.0;
        assert_ne!(a.physics_hash(), b.physics_hash());
        let mut d = a.clone();
        d.deviation.reliability = 0.9;
        assert_ne!(a.physics_hash(), d.physics_hash());
        assert_eq!(a.physics_hash().len(), 64);
    }

    #[test]
    fn normalized_config_round_trips() {
        let c = MissionConfig::from_json(r#"{"solver": {"scheme": "bench2", "n_max": 4}}"#).unwrap();
        let back: MissionConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.scheme, Scheme::Bench2);
    }
}
