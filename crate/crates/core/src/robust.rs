//! Gaussian deviation model, edge compensations and the adjusted trajectory.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{DerivedConstants, Trajectory};

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// Gaussian error function.
pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let ax = x.abs();
    let v = if ax <= 3.0 { erf_series(ax) } else { 1.0 - erfc_cf(ax) };
    v.copysign(x)
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        2.0 - erfc(-x)
    } else if x <= 3.0 {
        1.0 - erf_series(x)
    } else {
        erfc_cf(x)
    }
}

// erf(x) = 2/sqrt(pi) e^{-x^2} sum_n 2^n x^{2n+1} / (1*3*...*(2n+1)); all terms positive.
fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= 2.0 * x2 / (2.0 * n + 1.0);
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
    }
    FRAC_2_SQRT_PI * (-x2).exp() * sum
}

// Continued fraction for erfc, evaluated with the modified Lentz method (x > 0).
fn erfc_cf(x: f64) -> f64 {
    // erfc(x) = e^{-x^2}/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64 / 2.0;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (f * std::f64::consts::PI.sqrt())
}

/// Inverse error function on `(-1, 1)`.
pub fn erfinv(y: f64) -> Result<f64> {
    if !(y.abs() < 1.0) {
        return invalid(format!("erfinv argument {y} outside (-1, 1)"));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let target = y.abs();
    // Winitzki's closed-form approximation seeds a bracketed Halley iteration.
    let a = 0.147;
    let ln = (-target).ln_1p() + target.ln_1p();
    let t = 2.0 / (std::f64::consts::PI * a) + ln / 2.0;
    let mut x = ((t * t - ln / a).sqrt() - t).sqrt();
    let (mut lo, mut hi) = (0.0, 6.0);
    for _ in 0..100 {
        let fx = erf(x) - target;
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if fx == 0.0 || hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let slope = FRAC_2_SQRT_PI * (-x * x).exp();
        let mut next = x - fx / (slope + x * fx);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-16 * x {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x.copysign(y))
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> Result<f64> {
    Ok(std::f64::consts::SQRT_2 * erfinv(2.0 * p - 1.0)?)
}

/// Gaussian in-range/altitude deviation statistics and target reliability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationModel {
    pub offset_x_m: f64,
    pub offset_z_m: f64,
    pub sigma_m: f64,
    pub reliability: f64,
}

impl DeviationModel {
    pub fn zero() -> Self {
        DeviationModel { offset_x_m: 0.0, offset_z_m: 0.0, sigma_m: 0.0, reliability: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_m >= 0.0 && self.sigma_m.is_finite()) {
            return invalid("deviation sigma must be finite and nonnegative");
        }
        if !(self.offset_x_m.is_finite() && self.offset_z_m.is_finite()) {
            return invalid("deviation offsets must be finite");
        }
        if !(self.reliability >= 0.0 && self.reliability < 1.0) {
            return invalid(format!("reliability {} must lie in [0, 1)", self.reliability));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Compensation {
    pub delta_pn_m: f64,
    pub delta_pf_m: f64,
    pub delta_x_m: f64,
    pub delta_z_m: f64,
}

impl Compensation {
    pub fn zero() -> Self {
        Compensation::default()
    }

    /// Width by which each compensated footprint overlaps the next one.
    pub fn overlap(&self) -> f64 {
        self.delta_pf_m - self.delta_pn_m
    }
}

/// Ground shifts of the near and far footprint edges for a position error.
pub fn footprint_errors(dx_m: f64, dz_m: f64, c: &DerivedConstants) -> (f64, f64) {
    (dx_m + c.c1 * dz_m, dx_m + c.c2 * dz_m)
}

/// Edge compensations achieving per-edge reliability `dev.reliability`.
pub fn compensation(dev: &DeviationModel, c: &DerivedConstants) -> Result<Compensation> {
    dev.validate()?;
    let k = if dev.sigma_m == 0.0 {
        0.0
    } else if dev.reliability == 0.0 {
        f64::NEG_INFINITY
    } else {
        erfinv(2.0 * dev.reliability - 1.0)? * dev.sigma_m
    };
    let near = k * (2.0 * (1.0 + c.c1 * c.c1)).sqrt() + dev.offset_x_m + c.c1 * dev.offset_z_m;
    let far = k * (2.0 * (1.0 + c.c2 * c.c2)).sqrt() - dev.offset_x_m - c.c2 * dev.offset_z_m;
    let delta_pn_m = -near.max(0.0);
    let delta_pf_m = far.max(0.0);
    let delta_z_m = (delta_pf_m - delta_pn_m) / c.width_slope();
    Ok(Compensation {
        delta_pn_m,
        delta_pf_m,
        delta_x_m: delta_pn_m - c.c1 * delta_z_m,
        delta_z_m,
    })
}

/// Shifts every slot by the compensation; azimuth positions are unchanged.
pub fn robust_trajectory(nominal: &Trajectory, comp: &Compensation) -> Trajectory {
    Trajectory {
        x: nominal.x.iter().map(|x| x + comp.delta_x_m).collect(),
        y: nominal.y.clone(),
        z: nominal.z.iter().map(|z| z + comp.delta_z_m).collect(),
    }
}
