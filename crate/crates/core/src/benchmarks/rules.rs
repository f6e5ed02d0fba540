//! Rule-based battery controllers with one-step deterministic guards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ControlBounds;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdParams {
    pub price_low: f64,
    pub price_high: f64,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        Self { price_low: 65.0, price_high: 75.0 }
    }
}

impl ThresholdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.price_low.is_finite() && self.price_high.is_finite() && self.price_low < self.price_high) {
            return Err(Error::config(
                "benchmark.threshold",
                format!("price_low {} must be below price_high {}", self.price_low, self.price_high),
            ));
        }
        Ok(())
    }
}

/// Hour windows [a, b) for charging (off-peak) and discharging (peak).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TouSchedule {
    pub off_peak: Vec<(f64, f64)>,
    pub peak: Vec<(f64, f64)>,
}

impl Default for TouSchedule {
    fn default() -> Self {
        Self { off_peak: vec![(0.0, 8.0)], peak: vec![(10.0, 14.0), (18.0, 22.0)] }
    }
}

fn within(windows: &[(f64, f64)], h: f64) -> bool {
    windows.iter().any(|&(a, b)| a <= h && h < b)
}

impl TouSchedule {
    pub fn validate(&self) -> Result<()> {
        let all: Vec<_> = self.off_peak.iter().chain(&self.peak).collect();
        for &&(a, b) in &all {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::config("benchmark.tou", format!("window [{a}, {b}) is empty or not finite")));
            }
        }
        for &(a, b) in &self.off_peak {
            for &(c, d) in &self.peak {
                if a < d && c < b {
                    return Err(Error::config(
                        "benchmark.tou",
                        format!("off-peak [{a}, {b}) overlaps peak [{c}, {d})"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn is_off_peak(&self, s: f64) -> bool {
        within(&self.off_peak, s.rem_euclid(24.0))
    }

    pub fn is_peak(&self, s: f64) -> bool {
        within(&self.peak, s.rem_euclid(24.0))
    }
}

/// Charge at P_min or discharge at P_max only if the deterministic update
/// ℰ − Δs·u stays strictly inside (ℰ_min, ℰ_max).
fn guarded(want: f64, energy: f64, energy_bounds: (f64, f64), dt: f64) -> f64 {
    let next = energy - dt * want;
    let ok = if want < 0.0 { next < energy_bounds.1 } else { next > energy_bounds.0 };
    if ok {
        want
    } else {
        0.0
    }
}

pub fn price_threshold_policy(
    price: f64,
    energy: f64,
    params: &ThresholdParams,
    bounds: &ControlBounds,
    energy_bounds: (f64, f64),
    dt: f64,
) -> f64 {
    if price < params.price_low {
        guarded(bounds.p_min, energy, energy_bounds, dt)
    } else if price > params.price_high {
        guarded(bounds.p_max, energy, energy_bounds, dt)
    } else {
        0.0
    }
}

pub fn tou_policy(s: f64, energy: f64, schedule: &TouSchedule, bounds: &ControlBounds, energy_bounds: (f64, f64), dt: f64) -> f64 {
    if schedule.is_off_peak(s) {
        guarded(bounds.p_min, energy, energy_bounds, dt)
    } else if schedule.is_peak(s) {
        guarded(bounds.p_max, energy, energy_bounds, dt)
    } else {
        0.0
    }
}
