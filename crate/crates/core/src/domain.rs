//! Shared domain types: HVAC constants, comfort schedule, actuator limits and horizons.

use std::collections::BTreeSet;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Seconds per hour.
pub const SECONDS_PER_HOUR: f64 = 3600.0;
/// Watts per kilowatt.
pub const W_PER_KW: f64 = 1000.0;
/// kBtu per kWh.
pub const KBTU_PER_KWH: f64 = 3.412;

/// A field that failed validation.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("invalid `{field}`: {reason}")]
pub struct Invalid {
    pub field: String,
    pub reason: String,
}

pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Invalid {
    Invalid { field: field.to_owned(), reason: reason.into() }
}

fn ensure(ok: bool, field: &str, reason: &str) -> Result<(), Invalid> {
    if ok {
        Ok(())
    } else {
        Err(invalid(field, reason))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HvacConstants {
    /// kJ/(kg·K)
    #[serde(default = "default_cpa")]
    pub cpa: f64,
    /// Conditioned-air temperature, °C.
    pub tca: f64,
    pub cop: f64,
    /// Outdoor-air ratio.
    pub alpha: f64,
    /// Fan coefficient, W/(kg/s)².
    pub a_f: f64,
    /// Slack penalty per °C per step.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Sampling interval, s.
    pub dt: f64,
}

fn default_cpa() -> f64 {
    1.006
}

fn default_rho() -> f64 {
    1e3
}

impl HvacConstants {
    pub fn table1() -> Self {
        Self { cpa: 1.006, tca: 12.8, cop: 3.5, alpha: 0.3, a_f: 417.5, rho: 1e3, dt: 300.0 }
    }

    pub fn dt_hours(&self) -> f64 {
        self.dt / SECONDS_PER_HOUR
    }

    pub fn dt_minutes(&self) -> f64 {
        self.dt / 60.0
    }

    /// Fan coefficient in kW/(kg/s)².
    pub fn a_f_kw(&self) -> f64 {
        self.a_f / W_PER_KW
    }

    pub fn validate(&self) -> Result<(), Invalid> {
        ensure(self.cpa > 0.0, "constants.cpa", "must be > 0")?;
        ensure(self.cop > 0.0, "constants.cop", "must be > 0")?;
        ensure(self.a_f >= 0.0, "constants.a_f", "must be >= 0")?;
        ensure(self.rho > 0.0, "constants.rho", "must be > 0")?;
        ensure(self.dt > 0.0, "constants.dt", "must be > 0")?;
        ensure(self.alpha > 0.0 && self.alpha <= 1.0, "constants.alpha", "must lie in (0, 1]")?;
        ensure(self.tca.is_finite(), "constants.tca", "must be finite")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComfortSchedule {
    #[serde(with = "clock")]
    pub occupied_start: NaiveTime,
    #[serde(with = "clock")]
    pub occupied_end: NaiveTime,
    /// (tz_min, tz_max) in occupied mode, °C.
    pub occupied_bounds: (f64, f64),
    pub unoccupied_bounds: (f64, f64),
    #[serde(default)]
    pub holidays: BTreeSet<NaiveDate>,
}

mod clock {
    use chrono::NaiveTime;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &NaiveTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.format("%H:%M").to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveTime, D::Error> {
        let s = String::deserialize(d)?;
        NaiveTime::parse_from_str(&s, "%H:%M")
            .or_else(|_| NaiveTime::parse_from_str(&s, "%H:%M:%S"))
            .map_err(serde::de::Error::custom)
    }
}

impl ComfortSchedule {
    pub fn table1() -> Self {
        Self {
            occupied_start: NaiveTime::from_hms_opt(6, 30, 0).unwrap(),
            occupied_end: NaiveTime::from_hms_opt(22, 30, 0).unwrap(),
            occupied_bounds: (21.9, 23.6),
            unoccupied_bounds: (21.1, 24.4),
            holidays: BTreeSet::new(),
        }
    }

    pub fn is_holiday(&self, date: NaiveDate) -> bool {
        self.holidays.contains(&date)
    }

    /// Occupied window is closed on the left and open on the right.
    pub fn is_occupied(&self, t: NaiveDateTime) -> bool {
        if self.is_holiday(t.date()) {
            return false;
        }
        let c = t.time();
        c >= self.occupied_start && c < self.occupied_end
    }

    pub fn validate(&self) -> Result<(), Invalid> {
        ensure(self.occupied_start < self.occupied_end, "schedule.occupied_start", "occupied window is empty")?;
        let (lo, hi) = self.occupied_bounds;
        ensure(lo < hi, "schedule.occupied_bounds", "tz_min must be < tz_max")?;
        let (lo, hi) = self.unoccupied_bounds;
        ensure(lo < hi, "schedule.unoccupied_bounds", "tz_min must be < tz_max")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorLimits {
    /// kg/s
    pub mdot_min_occ: f64,
    pub mdot_min_unocc: f64,
    pub mdot_max: f64,
    /// kg/s per minute
    pub mdot_rate: f64,
    /// °C
    pub tsa_min: f64,
    pub tsa_max: f64,
    /// °C per minute
    pub tsa_rate: f64,
}

impl ActuatorLimits {
    /// MPC limits from Table 1.
    pub fn table1() -> Self {
        Self {
            mdot_min_occ: 1.47,
            mdot_min_unocc: 0.95,
            mdot_max: 4.72,
            mdot_rate: 0.2,
            tsa_min: 12.8,
            tsa_max: 37.8,
            tsa_rate: 0.56,
        }
    }

    pub fn with_mdot_min_occ(mut self, v: f64) -> Self {
        self.mdot_min_occ = v;
        self
    }

    /// Largest flow change allowed over one step of `dt` seconds.
    pub fn mdot_step(&self, dt: f64) -> f64 {
        self.mdot_rate * dt / 60.0
    }

    pub fn tsa_step(&self, dt: f64) -> f64 {
        self.tsa_rate * dt / 60.0
    }

    pub fn validate(&self, dt: f64) -> Result<(), Invalid> {
        ensure(self.mdot_min_occ > 0.0, "limits.mdot_min_occ", "must be > 0")?;
        ensure(self.mdot_min_unocc > 0.0, "limits.mdot_min_unocc", "must be > 0")?;
        ensure(self.mdot_min_occ <= self.mdot_max, "limits.mdot_min_occ", "must be <= mdot_max")?;
        ensure(self.mdot_min_unocc <= self.mdot_max, "limits.mdot_min_unocc", "must be <= mdot_max")?;
        ensure(self.tsa_min <= self.tsa_max, "limits.tsa_min", "must be <= tsa_max")?;
        ensure(self.mdot_rate > 0.0, "limits.mdot_rate", "must be > 0")?;
        ensure(self.tsa_rate > 0.0, "limits.tsa_rate", "must be > 0")?;
        ensure(
            (self.mdot_min_occ - self.mdot_min_unocc).abs() <= self.mdot_step(dt) + 1e-12,
            "limits.mdot_rate",
            "mode change of mdot_min exceeds one step of the rate limit",
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    pub n_plan: usize,
    pub n_ctrl: usize,
    pub n_adapt: usize,
}

impl HorizonConfig {
    pub fn validate(&self) -> Result<(), Invalid> {
        ensure(self.n_ctrl >= 1, "horizon.n_ctrl", "must be >= 1")?;
        ensure(self.n_ctrl <= self.n_plan, "horizon.n_ctrl", "must be <= n_plan")?;
        ensure(self.n_adapt >= self.n_plan, "horizon.n_adapt", "must be >= n_plan")
    }
}

/// Bounds in force during one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepBounds {
    pub tz_min: f64,
    pub tz_max: f64,
    pub mdot_min: f64,
    pub mdot_max: f64,
    pub tsa_min: f64,
    pub tsa_max: f64,
}

impl StepBounds {
    /// Comfort exceedance of `tz` beyond these bounds.
    pub fn violation(&self, tz: f64) -> f64 {
        (tz - self.tz_max).max(0.0) + (self.tz_min - tz).max(0.0)
    }
}

pub fn bounds_at(schedule: &ComfortSchedule, limits: &ActuatorLimits, t: NaiveDateTime) -> StepBounds {
    let occ = schedule.is_occupied(t);
    let (tz_min, tz_max) = if occ { schedule.occupied_bounds } else { schedule.unoccupied_bounds };
    StepBounds {
        tz_min,
        tz_max,
        mdot_min: if occ { limits.mdot_min_occ } else { limits.mdot_min_unocc },
        mdot_max: limits.mdot_max,
        tsa_min: limits.tsa_min,
        tsa_max: limits.tsa_max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(h: u32, m: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2013, 8, 13).unwrap().and_hms_opt(h, m, 0).unwrap()
    }

    #[test]
    fn occupied_and_unoccupied_bounds() {
        let s = ComfortSchedule::table1();
        let l = ActuatorLimits::table1();
        let b = bounds_at(&s, &l, at(12, 0));
        assert_eq!((b.tz_min, b.tz_max), (21.9, 23.6));
        assert_eq!(b.mdot_min, 1.47);
        let b = bounds_at(&s, &l, at(3, 0));
        assert_eq!((b.tz_min, b.tz_max), (21.1, 24.4));
        assert_eq!(b.mdot_min, 0.95);
    }

    #[test]
    fn window_is_closed_left_open_right() {
        let s = ComfortSchedule::table1();
        assert!(s.is_occupied(at(6, 30)));
        assert!(!s.is_occupied(at(6, 29)));
        assert!(!s.is_occupied(at(22, 30)));
        assert!(s.is_occupied(at(22, 29)));
    }

    #[test]
    fn holidays_are_unoccupied_all_day() {
        let mut s = ComfortSchedule::table1();
        s.holidays.insert(NaiveDate::from_ymd_opt(2013, 8, 13).unwrap());
        let b = bounds_at(&s, &ActuatorLimits::table1(), at(12, 0));
        assert_eq!((b.tz_min, b.tz_max), (21.1, 24.4));
    }

    #[test]
    fn zero_mdot_min_is_rejected() {
        let l = ActuatorLimits { mdot_min_unocc: 0.0, ..ActuatorLimits::table1() };
        assert_eq!(l.validate(300.0).unwrap_err().field, "limits.mdot_min_unocc");
    }

    #[test]
    fn paper_horizons_validate() {
        assert!(HorizonConfig { n_plan: 288, n_ctrl: 3, n_adapt: 2016 }.validate().is_ok());
        assert!(HorizonConfig { n_plan: 288, n_ctrl: 0, n_adapt: 2016 }.validate().is_err());
        assert!(HvacConstants::table1().validate().is_ok());
    }
}
