//! Energy, comfort and planner-reliability metrics over closed-loop records.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::ComfortSchedule;
use crate::harness::LoopRecord;

pub const KBTU_PER_KWH: f64 = 3.412_141_63;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricsError {
    #[error("floor area must be > 0, got {0}")]
    FloorArea(f64),
    #[error("no records")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub steps: usize,
    pub days: f64,
    pub total_energy_kwh: f64,
    pub fan_energy_kwh: f64,
    pub cooling_energy_kwh: f64,
    pub reheat_energy_kwh: f64,
    /// kBtu/(ft²·yr)
    pub site_eui: f64,
    pub plans: usize,
    pub planner_failures: usize,
    pub planner_failure_pct: f64,
    pub violation_samples: usize,
    /// RMS of the exceedance over the violating samples only, °C.
    pub rmse_tz_violation: f64,
    pub max_tz_violation: f64,
}

/// Exceedance of `tz` beyond the comfort bounds scheduled at `t`.
pub fn violation_at(schedule: &ComfortSchedule, t: chrono::NaiveDateTime, tz: f64) -> f64 {
    let (lo, hi) = if schedule.is_occupied(t) { schedule.occupied_bounds } else { schedule.unoccupied_bounds };
    (tz - hi).max(0.0) + (lo - tz).max(0.0)
}

/// Metrics over `records`; `dt` is the sample spacing in seconds.
pub fn compute_metrics(
    variant: &str,
    records: &[LoopRecord],
    floor_area: f64,
    schedule: &ComfortSchedule,
    dt: f64,
) -> Result<MetricsReport, MetricsError> {
    if !(floor_area > 0.0 && floor_area.is_finite()) {
        return Err(MetricsError::FloorArea(floor_area));
    }
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let dt_h = dt / 3600.0;
    let mut fan = 0.0;
    let mut cc = 0.0;
    let mut rh = 0.0;
    let mut total = 0.0;
    let mut plans = 0;
    let mut failures = 0;
    let mut sq = 0.0;
    let mut n_viol = 0;
    let mut max_viol = 0.0f64;
    for r in records {
        fan += r.p_fan * dt_h;
        cc += r.p_cc * dt_h;
        rh += r.p_rh * dt_h;
        total += r.p_total * dt_h;
        if r.planned {
            plans += 1;
            if r.plan_failed {
                failures += 1;
            }
        }
        let v = violation_at(schedule, r.timestamp, r.tz);
        if v > 0.0 {
            n_viol += 1;
            sq += v * v;
            max_viol = max_viol.max(v);
        }
    }
    let days = records.len() as f64 * dt / 86_400.0;
    Ok(MetricsReport {
        variant: variant.to_string(),
        steps: records.len(),
        days,
        total_energy_kwh: total,
        fan_energy_kwh: fan,
        cooling_energy_kwh: cc,
        reheat_energy_kwh: rh,
        site_eui: total * KBTU_PER_KWH / floor_area * 365.0 / days,
        plans,
        planner_failures: failures,
        planner_failure_pct: if plans > 0 { 100.0 * failures as f64 / plans as f64 } else { 0.0 },
        violation_samples: n_viol,
        rmse_tz_violation: if n_viol > 0 { (sq / n_viol as f64).sqrt() } else { 0.0 },
        max_tz_violation: max_viol,
    })
}

/// Table of reports, one row per controller.
pub fn to_markdown(reports: &[MetricsReport]) -> String {
    let mut s = String::from(
        "| controller | site EUI (kBtu/ft²/yr) | energy (kWh) | planner failures (%) | RMSE violation (°C) | max violation (°C) |\n\
         |---|---|---|---|---|---|\n",
    );
    for r in reports {
        s.push_str(&format!(
            "| {} | {:.2} | {:.1} | {:.2} | {:.3} | {:.3} |\n",
            r.variant, r.site_eui, r.total_energy_kwh, r.planner_failure_pct, r.rmse_tz_violation, r.max_tz_violation
        ));
    }
    s
}
