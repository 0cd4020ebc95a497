//! Time-varying two-node RC plant and its exogenous inputs.

use std::f64::consts::PI;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::ComfortSchedule;

/// Integration substep inside one sample, s.
pub const DEFAULT_SUBSTEP: f64 = 60.0;

/// Annual sinusoid plus linear ramp around `mean`, clipped to `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSchedule {
    pub mean: f64,
    /// Peak relative deviation of the sinusoid.
    #[serde(default = "default_variation")]
    pub variation: f64,
    /// Day (relative to the simulation start) of the sinusoid's upward zero crossing.
    #[serde(default)]
    pub phase_days: f64,
    /// Relative drift of the mean per 365 days.
    #[serde(default)]
    pub ramp_per_year: f64,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

fn default_variation() -> f64 {
    0.15
}

impl ParamSchedule {
    pub fn constant(v: f64) -> Self {
        Self { mean: v, variation: 0.0, phase_days: 0.0, ramp_per_year: 0.0, min: None, max: None }
    }

    pub fn envelope(&self) -> (f64, f64) {
        let lo = self.min.unwrap_or(0.5 * self.mean);
        let hi = self.max.unwrap_or(1.5 * self.mean);
        (lo, hi)
    }

    /// Value at `t` seconds after the simulation start.
    pub fn at(&self, t: f64) -> f64 {
        let days = t / 86_400.0;
        let v = self.mean * (1.0 + self.variation * (2.0 * PI * (days - self.phase_days) / 365.0).sin())
            + self.mean * self.ramp_per_year * days / 365.0;
        let (lo, hi) = self.envelope();
        v.clamp(lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantParams {
    /// kJ/K
    pub cz: ParamSchedule,
    pub cw: ParamSchedule,
    /// K/kW
    pub rz: ParamSchedule,
    pub rw: ParamSchedule,
    /// m²
    pub ae: ParamSchedule,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrozenParams {
    pub cz: f64,
    pub cw: f64,
    pub rz: f64,
    pub rw: f64,
    pub ae: f64,
}

impl PlantParams {
    /// Synthetic defaults. These are not identified values of any real building.
    pub fn synthetic() -> Self {
        let s = |mean: f64, phase: f64, ramp: f64| ParamSchedule {
            mean,
            variation: 0.15,
            phase_days: phase,
            ramp_per_year: ramp,
            min: None,
            max: None,
        };
        Self {
            cz: s(1.2e4, 30.0, 0.05),
            cw: s(6.0e4, 90.0, -0.05),
            rz: s(0.30, 150.0, 0.0),
            rw: s(0.70, 200.0, 0.05),
            ae: s(10.0, 260.0, 0.0),
        }
    }

    pub fn at(&self, t: f64) -> FrozenParams {
        FrozenParams { cz: self.cz.at(t), cw: self.cw.at(t), rz: self.rz.at(t), rw: self.rw.at(t), ae: self.ae.at(t) }
    }

    pub fn validate(&self) -> Result<(), crate::domain::Invalid> {
        for (name, p) in [("cz", &self.cz), ("cw", &self.cw), ("rz", &self.rz), ("rw", &self.rw), ("ae", &self.ae)] {
            let (lo, hi) = p.envelope();
            if !(p.mean > 0.0 && lo > 0.0 && lo <= hi) {
                return Err(crate::domain::invalid(&format!("plant.{name}"), "mean and envelope must be strictly positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub tz: f64,
    pub tw: f64,
    /// Seconds since the simulation start.
    pub t: f64,
}

/// Exogenous signals on a uniform grid, linearly interpolated in between.
#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousTrace {
    pub start: NaiveDateTime,
    /// Sample spacing, s.
    pub dt: f64,
    /// °C
    pub toa: Vec<f64>,
    /// kW/m²
    pub eta: Vec<f64>,
    /// kW
    pub qint: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExoSample {
    pub toa: f64,
    pub eta: f64,
    pub qint: f64,
}

impl ExogenousTrace {
    pub fn len(&self) -> usize {
        self.toa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.toa.is_empty()
    }

    pub fn time_of(&self, i: usize) -> NaiveDateTime {
        self.start + Duration::milliseconds((i as f64 * self.dt * 1000.0).round() as i64)
    }

    pub fn sample(&self, i: usize) -> ExoSample {
        ExoSample { toa: self.toa[i], eta: self.eta[i], qint: self.qint[i] }
    }

    /// Interpolated sample at `t` seconds after `start`; clamps outside the grid.
    pub fn at(&self, t: f64) -> ExoSample {
        let x = (t / self.dt).max(0.0);
        let i = x.floor() as usize;
        if i + 1 >= self.len() {
            return self.sample(self.len() - 1);
        }
        let w = x - i as f64;
        let lerp = |v: &[f64]| v[i] + w * (v[i + 1] - v[i]);
        ExoSample { toa: lerp(&self.toa), eta: lerp(&self.eta), qint: lerp(&self.qint) }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PlantError {
    #[error("plant state became non-finite at t = {t} s")]
    Diverged { t: f64 },
    #[error("step length must be positive, got {0}")]
    BadStep(f64),
}

fn derivative(p: &FrozenParams, tz: f64, tw: f64, e: ExoSample, qhvac: f64) -> (f64, f64) {
    let dz = ((tw - tz) / p.rz + qhvac + p.ae * e.eta + e.qint) / p.cz;
    let dw = ((e.toa - tw) / p.rw + (tz - tw) / p.rz) / p.cw;
    (dz, dw)
}

/// Advances the plant by `dt` seconds with `qhvac` (kW) held constant.
pub fn plant_step(
    state: PlantState,
    params: &PlantParams,
    exo: &ExogenousTrace,
    qhvac: f64,
    dt: f64,
) -> Result<PlantState, PlantError> {
    plant_step_with(state, params, exo, qhvac, dt, DEFAULT_SUBSTEP)
}

pub fn plant_step_with(
    state: PlantState,
    params: &PlantParams,
    exo: &ExogenousTrace,
    qhvac: f64,
    dt: f64,
    substep: f64,
) -> Result<PlantState, PlantError> {
    if !(dt > 0.0 && substep > 0.0) {
        return Err(PlantError::BadStep(dt.min(substep)));
    }
    let n = (dt / substep).ceil().max(1.0) as usize;
    let h = dt / n as f64;
    let (mut tz, mut tw, mut t) = (state.tz, state.tw, state.t);
    for _ in 0..n {
        let p0 = params.at(t);
        let pm = params.at(t + 0.5 * h);
        let p1 = params.at(t + h);
        let e0 = exo.at(t);
        let em = exo.at(t + 0.5 * h);
        let e1 = exo.at(t + h);
        let k1 = derivative(&p0, tz, tw, e0, qhvac);
        let k2 = derivative(&pm, tz + 0.5 * h * k1.0, tw + 0.5 * h * k1.1, em, qhvac);
        let k3 = derivative(&pm, tz + 0.5 * h * k2.0, tw + 0.5 * h * k2.1, em, qhvac);
        let k4 = derivative(&p1, tz + h * k3.0, tw + h * k3.1, e1, qhvac);
        tz += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        tw += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        t += h;
        if !(tz.is_finite() && tw.is_finite()) {
            return Err(PlantError::Diverged { t });
        }
    }
    Ok(PlantState { tz, tw, t })
}

/// Shape of the synthetic weather and internal load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthProfile {
    /// °C
    pub toa_mean: f64,
    pub toa_annual_amp: f64,
    /// Day of year of the annual maximum.
    pub toa_peak_day: f64,
    pub toa_diurnal_amp: f64,
    /// Hour of the daily maximum.
    pub toa_peak_hour: f64,
    /// Stationary std of the slow weather deviation, °C.
    pub toa_noise_std: f64,
    /// kW/m²
    pub solar_peak: f64,
    pub sunrise_hour: f64,
    pub sunset_hour: f64,
    /// Lowest daily clear-sky fraction.
    pub min_clearness: f64,
    /// kW at full occupancy.
    pub qint_peak: f64,
    /// Std of the weekly random walk on the occupancy amplitude.
    pub weekly_drift_std: f64,
    /// Mean number of aperiodic load events per week.
    pub event_rate: f64,
    /// Event magnitude as a fraction of `qint_peak`.
    pub event_scale: f64,
}

impl Default for SynthProfile {
    fn default() -> Self {
        Self {
            toa_mean: 21.0,
            toa_annual_amp: 7.0,
            toa_peak_day: 200.0,
            toa_diurnal_amp: 4.5,
            toa_peak_hour: 15.0,
            toa_noise_std: 1.2,
            solar_peak: 0.85,
            sunrise_hour: 7.0,
            sunset_hour: 20.0,
            min_clearness: 0.35,
            qint_peak: 229.0 * 0.1,
            weekly_drift_std: 0.08,
            event_rate: 2.0,
            event_scale: 0.5,
        }
    }
}

/// Arrival and departure spread at the edges of the occupied window, s.
const OCCUPANCY_RAMP: f64 = 5400.0;

/// Smooth occupancy shape inside the occupied window: gradual arrival and
/// departure and a lunch-time dip.
fn occupied_fraction(schedule: &ComfortSchedule, t: NaiveDateTime) -> f64 {
    if !schedule.is_occupied(t) {
        return 0.0;
    }
    let c = t.time();
    let since = (c - schedule.occupied_start).num_seconds() as f64;
    let until = (schedule.occupied_end - c).num_seconds() as f64;
    let edge = smooth_edge(since / OCCUPANCY_RAMP) * smooth_edge(until / OCCUPANCY_RAMP);
    let hour = c.hour() as f64 + c.minute() as f64 / 60.0;
    let lunch = 1.0 - 0.25 * (-0.5 * ((hour - 12.5) / 0.75).powi(2)).exp();
    edge * lunch
}

/// Rise and fall time of a load event, s.
const EVENT_RAMP: f64 = 3600.0;

/// Raised-cosine ramp from 0 at `x ≤ 0` to 1 at `x ≥ 1`.
fn smooth_edge(x: f64) -> f64 {
    0.5 - 0.5 * (PI * x.clamp(0.0, 1.0)).cos()
}

/// Deterministic synthetic weather and internal load on `n` samples from `start`.
pub fn synth_exogenous(
    seed: u64,
    start: NaiveDateTime,
    n: usize,
    dt: f64,
    profile: &SynthProfile,
    schedule: &ComfortSchedule,
) -> ExogenousTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let phi = (-dt / (8.0 * 3600.0)).exp();
    let innovation = profile.toa_noise_std * (1.0 - phi * phi).sqrt();

    let mut toa = Vec::with_capacity(n);
    let mut eta = Vec::with_capacity(n);
    let mut qint = Vec::with_capacity(n);
    let mut dev = profile.toa_noise_std * unit.sample(&mut rng);
    let mut clear = 1.0;
    let mut clear_day: Option<NaiveDate> = None;
    let mut week_amp = 0.8;
    let mut week_index = None;
    let mut day_amp = 1.0;

    let span_weeks = (n as f64 * dt / (7.0 * 86_400.0)).ceil();
    let n_events = {
        // Poisson count by inversion
        let lambda = profile.event_rate * span_weeks;
        let mut k = 0usize;
        let mut p = (-lambda).exp();
        let mut cdf = p;
        let u: f64 = rng.random();
        while u > cdf && k < 10_000 {
            k += 1;
            p *= lambda / k as f64;
            cdf += p;
        }
        k
    };
    let span_s = n as f64 * dt;
    let events: Vec<(f64, f64, f64)> = (0..n_events)
        .map(|_| {
            let at = rng.random_range(0.0..span_s.max(1.0));
            let dur = rng.random_range(2.0 * 3600.0..4.0 * 3600.0);
            let mag = profile.event_scale * profile.qint_peak * rng.random_range(0.5..1.5);
            (at, dur, mag)
        })
        .collect();

    for i in 0..n {
        let t = start + Duration::milliseconds((i as f64 * dt * 1000.0).round() as i64);
        let hour = t.hour() as f64 + t.minute() as f64 / 60.0 + t.second() as f64 / 3600.0;
        let doy = t.ordinal() as f64;
        let wk = (i as f64 * dt / (7.0 * 86_400.0)).floor() as i64;
        if week_index != Some(wk) {
            if week_index.is_some() {
                week_amp = (week_amp + profile.weekly_drift_std * unit.sample(&mut rng)).clamp(0.3, 1.0);
            }
            week_index = Some(wk);
        }
        if clear_day != Some(t.date()) {
            clear = rng.random_range(profile.min_clearness..1.0);
            day_amp = rng.random_range(0.8..1.0);
            clear_day = Some(t.date());
        }
        dev = phi * dev + innovation * unit.sample(&mut rng);

        let annual = profile.toa_annual_amp * (2.0 * PI * (doy - profile.toa_peak_day) / 365.0).cos();
        let diurnal = profile.toa_diurnal_amp * (2.0 * PI * (hour - profile.toa_peak_hour) / 24.0).cos();
        toa.push(profile.toa_mean + annual + diurnal + dev);

        let sun = if hour > profile.sunrise_hour && hour < profile.sunset_hour {
            (PI * (hour - profile.sunrise_hour) / (profile.sunset_hour - profile.sunrise_hour)).sin()
        } else {
            0.0
        };
        eta.push((profile.solar_peak * clear * sun).max(0.0));

        let occ = occupied_fraction(schedule, t) * day_amp * week_amp;
        let ts = i as f64 * dt;
        let ev: f64 = events
            .iter()
            .map(|&(at, dur, mag)| mag * smooth_edge((ts - at) / EVENT_RAMP) * smooth_edge((at + dur - ts) / EVENT_RAMP))
            .sum();
        qint.push((profile.qint_peak * occ.min(1.0) + ev).max(0.0));
    }
    ExogenousTrace { start, dt, toa, eta, qint }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{file}: i/o error: {msg}")]
    Io { file: String, msg: String },
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("{file}:{line}: timestamps are not strictly increasing")]
    NonMonotone { file: String, line: usize },
    #[error("{file}:{line}: timestamp is not on the {dt} s grid")]
    OffGrid { file: String, line: usize, dt: f64 },
    #[error("{file}: gap of {missing} samples after {after} exceeds the maximum of {max_gap}")]
    GapTooLong { file: String, after: NaiveDateTime, missing: usize, max_gap: usize },
    #[error("{file}: negative value {value} at line {line}")]
    Negative { file: String, line: usize, value: f64 },
    #[error("traces do not overlap")]
    NoOverlap,
}

pub(crate) fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// One `timestamp,value` series on a uniform grid with short gaps filled.
pub fn read_series(
    path: &Path,
    dt: f64,
    max_gap: usize,
    nonnegative: bool,
) -> Result<(NaiveDateTime, Vec<f64>), TraceError> {
    let file = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| TraceError::Io { file: file.clone(), msg: e.to_string() })?;
    let step_ms = (dt * 1000.0).round() as i64;
    let mut start: Option<NaiveDateTime> = None;
    let mut last: Option<(i64, f64, NaiveDateTime)> = None;
    let mut values = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| TraceError::Parse { file: file.clone(), line, msg: e.to_string() })?;
        if rec.len() != 2 {
            return Err(TraceError::Parse { file: file.clone(), line, msg: "expected `timestamp,value`".into() });
        }
        let ts = parse_timestamp(&rec[0])
            .ok_or_else(|| TraceError::Parse { file: file.clone(), line, msg: format!("bad timestamp {:?}", &rec[0]) })?;
        let v: f64 = rec[1]
            .parse()
            .map_err(|_| TraceError::Parse { file: file.clone(), line, msg: format!("bad value {:?}", &rec[1]) })?;
        if !v.is_finite() {
            return Err(TraceError::Parse { file: file.clone(), line, msg: "non-finite value".into() });
        }
        if nonnegative && v < 0.0 {
            return Err(TraceError::Negative { file: file.clone(), line, value: v });
        }
        let s = *start.get_or_insert(ts);
        let off = (ts - s).num_milliseconds();
        if off % step_ms != 0 {
            return Err(TraceError::OffGrid { file: file.clone(), line, dt });
        }
        let idx = off / step_ms;
        if let Some((prev, pv, pts)) = last {
            if idx <= prev {
                return Err(TraceError::NonMonotone { file: file.clone(), line });
            }
            let missing = (idx - prev - 1) as usize;
            if missing > max_gap {
                return Err(TraceError::GapTooLong { file: file.clone(), after: pts, missing, max_gap });
            }
            for j in 1..=missing {
                let w = j as f64 / (missing + 1) as f64;
                values.push(pv + w * (v - pv));
            }
        }
        values.push(v);
        last = Some((idx, v, ts));
    }
    match start {
        Some(s) => Ok((s, values)),
        None => Err(TraceError::Parse { file, line: 1, msg: "no data rows".into() }),
    }
}

/// Reads outdoor temperature, irradiance and internal load CSVs and aligns them
/// on their common span.
pub fn ingest_traces(toa: &Path, eta: &Path, qint: &Path, dt: f64, max_gap: usize) -> Result<ExogenousTrace, TraceError> {
    let series = [read_series(toa, dt, max_gap, false)?, read_series(eta, dt, max_gap, true)?, read_series(qint, dt, max_gap, true)?];
    let step = Duration::milliseconds((dt * 1000.0).round() as i64);
    let start = series.iter().map(|s| s.0).max().unwrap();
    let end = series.iter().map(|s| s.0 + step * (s.1.len() as i32 - 1)).min().unwrap();
    if end < start {
        return Err(TraceError::NoOverlap);
    }
    let mut cut = series.iter().map(|(s, v)| {
        let off = ((start - *s).num_milliseconds() / step.num_milliseconds()) as usize;
        let n = ((end - start).num_milliseconds() / step.num_milliseconds()) as usize + 1;
        v[off..off + n].to_vec()
    });
    Ok(ExogenousTrace {
        start,
        dt,
        toa: cut.next().unwrap(),
        eta: cut.next().unwrap(),
        qint: cut.next().unwrap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_trace(toa: f64, n: usize) -> ExogenousTrace {
        ExogenousTrace {
            start: NaiveDate::from_ymd_opt(2013, 8, 12).unwrap().and_hms_opt(0, 0, 0).unwrap(),
            dt: 300.0,
            toa: vec![toa; n],
            eta: vec![0.0; n],
            qint: vec![0.0; n],
        }
    }

    fn frozen() -> PlantParams {
        PlantParams {
            cz: ParamSchedule::constant(1.2e4),
            cw: ParamSchedule::constant(6e4),
            rz: ParamSchedule::constant(0.3),
            rw: ParamSchedule::constant(0.7),
            ae: ParamSchedule::constant(10.0),
        }
    }

    #[test]
    fn relaxes_to_outdoor_temperature() {
        let exo = flat_trace(30.0, 10);
        let p = frozen();
        let mut s = PlantState { tz: 20.0, tw: 25.0, t: 0.0 };
        for _ in 0..20_000 {
            s = plant_step(s, &p, &exo, 0.0, 300.0).unwrap();
        }
        assert!((s.tz - 30.0).abs() < 1e-6 && (s.tw - 30.0).abs() < 1e-6, "{s:?}");
    }

    #[test]
    fn steady_state_matches_linear_solve() {
        let exo = flat_trace(30.0, 10);
        let p = frozen();
        let q = -8.0;
        // (tw - tz)/rz + q = 0 and (toa - tw)/rw + (tz - tw)/rz = 0
        let tw = 30.0 + q * 0.7;
        let tz = tw + q * 0.3;
        let mut s = PlantState { tz: 22.0, tw: 24.0, t: 0.0 };
        for _ in 0..20_000 {
            s = plant_step(s, &p, &exo, q, 300.0).unwrap();
        }
        assert!((s.tz - tz).abs() < 1e-6, "{} vs {tz}", s.tz);
    }

    #[test]
    fn halving_the_substep_barely_moves_a_day() {
        let start = NaiveDate::from_ymd_opt(2013, 8, 12).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let exo = synth_exogenous(3, start, 300, 300.0, &SynthProfile::default(), &ComfortSchedule::table1());
        let p = PlantParams::synthetic();
        let mut a = PlantState { tz: 22.0, tw: 25.0, t: 0.0 };
        let mut b = a;
        let mut worst = 0.0f64;
        for k in 0..288 {
            let q = -10.0 + 5.0 * (k as f64 / 20.0).sin();
            a = plant_step_with(a, &p, &exo, q, 300.0, 60.0).unwrap();
            b = plant_step_with(b, &p, &exo, q, 300.0, 30.0).unwrap();
            worst = worst.max((a.tz - b.tz).abs());
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn stored_energy_moves_monotonically_toward_equilibrium() {
        let exo = flat_trace(26.0, 10);
        let p = frozen();
        let eq = 1.2e4 * 26.0 + 6e4 * 26.0;
        let mut s = PlantState { tz: 20.0, tw: 21.0, t: 0.0 };
        let mut gap = eq - (1.2e4 * s.tz + 6e4 * s.tw);
        for _ in 0..2000 {
            s = plant_step(s, &p, &exo, 0.0, 300.0).unwrap();
            let g = eq - (1.2e4 * s.tz + 6e4 * s.tw);
            assert!(g <= gap + 1e-9 && g >= -1e-9);
            gap = g;
        }
    }

    #[test]
    fn schedules_stay_inside_envelopes() {
        let p = PlantParams::synthetic();
        for day in 0..800 {
            let t = day as f64 * 86_400.0;
            for s in [&p.cz, &p.cw, &p.rz, &p.rw, &p.ae] {
                let (lo, hi) = s.envelope();
                let v = s.at(t);
                assert!(v >= lo && v <= hi && v > 0.0);
            }
        }
    }

    #[test]
    fn synthetic_traces_are_deterministic_and_shaped() {
        let start = NaiveDate::from_ymd_opt(2013, 8, 12).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let s = ComfortSchedule::table1();
        let a = synth_exogenous(11, start, 4032, 300.0, &SynthProfile::default(), &s);
        let b = synth_exogenous(11, start, 4032, 300.0, &SynthProfile::default(), &s);
        assert_eq!(a, b);
        for i in (0..a.len()).step_by(288) {
            assert_eq!(a.eta[i], 0.0);
        }
        let quiet = SynthProfile { event_rate: 0.0, ..SynthProfile::default() };
        let c = synth_exogenous(11, start, 4032, 300.0, &quiet, &s);
        for i in 0..c.len() {
            assert!(c.qint[i] >= 0.0 && c.eta[i] >= 0.0);
            if !s.is_occupied(c.time_of(i)) {
                assert_eq!(c.qint[i], 0.0);
            }
        }
    }

    #[test]
    fn non_finite_state_is_reported() {
        let exo = flat_trace(30.0, 5);
        let p = frozen();
        let s = PlantState { tz: f64::NAN, tw: 20.0, t: 0.0 };
        assert!(matches!(plant_step(s, &p, &exo, 0.0, 300.0), Err(PlantError::Diverged { .. })));
    }
}
