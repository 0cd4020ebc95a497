//! State estimation and forecasts of the uncontrollable inputs.

use std::collections::BTreeMap;

use chrono::{Datelike, Duration, NaiveDateTime, Weekday};
use nalgebra::{Matrix2, RowVector2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::ComfortSchedule;
use crate::plant::ExogenousTrace;
use crate::sysid::StateSpace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    /// Process noise variance per state.
    pub q_proc: f64,
    /// Measurement noise variance, °C². Defaults to the sensor noise variance when absent.
    pub r_meas: Option<f64>,
    /// Prior covariance scale after an initialization or reset.
    pub p0: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { q_proc: 1e-4, r_meas: None, p0: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorState {
    /// Filtered estimate of the current state.
    pub x_hat: Vector2<f64>,
    pub p_cov: Matrix2<f64>,
    pub q_proc: f64,
    pub r_meas: f64,
}

impl EstimatorState {
    pub fn new(x_hat: Vector2<f64>, p0: f64, q_proc: f64, r_meas: f64) -> Self {
        Self { x_hat, p_cov: Matrix2::identity() * p0, q_proc, r_meas }
    }

    /// State consistent with holding the inputs constant forever.
    pub fn steady_state(ss: &StateSpace, q: f64, v: &[f64; 3]) -> Option<Vector2<f64>> {
        let rhs = ss.b * q + ss.f * nalgebra::Vector3::new(v[0], v[1], v[2]);
        (Matrix2::identity() - ss.a).try_inverse().map(|m| m * rhs)
    }

    pub fn reset_covariance(&mut self, p0: f64) {
        self.p_cov = Matrix2::identity() * p0;
    }
}

/// One predict/correct cycle.
///
/// `u_prev = (qhvac, toa, eta)` and `w_prev` drive the transition from the
/// previous sample; `y` is the new measurement and `w_now` its disturbance term.
/// A non-finite `y` skips the correction.
pub fn kf_update(est: &mut EstimatorState, ss: &StateSpace, u_prev: [f64; 3], w_prev: f64, w_now: f64, y: f64) {
    let x_pred = ss.step(&est.x_hat, u_prev[0], &[u_prev[1], u_prev[2], w_prev]);
    let q = Matrix2::identity() * est.q_proc;
    let p_pred = ss.a * est.p_cov * ss.a.transpose() + q;
    if !y.is_finite() {
        est.x_hat = x_pred;
        est.p_cov = symmetrize(p_pred);
        return;
    }
    let c: RowVector2<f64> = ss.c;
    let s = (c * p_pred * c.transpose())[0] + est.r_meas;
    let k: Vector2<f64> = p_pred * c.transpose() / s;
    let innov = y - ss.output(&x_pred, 0.0, &[0.0, 0.0, w_now]);
    est.x_hat = x_pred + k * innov;
    let ikc = Matrix2::identity() - k * c;
    est.p_cov = symmetrize(ikc * p_pred * ikc.transpose() + k * k.transpose() * est.r_meas);
}

fn symmetrize(p: Matrix2<f64>) -> Matrix2<f64> {
    (p + p.transpose()) * 0.5
}

/// Where a forecast sample was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// Same clock time `weeks` weeks earlier.
    PreviousWeek { weeks: u32 },
    /// Same clock time on the Saturday before a holiday, `weeks` weeks further back.
    PreviousSaturday { weeks: u32 },
    /// No history available; zero used.
    Missing,
}

/// Identified disturbance keyed by sample time. Later estimates overwrite earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DisturbanceStore {
    values: BTreeMap<NaiveDateTime, f64>,
}

impl DisturbanceStore {
    pub fn insert(&mut self, t: NaiveDateTime, w: f64) {
        self.values.insert(t, w);
    }

    pub fn extend(&mut self, start: NaiveDateTime, dt: f64, w: &[f64]) {
        for (k, v) in w.iter().enumerate() {
            self.insert(start + Duration::milliseconds((k as f64 * dt * 1000.0).round() as i64), *v);
        }
    }

    pub fn get(&self, t: NaiveDateTime) -> Option<f64> {
        self.values.get(&t).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn earliest(&self) -> Option<NaiveDateTime> {
        self.values.keys().next().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceForecast {
    pub values: Vec<f64>,
    pub provenance: Vec<Provenance>,
}

fn previous_saturday(t: NaiveDateTime) -> NaiveDateTime {
    let back = match t.weekday() {
        Weekday::Sat => 7,
        d => (d.num_days_from_monday() as i64 + 2) % 7,
    };
    t - Duration::days(back)
}

/// Copies `w̄` from one week before each horizon sample. Holiday samples copy the
/// previous Saturday at the same clock time instead. When a source sample is
/// absent the lookup steps back further whole weeks; if nothing is found the
/// sample is zero.
pub fn forecast_disturbance(
    store: &DisturbanceStore,
    start: NaiveDateTime,
    n_plan: usize,
    dt: f64,
    schedule: &ComfortSchedule,
) -> DisturbanceForecast {
    let week = Duration::days(7);
    let earliest = store.earliest();
    let mut values = Vec::with_capacity(n_plan);
    let mut provenance = Vec::with_capacity(n_plan);
    let mut missing = 0usize;
    for l in 0..n_plan {
        let t = start + Duration::milliseconds((l as f64 * dt * 1000.0).round() as i64);
        let holiday = schedule.is_holiday(t.date());
        let mut src = if holiday { previous_saturday(t) } else { t - week };
        let mut weeks = 0;
        let mut found = None;
        while let Some(e) = earliest {
            if src < e {
                break;
            }
            if let Some(w) = store.get(src) {
                found = Some(w);
                break;
            }
            src -= week;
            weeks += 1;
        }
        match found {
            Some(w) => {
                values.push(w);
                provenance.push(if holiday {
                    Provenance::PreviousSaturday { weeks }
                } else {
                    Provenance::PreviousWeek { weeks: weeks + 1 }
                });
            }
            None => {
                values.push(0.0);
                provenance.push(Provenance::Missing);
                missing += 1;
            }
        }
    }
    if missing > 0 {
        log::warn!("disturbance history missing for {missing} of {n_plan} samples from {start}; using zero");
    }
    DisturbanceForecast { values, provenance }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeatherNoise {
    pub enabled: bool,
    /// Standard deviation of the outdoor temperature error per hour of lead, °C/h.
    pub toa_std_per_hour: f64,
    /// Standard deviation of the irradiance error per hour of lead, kW/m²/h.
    pub eta_std_per_hour: f64,
    pub seed: u64,
}

impl Default for WeatherNoise {
    fn default() -> Self {
        Self { enabled: true, toa_std_per_hour: 0.05, eta_std_per_hour: 0.005, seed: 7 }
    }
}

impl WeatherNoise {
    pub fn off() -> Self {
        Self { enabled: false, ..Self::default() }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ForecastError {
    #[error("horizon [{start}, {end}) runs past the trace of {len} samples")]
    BeyondTrace { start: usize, end: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherForecast {
    pub toa: Vec<f64>,
    pub eta: Vec<f64>,
}

/// Emulated weather service: the true trace from sample `now`, optionally with
/// seeded errors whose standard deviation grows linearly with lead time.
pub fn forecast_weather(
    trace: &ExogenousTrace,
    now: usize,
    n_plan: usize,
    noise: &WeatherNoise,
) -> Result<WeatherForecast, ForecastError> {
    let end = now + n_plan;
    if end > trace.len() {
        return Err(ForecastError::BeyondTrace { start: now, end, len: trace.len() });
    }
    let mut toa = trace.toa[now..end].to_vec();
    let mut eta = trace.eta[now..end].to_vec();
    if noise.enabled {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed ^ (now as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let unit = Normal::new(0.0, 1.0).unwrap();
        for l in 0..n_plan {
            let lead_h = l as f64 * trace.dt / 3600.0;
            toa[l] += noise.toa_std_per_hour * lead_h * unit.sample(&mut rng);
            eta[l] = (eta[l] + noise.eta_std_per_hour * lead_h * unit.sample(&mut rng)).max(0.0);
        }
    }
    Ok(WeatherForecast { toa, eta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn at(y: i32, m: u32, d: u32, h: u32, min: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(y, m, d).unwrap().and_hms_opt(h, min, 0).unwrap()
    }

    fn filled(start: NaiveDateTime, n: usize) -> DisturbanceStore {
        let mut s = DisturbanceStore::default();
        let w: Vec<f64> = (0..n).map(|k| k as f64).collect();
        s.extend(start, 300.0, &w);
        s
    }

    #[test]
    fn previous_saturday_is_strictly_before() {
        assert_eq!(previous_saturday(at(2013, 9, 2, 10, 0)), at(2013, 8, 31, 10, 0));
        assert_eq!(previous_saturday(at(2013, 8, 31, 10, 0)), at(2013, 8, 24, 10, 0));
        assert_eq!(previous_saturday(at(2013, 9, 1, 10, 0)), at(2013, 8, 31, 10, 0));
        assert_eq!(previous_saturday(at(2013, 8, 30, 10, 0)), at(2013, 8, 24, 10, 0));
    }

    #[test]
    fn tuesday_copies_previous_tuesday() {
        let store = filled(at(2013, 8, 12, 0, 0), 2016);
        let f = forecast_disturbance(&store, at(2013, 8, 20, 10, 0), 36, 300.0, &ComfortSchedule::table1());
        let offset = (at(2013, 8, 13, 10, 0) - at(2013, 8, 12, 0, 0)).num_minutes() as usize / 5;
        for (l, v) in f.values.iter().enumerate() {
            assert_eq!(*v, (offset + l) as f64);
            assert_eq!(f.provenance[l], Provenance::PreviousWeek { weeks: 1 });
        }
    }

    #[test]
    fn holiday_copies_previous_saturday() {
        let mut sched = ComfortSchedule::table1();
        sched.holidays.insert(NaiveDate::from_ymd_opt(2013, 9, 2).unwrap());
        let store = filled(at(2013, 8, 26, 0, 0), 2016);
        let f = forecast_disturbance(&store, at(2013, 9, 2, 8, 0), 12, 300.0, &sched);
        let sat = (at(2013, 8, 31, 8, 0) - at(2013, 8, 26, 0, 0)).num_minutes() as usize / 5;
        for (l, v) in f.values.iter().enumerate() {
            assert_eq!(*v, (sat + l) as f64);
            assert_eq!(f.provenance[l], Provenance::PreviousSaturday { weeks: 0 });
        }
    }

    #[test]
    fn empty_history_gives_zero() {
        let f = forecast_disturbance(&DisturbanceStore::default(), at(2013, 8, 12, 0, 0), 10, 300.0, &ComfortSchedule::table1());
        assert!(f.values.iter().all(|v| *v == 0.0));
        assert!(f.provenance.iter().all(|p| *p == Provenance::Missing));
    }

    #[test]
    fn missing_week_falls_back_to_older_week() {
        let store = filled(at(2013, 8, 12, 0, 0), 2016);
        let f = forecast_disturbance(&store, at(2013, 8, 27, 10, 0), 4, 300.0, &ComfortSchedule::table1());
        assert!(f.provenance.iter().all(|p| *p == Provenance::PreviousWeek { weeks: 2 }));
    }

    #[test]
    fn weather_pass_through_and_determinism() {
        let trace = ExogenousTrace {
            start: at(2013, 8, 12, 0, 0),
            dt: 300.0,
            toa: (0..400).map(|k| 25.0 + k as f64 * 0.01).collect(),
            eta: vec![0.5; 400],
            qint: vec![0.0; 400],
        };
        let exact = forecast_weather(&trace, 10, 288, &WeatherNoise::off()).unwrap();
        assert_eq!(exact.toa, trace.toa[10..298].to_vec());
        let a = forecast_weather(&trace, 10, 288, &WeatherNoise::default()).unwrap();
        let b = forecast_weather(&trace, 10, 288, &WeatherNoise::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.toa[0], trace.toa[10]);
        assert!(a.eta.iter().all(|v| *v >= 0.0));
        assert!(forecast_weather(&trace, 200, 288, &WeatherNoise::off()).is_err());
    }
}
