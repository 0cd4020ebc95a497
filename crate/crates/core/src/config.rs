//! Scenario configuration file (TOML).

use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::BaselineConfig;
use crate::harness::ExcitationConfig;
use crate::domain::{ActuatorLimits, ComfortSchedule, HorizonConfig, HvacConstants, Invalid};
use crate::planner::{CcpSettings, NlpSettings};
use crate::plant::{ExogenousTrace, ParamSchedule, PlantParams, SynthProfile, TraceError, DEFAULT_SUBSTEP};
use crate::prediction::{EstimatorConfig, WeatherNoise};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}:{column}: {msg}")]
    Parse { path: String, line: usize, column: usize, msg: String },
    #[error("{path}: {msg}")]
    Syntax { path: String, msg: String },
    #[error("invalid {}: {}", .0.field, .0.reason)]
    Invalid(#[from] Invalid),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildingConfig {
    /// Conditioned floor area, ft².
    pub floor_area: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub start: NaiveDateTime,
    pub weeks: usize,
    pub seed: u64,
    /// Leading weeks left out of the metrics.
    pub metrics_warmup_weeks: usize,
    /// Std of the zone temperature sensor noise, °C.
    pub sensor_noise_std: f64,
    pub tz0: f64,
    pub tw0: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2013, 10, 21).unwrap().and_hms_opt(0, 0, 0).unwrap(),
            weeks: 4,
            seed: 42,
            metrics_warmup_weeks: 1,
            sensor_noise_std: 0.05,
            tz0: 23.0,
            tw0: 23.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub cz: ParamSchedule,
    pub cw: ParamSchedule,
    pub rz: ParamSchedule,
    pub rw: ParamSchedule,
    pub ae: ParamSchedule,
    /// Integration substep, s.
    #[serde(default = "default_substep")]
    pub substep: f64,
}

fn default_substep() -> f64 {
    DEFAULT_SUBSTEP
}

impl PlantConfig {
    pub fn params(&self) -> PlantParams {
        PlantParams { cz: self.cz, cw: self.cw, rz: self.rz, rw: self.rw, ae: self.ae }
    }

    pub fn synthetic() -> Self {
        let p = PlantParams::synthetic();
        Self { cz: p.cz, cw: p.cw, rz: p.rz, rw: p.rw, ae: p.ae, substep: DEFAULT_SUBSTEP }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum ExogenousConfig {
    Synthetic {
        #[serde(default)]
        profile: SynthProfile,
    },
    /// `timestamp,value` files, relative to the config file.
    Csv {
        toa: PathBuf,
        eta: PathBuf,
        qint: PathBuf,
        /// Longest run of missing samples filled by interpolation.
        #[serde(default = "default_max_gap")]
        max_gap: usize,
    },
}

fn default_max_gap() -> usize {
    12
}

impl Default for ExogenousConfig {
    fn default() -> Self {
        Self::Synthetic { profile: SynthProfile::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SysidConfig {
    /// Smoothness weight on the disturbance second difference.
    pub lambda: f64,
}

impl Default for SysidConfig {
    fn default() -> Self {
        Self { lambda: 1e7 }
    }
}

fn default_horizon() -> HorizonConfig {
    HorizonConfig { n_plan: 288, n_ctrl: 3, n_adapt: 2016 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "HvacConstants::table1")]
    pub constants: HvacConstants,
    #[serde(default = "ComfortSchedule::table1")]
    pub schedule: ComfortSchedule,
    #[serde(default = "ActuatorLimits::table1")]
    pub limits: ActuatorLimits,
    #[serde(default = "default_horizon")]
    pub horizon: HorizonConfig,
    pub building: BuildingConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    pub plant: PlantConfig,
    #[serde(default)]
    pub exogenous: ExogenousConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub forecast: WeatherNoise,
    #[serde(default)]
    pub sysid: SysidConfig,
    #[serde(default)]
    pub planner: CcpSettings,
    #[serde(default)]
    pub nlp: NlpSettings,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub bootstrap: ExcitationConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn check(ok: bool, field: &str, reason: &str) -> Result<(), Invalid> {
    if ok {
        Ok(())
    } else {
        Err(crate::domain::invalid(field, reason))
    }
}

impl ScenarioConfig {
    /// Table 1 values with the synthetic plant and `floor_area` ft².
    pub fn synthetic(floor_area: f64) -> Self {
        Self {
            constants: HvacConstants::table1(),
            schedule: ComfortSchedule::table1(),
            limits: ActuatorLimits::table1(),
            horizon: default_horizon(),
            building: BuildingConfig { floor_area },
            simulation: SimulationConfig::default(),
            plant: PlantConfig::synthetic(),
            exogenous: ExogenousConfig::default(),
            estimator: EstimatorConfig::default(),
            forecast: WeatherNoise::default(),
            sysid: SysidConfig::default(),
            planner: CcpSettings::default(),
            nlp: NlpSettings::default(),
            baseline: BaselineConfig::default(),
            bootstrap: ExcitationConfig::default(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| match e.span() {
            Some(span) => {
                let (line, column) = line_col(text, span.start);
                ConfigError::Parse { path: origin.to_string(), line, column, msg: e.message().to_string() }
            }
            None => ConfigError::Syntax { path: origin.to_string(), msg: e.message().to_string() },
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), Invalid> {
        let dt = self.constants.dt;
        self.constants.validate()?;
        self.schedule.validate()?;
        self.limits.validate(dt)?;
        self.horizon.validate()?;
        self.plant.params().validate()?;
        check(
            (self.constants.tca - self.limits.tsa_min).abs() <= 1e-12,
            "limits.tsa_min",
            "must equal constants.tca",
        )?;
        check(
            self.building.floor_area.is_finite() && self.building.floor_area > 0.0,
            "building.floor_area",
            "must be > 0",
        )?;
        check(self.simulation.weeks >= 1, "simulation.weeks", "must be >= 1")?;
        check(
            self.simulation.metrics_warmup_weeks < self.simulation.weeks,
            "simulation.metrics_warmup_weeks",
            "must be smaller than simulation.weeks",
        )?;
        check(
            self.simulation.sensor_noise_std >= 0.0 && self.simulation.sensor_noise_std.is_finite(),
            "simulation.sensor_noise_std",
            "must be >= 0",
        )?;
        check(
            self.simulation.tz0.is_finite() && self.simulation.tw0.is_finite(),
            "simulation.tz0",
            "initial temperatures must be finite",
        )?;
        check(self.plant.substep > 0.0 && self.plant.substep <= dt, "plant.substep", "must be in (0, constants.dt]")?;
        check(self.sysid.lambda > 0.0 && self.sysid.lambda.is_finite(), "sysid.lambda", "must be > 0")?;
        check(self.estimator.q_proc > 0.0, "estimator.q_proc", "must be > 0")?;
        check(self.estimator.p0 > 0.0, "estimator.p0", "must be > 0")?;
        if let Some(r) = self.estimator.r_meas {
            check(r > 0.0, "estimator.r_meas", "must be > 0")?;
        }
        check(self.planner.delta > 0.0, "planner.delta", "must be > 0")?;
        check(self.planner.max_iter >= 1, "planner.max_iter", "must be >= 1")?;
        check(self.baseline.mdot_min_occ > 0.0, "baseline.mdot_min_occ", "must be > 0")?;
        check(self.baseline.mdot_min_occ <= self.limits.mdot_max, "baseline.mdot_min_occ", "must be <= limits.mdot_max")?;
        for (name, g) in [("baseline.cool", self.baseline.cool), ("baseline.heat", self.baseline.heat)] {
            check(g.kp >= 0.0 && g.ki >= 0.0, name, "gains must be >= 0")?;
        }
        if let ExogenousConfig::Synthetic { profile } = &self.exogenous {
            check(profile.event_rate >= 0.0, "exogenous.profile.event_rate", "must be >= 0")?;
            check(profile.qint_peak >= 0.0, "exogenous.profile.qint_peak", "must be >= 0")?;
        }
        Ok(())
    }

    /// Number of samples in the simulated span.
    pub fn n_steps(&self) -> usize {
        (self.simulation.weeks as f64 * 7.0 * 86_400.0 / self.constants.dt).round() as usize
    }

    pub fn steps_per_week(&self) -> usize {
        (7.0 * 86_400.0 / self.constants.dt).round() as usize
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Exogenous trace covering the simulation plus one planning horizon.
    pub fn exogenous_trace(&self) -> Result<ExogenousTrace, ConfigError> {
        let n = self.n_steps() + self.horizon.n_plan + 1;
        match &self.exogenous {
            ExogenousConfig::Synthetic { profile } => Ok(crate::plant::synth_exogenous(
                self.simulation.seed,
                self.simulation.start,
                n,
                self.constants.dt,
                profile,
                &self.schedule,
            )),
            ExogenousConfig::Csv { toa, eta, qint, max_gap } => {
                let tr = crate::plant::ingest_traces(
                    &self.resolve(toa),
                    &self.resolve(eta),
                    &self.resolve(qint),
                    self.constants.dt,
                    *max_gap,
                )?;
                let offset = (self.simulation.start - tr.start).num_seconds();
                check(offset >= 0, "simulation.start", "precedes the exogenous traces")?;
                let skip = (offset as f64 / self.constants.dt).round() as usize;
                check(
                    skip as f64 * self.constants.dt == offset as f64,
                    "simulation.start",
                    "is not on the trace sampling grid",
                )?;
                check(tr.len() >= skip + n, "exogenous", "traces are shorter than the simulation plus one horizon")?;
                Ok(ExogenousTrace {
                    start: self.simulation.start,
                    dt: tr.dt,
                    toa: tr.toa[skip..skip + n].to_vec(),
                    eta: tr.eta[skip..skip + n].to_vec(),
                    qint: tr.qint[skip..skip + n].to_vec(),
                })
            }
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, column)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
    let mut cfg = ScenarioConfig::from_toml_str(&text, &path.display().to_string())?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(cfg)
}
