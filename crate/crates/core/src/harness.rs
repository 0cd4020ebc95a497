//! Closed-loop simulation of the controllers on the synthetic plant.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use chrono::NaiveDateTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{limit_command, BaselineController};
use crate::config::{ConfigError, ScenarioConfig};
use crate::domain::{bounds_at, ActuatorLimits, StepBounds};
use crate::metrics::{compute_metrics, MetricsError, MetricsReport};
use crate::planner::{
    boundary_check, build_instance, ccp_solve, feasible_start, idx, nlp_solve, warm_start, NlpStatus, PlanForecast,
    PlanError, PlanInstance, StopReason, EPS_MAX, EPS_MIN,
};
use crate::plant::{plant_step_with, ExogenousTrace, PlantError, PlantState};
use crate::power::{qhvac, PowerBreakdown, PowerError};
use crate::prediction::{forecast_disturbance, forecast_weather, kf_update, DisturbanceStore, EstimatorState, ForecastError};
use crate::sysid::{identify, IdDataset, StateSpace, ThermalModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ControllerVariant {
    Baseline,
    AdaptCvx,
    NAdaptCvx,
    AdaptNcvx,
    NAdaptNcvx,
}

impl ControllerVariant {
    pub const ALL: [ControllerVariant; 5] = [Self::Baseline, Self::AdaptCvx, Self::NAdaptCvx, Self::AdaptNcvx, Self::NAdaptNcvx];

    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::AdaptCvx => "adapt-cvx",
            Self::NAdaptCvx => "nadapt-cvx",
            Self::AdaptNcvx => "adapt-ncvx",
            Self::NAdaptNcvx => "nadapt-ncvx",
        }
    }

    pub fn uses_planner(self) -> bool {
        self != Self::Baseline
    }

    /// Re-identifies every adaptation interval instead of once.
    pub fn is_adaptive(self) -> bool {
        matches!(self, Self::AdaptCvx | Self::AdaptNcvx)
    }

    pub fn uses_nlp(self) -> bool {
        matches!(self, Self::AdaptNcvx | Self::NAdaptNcvx)
    }
}

impl fmt::Display for ControllerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|v| v.name().replace('-', "") == key)
            .ok_or_else(|| format!("unknown controller {s:?}; expected one of baseline, adapt-cvx, nadapt-cvx, adapt-ncvx, nadapt-ncvx"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommandSource {
    Baseline,
    /// Baseline commands while no model has been identified yet.
    Bootstrap,
    Planner,
    /// Baseline commands during a cycle whose plan failed.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopRecord {
    pub step: usize,
    pub timestamp: NaiveDateTime,
    pub mdot: f64,
    pub tsa: f64,
    /// True zone and wall temperatures at the start of the step.
    pub tz: f64,
    pub tw: f64,
    /// Measured zone temperature.
    pub y: f64,
    pub toa: f64,
    pub eta: f64,
    pub qint: f64,
    pub qhvac: f64,
    pub p_fan: f64,
    pub p_cc: f64,
    pub p_rh: f64,
    pub p_total: f64,
    pub tz_min: f64,
    pub tz_max: f64,
    pub slack_min: f64,
    pub slack_max: f64,
    pub source: CommandSource,
    /// A plan was computed at this step.
    pub planned: bool,
    pub plan_failed: bool,
    pub solve_ms: f64,
    pub model_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub step: usize,
    pub timestamp: NaiveDateTime,
    pub solver: String,
    pub status: String,
    pub failed: bool,
    /// Convergence by the step-size rule.
    pub converged: bool,
    pub iterations: usize,
    pub qp_iterations: usize,
    /// Objective of every accepted iterate (CCP) or start and end (NLP).
    pub objectives: Vec<f64>,
    pub worst_ascent: f64,
    pub active_constraints: usize,
    pub elapsed_ms: f64,
    pub warm_started: bool,
    pub model_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub version: u32,
    pub step: usize,
    pub timestamp: NaiveDateTime,
    pub model: ThermalModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub variant: ControllerVariant,
    pub records: Vec<LoopRecord>,
    pub plans: Vec<PlanRecord>,
    pub models: Vec<ModelRecord>,
    /// Over the records after the warm-up weeks.
    pub metrics: MetricsReport,
    /// Instance of the last planning cycle.
    pub snapshot: Option<PlanInstance>,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("plant failed at step {step}: {source}")]
    Plant { step: usize, source: PlantError },
    #[error("power model at step {step}: {source}")]
    Power { step: usize, source: PowerError },
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("{variant} needs at least two weeks of simulation")]
    SpanTooShort { variant: ControllerVariant },
    #[error("exogenous trace has {have} samples, {need} needed")]
    TraceTooShort { have: usize, need: usize },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

fn io_err(path: &Path, e: impl fmt::Display) -> HarnessError {
    HarnessError::Io { path: path.display().to_string(), msg: e.to_string() }
}

/// Random telegraph offsets added to the baseline commands before the first model exists,
/// so the bootstrap data separate the heat input from the zone-temperature feedback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExcitationConfig {
    pub enabled: bool,
    /// kg/s, added on top of the baseline airflow.
    pub mdot_amp: f64,
    /// °C, added on top of the baseline supply temperature.
    pub tsa_amp: f64,
    /// Hold time range of each level, steps.
    pub min_hold: usize,
    pub max_hold: usize,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        Self { enabled: true, mdot_amp: 0.8, tsa_amp: 3.0, min_hold: 3, max_hold: 12 }
    }
}

struct Excitation {
    cfg: ExcitationConfig,
    rng: ChaCha8Rng,
    level: [bool; 2],
    left: [usize; 2],
}

impl Excitation {
    fn new(cfg: ExcitationConfig, seed: u64) -> Self {
        Self { cfg, rng: ChaCha8Rng::seed_from_u64(seed ^ 0xE4C1_7A71_0000_0001), level: [false; 2], left: [0; 2] }
    }

    fn apply(&mut self, cmd: [f64; 2]) -> [f64; 2] {
        if !self.cfg.enabled {
            return cmd;
        }
        let hi = self.cfg.max_hold.max(self.cfg.min_hold).max(1);
        let lo = self.cfg.min_hold.clamp(1, hi);
        for j in 0..2 {
            if self.left[j] == 0 {
                self.level[j] = self.rng.random::<bool>();
                self.left[j] = self.rng.random_range(lo..=hi);
            }
            self.left[j] -= 1;
        }
        let amp = [self.cfg.mdot_amp, self.cfg.tsa_amp];
        [0, 1].map(|j| cmd[j] + if self.level[j] { amp[j] } else { 0.0 })
    }
}

struct Scheduled {
    cmds: Vec<[f64; 2]>,
    slacks: Vec<[f64; 2]>,
    start: usize,
    failed: bool,
}

struct Loop<'a> {
    sc: &'a ScenarioConfig,
    exo: &'a ExogenousTrace,
    mpc_limits: ActuatorLimits,
    base_limits: ActuatorLimits,
}

impl Loop<'_> {
    fn time(&self, i: usize) -> NaiveDateTime {
        self.exo.time_of(i)
    }

    fn mpc_bounds(&self, i: usize) -> StepBounds {
        bounds_at(&self.sc.schedule, &self.mpc_limits, self.time(i))
    }

    fn base_bounds(&self, i: usize) -> StepBounds {
        bounds_at(&self.sc.schedule, &self.base_limits, self.time(i))
    }

    fn instance(&self, i: usize, model: &ThermalModel, est: &EstimatorState, store: &DisturbanceStore, prev: Option<[f64; 2]>) -> Result<PlanInstance, HarnessError> {
        let n = self.sc.horizon.n_plan;
        let weather = forecast_weather(self.exo, i, n, &self.sc.forecast)?;
        let wbar = forecast_disturbance(store, self.time(i), n, self.sc.constants.dt, &self.sc.schedule).values;
        let bounds: Vec<StepBounds> = (i..i + n).map(|k| self.mpc_bounds(k)).collect();
        Ok(build_instance(
            model,
            [est.x_hat[0], est.x_hat[1]],
            PlanForecast { toa: &weather.toa, eta: &weather.eta, wbar: &wbar },
            &bounds,
            &self.mpc_limits,
            &self.sc.constants,
            prev,
        )?)
    }
}

fn w_at(store: &DisturbanceStore, t: NaiveDateTime, sc: &ScenarioConfig) -> f64 {
    forecast_disturbance(store, t, 1, sc.constants.dt, &sc.schedule).values[0]
}

fn replay_filter(
    ss: &StateSpace,
    data: &IdDataset,
    w_bar: &[f64],
    sc: &ScenarioConfig,
    r_meas: f64,
) -> Option<EstimatorState> {
    let n = data.len();
    let mean = |j: usize| data.u.iter().map(|u| u[j]).sum::<f64>() / n as f64;
    let wm = w_bar.iter().sum::<f64>() / n as f64;
    let x0 = EstimatorState::steady_state(ss, mean(0), &[mean(1), mean(2), wm])?;
    let mut est = EstimatorState::new(x0, sc.estimator.p0, sc.estimator.q_proc, r_meas);
    for k in 1..n {
        kf_update(&mut est, ss, data.u[k - 1], w_bar[k - 1], w_bar[k], data.y[k]);
    }
    Some(est)
}

/// Runs one controller over the scenario span on the given exogenous trace.
pub fn run_closed_loop(variant: ControllerVariant, sc: &ScenarioConfig, exo: &ExogenousTrace) -> Result<RunResult, HarnessError> {
    let n_steps = sc.n_steps();
    let n_plan = sc.horizon.n_plan;
    let n_ctrl = sc.horizon.n_ctrl;
    let n_adapt = sc.horizon.n_adapt;
    let dt = sc.constants.dt;
    if variant.uses_planner() && n_steps < 2 * n_adapt {
        return Err(HarnessError::SpanTooShort { variant });
    }
    let need = n_steps + if variant.uses_planner() { n_plan } else { 0 };
    if exo.len() < need {
        return Err(HarnessError::TraceTooShort { have: exo.len(), need });
    }
    let lp = Loop { sc, exo, mpc_limits: sc.limits, base_limits: sc.baseline.limits(&sc.limits) };
    let consts = &sc.constants;
    let params = sc.plant.params();
    let r_meas = sc.estimator.r_meas.unwrap_or((sc.simulation.sensor_noise_std.powi(2)).max(1e-6));

    let mut rng = ChaCha8Rng::seed_from_u64(sc.simulation.seed ^ 0x5E45_0A11_D00D_F00D);
    let noise = Normal::new(0.0, 1.0).unwrap();

    let mut state = PlantState { tz: sc.simulation.tz0, tw: sc.simulation.tw0, t: 0.0 };
    let mut baseline = BaselineController::new(sc.baseline, &sc.limits);
    let mut last: Option<[f64; 2]> = None;

    let mut model: Option<(ThermalModel, StateSpace)> = None;
    let mut version = 0u32;
    let mut est: Option<EstimatorState> = None;
    let mut store = DisturbanceStore::default();
    let mut u_hist: Vec<[f64; 3]> = Vec::with_capacity(n_steps);
    let mut y_hist: Vec<f64> = Vec::with_capacity(n_steps);
    let mut w_prev = 0.0;

    let mut excitation = Excitation::new(sc.bootstrap, sc.simulation.seed);
    let mut scheduled: Option<Scheduled> = None;
    let mut prev_plan: Option<(usize, Vec<f64>)> = None;

    let mut records = Vec::with_capacity(n_steps);
    let mut plans = Vec::new();
    let mut models = Vec::new();
    let mut snapshot = None;

    for i in 0..n_steps {
        let t = lp.time(i);
        let e = exo.sample(i);
        let y = state.tz + sc.simulation.sensor_noise_std * noise.sample(&mut rng);

        // identification on [i - n_adapt, i - 1]
        let due = variant.uses_planner() && i >= n_adapt && i % n_adapt == 0 && (variant.is_adaptive() || version == 0);
        if due {
            let data = IdDataset { u: u_hist[i - n_adapt..i].to_vec(), y: y_hist[i - n_adapt..i].to_vec(), dt };
            match identify(&data, sc.sysid.lambda) {
                Ok((m, dist)) => {
                    let ss = m.to_state_space();
                    match replay_filter(&ss, &data, &dist.w_bar, sc, r_meas) {
                        Some(replayed) => {
                            store.extend(lp.time(i - n_adapt), dt, &dist.w_bar);
                            version += 1;
                            log::info!("{variant}: model v{version} at {t}: a = {:?}, rho(A) = {:.4}", m.a, m.spectral_radius());
                            models.push(ModelRecord { version, step: i, timestamp: t, model: m.clone() });
                            est = Some(replayed);
                            w_prev = *dist.w_bar.last().unwrap();
                            model = Some((m, ss));
                        }
                        None => log::warn!("{variant}: identified model at {t} has no steady state; keeping the previous one"),
                    }
                }
                Err(err) => log::warn!("{variant}: identification at {t} failed: {err}"),
            }
        }

        // estimator
        let w_now = if model.is_some() { w_at(&store, t, sc) } else { 0.0 };
        if let (Some((_, ss)), Some(est)) = (&model, est.as_mut()) {
            kf_update(est, ss, u_hist[i - 1], w_prev, w_now, y);
        }
        w_prev = w_now;

        // shadow baseline, rate limited against the applied commands
        let base_cmd = baseline.step(y, &lp.base_bounds(i), &lp.base_limits, consts);

        let mut planned = false;
        let mut plan_failed = false;
        let mut solve_ms = 0.0;
        if let (Some((m, _)), Some(est)) = (&model, est.as_ref()) {
            let cycle_over = scheduled.as_ref().is_none_or(|s| i >= s.start + n_ctrl);
            if cycle_over {
                planned = true;
                let (sched, z, rec) = plan_cycle(&lp, variant, i, m, est, &store, last, prev_plan.as_ref(), version, &mut snapshot);
                plan_failed = sched.failed;
                solve_ms = rec.elapsed_ms;
                plans.push(rec);
                if let Some(z) = z {
                    prev_plan = Some((i, z));
                }
                scheduled = Some(sched);
            }
        }

        let (cmd, source, slack) = match (&scheduled, variant.uses_planner()) {
            (_, false) => (base_cmd, CommandSource::Baseline, [0.0, 0.0]),
            (None, true) => (base_cmd, CommandSource::Bootstrap, [0.0, 0.0]),
            (Some(s), true) if s.failed => (base_cmd, CommandSource::Fallback, [0.0, 0.0]),
            (Some(s), true) => {
                let k = i - s.start;
                (s.cmds[k], CommandSource::Planner, s.slacks[k])
            }
        };
        let cmd = match source {
            CommandSource::Planner => limit_command(cmd, last, &lp.mpc_bounds(i), &lp.mpc_limits, dt),
            CommandSource::Bootstrap => limit_command(excitation.apply(cmd), last, &lp.base_bounds(i), &lp.base_limits, dt),
            _ => cmd,
        };
        // the excitation is an offset around the baseline's own trajectory
        baseline.observe_applied(if source == CommandSource::Bootstrap { base_cmd } else { cmd });
        last = Some(cmd);

        let [mdot, tsa] = cmd;
        let q_true = qhvac(mdot, tsa, state.tz, consts.cpa);
        let q_meas = qhvac(mdot, tsa, y, consts.cpa);
        let p = PowerBreakdown::evaluate(mdot, tsa, state.tz, e.toa, consts).map_err(|source| HarnessError::Power { step: i, source })?;
        let comfort = lp.mpc_bounds(i);
        records.push(LoopRecord {
            step: i,
            timestamp: t,
            mdot,
            tsa,
            tz: state.tz,
            tw: state.tw,
            y,
            toa: e.toa,
            eta: e.eta,
            qint: e.qint,
            qhvac: q_true,
            p_fan: p.p_fan,
            p_cc: p.p_cc,
            p_rh: p.p_rh,
            p_total: p.total,
            tz_min: comfort.tz_min,
            tz_max: comfort.tz_max,
            slack_min: slack[0],
            slack_max: slack[1],
            source,
            planned,
            plan_failed,
            solve_ms,
            model_version: version,
        });
        u_hist.push([q_meas, e.toa, e.eta]);
        y_hist.push(y);

        state = plant_step_with(state, &params, exo, q_true, dt, sc.plant.substep).map_err(|source| HarnessError::Plant { step: i, source })?;
    }

    let warm = sc.simulation.metrics_warmup_weeks * sc.steps_per_week();
    let metrics = compute_metrics(variant.name(), &records[warm.min(records.len() - 1)..], sc.building.floor_area, &sc.schedule, dt)?;
    Ok(RunResult { variant, records, plans, models, metrics, snapshot })
}

#[allow(clippy::too_many_arguments)]
fn plan_cycle(
    lp: &Loop<'_>,
    variant: ControllerVariant,
    i: usize,
    model: &ThermalModel,
    est: &EstimatorState,
    store: &DisturbanceStore,
    last: Option<[f64; 2]>,
    prev_plan: Option<&(usize, Vec<f64>)>,
    version: u32,
    snapshot: &mut Option<PlanInstance>,
) -> (Scheduled, Option<Vec<f64>>, PlanRecord) {
    let n_ctrl = lp.sc.horizon.n_ctrl;
    let t = lp.time(i);
    let failed_cycle = |solver: &str, status: String, elapsed: Duration| {
        (
            Scheduled { cmds: Vec::new(), slacks: Vec::new(), start: i, failed: true },
            None,
            PlanRecord {
                step: i,
                timestamp: t,
                solver: solver.to_string(),
                status,
                failed: true,
                converged: false,
                iterations: 0,
                qp_iterations: 0,
                objectives: Vec::new(),
                worst_ascent: 0.0,
                active_constraints: 0,
                elapsed_ms: elapsed.as_secs_f64() * 1e3,
                warm_started: false,
                model_version: version,
            },
        )
    };
    let solver = if variant.uses_nlp() { "nlp" } else { "ccp" };
    let inst = match lp.instance(i, model, est, store, last) {
        Ok(inst) => inst,
        Err(e) => {
            log::warn!("step {i}: planning instance rejected: {e}");
            return failed_cycle(solver, format!("error: {e}"), Duration::ZERO);
        }
    };
    let warm = prev_plan.and_then(|(s, z)| warm_start(&inst, z, i - s));
    *snapshot = Some(inst.clone());

    let (z, rec) = if variant.uses_nlp() {
        let start = warm.clone().unwrap_or_else(|| feasible_start(&inst));
        match nlp_solve(&inst, Some(&start), &lp.sc.nlp) {
            Ok((z, rep)) => {
                let failed = rep.status != NlpStatus::Converged;
                let cost = crate::planner::CostMatrices::new(&inst.consts);
                let rec = PlanRecord {
                    step: i,
                    timestamp: t,
                    solver: solver.into(),
                    status: format!("{:?}", rep.status),
                    failed,
                    converged: !failed,
                    iterations: rep.outer_iterations,
                    qp_iterations: rep.qp_solves,
                    objectives: vec![inst.objective(&cost, &start), rep.objective],
                    worst_ascent: 0.0,
                    active_constraints: boundary_check(&inst, &z).active.len(),
                    elapsed_ms: rep.elapsed.as_secs_f64() * 1e3,
                    warm_started: warm.is_some(),
                    model_version: version,
                };
                (z, rec)
            }
            Err(e) => return failed_cycle(solver, format!("error: {e}"), Duration::ZERO),
        }
    } else {
        match ccp_solve(&inst, warm.as_deref(), &lp.sc.planner) {
            Ok((z, tr)) => {
                let rec = PlanRecord {
                    step: i,
                    timestamp: t,
                    solver: solver.into(),
                    status: format!("{:?}", tr.stop),
                    failed: tr.degraded(),
                    converged: tr.stop == StopReason::Converged,
                    iterations: tr.iterations(),
                    qp_iterations: tr.qp_iterations.iter().sum(),
                    worst_ascent: tr.worst_ascent(),
                    objectives: tr.objectives.clone(),
                    active_constraints: boundary_check(&inst, &z).active.len(),
                    elapsed_ms: tr.elapsed.as_secs_f64() * 1e3,
                    warm_started: tr.warm_started,
                    model_version: version,
                };
                (z, rec)
            }
            Err(e) => return failed_cycle(solver, format!("error: {e}"), Duration::ZERO),
        }
    };
    if rec.failed {
        return (Scheduled { cmds: Vec::new(), slacks: Vec::new(), start: i, failed: true }, None, rec);
    }
    let cmds = inst.commands(&z)[..n_ctrl].to_vec();
    let slacks = (0..n_ctrl).map(|k| [z[idx(k, EPS_MIN)], z[idx(k, EPS_MAX)]]).collect();
    (Scheduled { cmds, slacks, start: i, failed: false }, Some(z), rec)
}

/// Runs the variants concurrently on one exogenous realization.
pub fn compare(variants: &[ControllerVariant], sc: &ScenarioConfig) -> Result<Vec<RunResult>, HarnessError> {
    let exo = sc.exogenous_trace()?;
    let results: Vec<Result<RunResult, HarnessError>> = std::thread::scope(|s| {
        let handles: Vec<_> = variants.iter().map(|&v| s.spawn({
            let exo = &exo;
            move || run_closed_loop(v, sc, exo)
        })).collect();
        handles.into_iter().map(|h| h.join().expect("closed-loop thread panicked")).collect()
    });
    results.into_iter().collect()
}

/// Writes one run: config snapshot, records, plans, models and metrics.
pub fn write_run(dir: &Path, sc: &ScenarioConfig, run: &RunResult) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir.join("models")).map_err(|e| io_err(dir, e))?;
    let cfg = dir.join("config.toml");
    std::fs::write(&cfg, sc.to_toml()).map_err(|e| io_err(&cfg, e))?;
    write_records(&dir.join("records.csv"), &run.records)?;
    let plans = dir.join("plans.jsonl");
    let mut text = String::new();
    for p in &run.plans {
        text.push_str(&serde_json::to_string(p).map_err(|e| io_err(&plans, e))?);
        text.push('\n');
    }
    std::fs::write(&plans, text).map_err(|e| io_err(&plans, e))?;
    for m in &run.models {
        let path = dir.join("models").join(format!("model_v{:03}.json", m.version));
        std::fs::write(&path, m.model.to_json()).map_err(|e| io_err(&path, e))?;
    }
    if let Some(inst) = &run.snapshot {
        let path = dir.join("snapshot.json");
        let json = serde_json::to_string_pretty(inst).map_err(|e| io_err(&path, e))?;
        std::fs::write(&path, json).map_err(|e| io_err(&path, e))?;
    }
    let metrics = dir.join("metrics.json");
    let json = serde_json::to_string_pretty(&run.metrics).map_err(|e| io_err(&metrics, e))?;
    std::fs::write(&metrics, json).map_err(|e| io_err(&metrics, e))
}

pub fn write_records(path: &Path, records: &[LoopRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<LoopRecord>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| io_err(path, e))).collect()
}

/// Writes every run plus the comparison table under `dir`.
pub fn write_comparison(dir: &Path, sc: &ScenarioConfig, runs: &[RunResult]) -> Result<(), HarnessError> {
    for run in runs {
        write_run(&dir.join(run.variant.name()), sc, run)?;
    }
    let reports: Vec<MetricsReport> = runs.iter().map(|r| r.metrics.clone()).collect();
    let json = dir.join("comparison.json");
    std::fs::write(&json, serde_json::to_string_pretty(&reports).map_err(|e| io_err(&json, e))?).map_err(|e| io_err(&json, e))?;
    let md = dir.join("comparison.md");
    std::fs::write(&md, crate::metrics::to_markdown(&reports)).map_err(|e| io_err(&md, e))
}
