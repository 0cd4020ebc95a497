//! Single-maximum rule-based controller with a cooling and a heating PI loop.

use serde::{Deserialize, Serialize};

use crate::domain::{ActuatorLimits, HvacConstants, StepBounds};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiGains {
    /// Output units per °C.
    pub kp: f64,
    /// Output units per °C·h.
    pub ki: f64,
}

/// PI loop state. The output is `lo + kp·e + ki·∫e`, clamped to `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiState {
    pub gains: PiGains,
    pub integral: f64,
    pub out_min: f64,
    pub out_max: f64,
    /// Set when the last update saturated and integration was stopped.
    pub clamped: bool,
}

impl PiState {
    pub fn new(gains: PiGains, out_min: f64, out_max: f64) -> Self {
        Self { gains, integral: 0.0, out_min, out_max, clamped: false }
    }

    pub fn set_limits(&mut self, out_min: f64, out_max: f64) {
        self.out_min = out_min;
        self.out_max = out_max.max(out_min);
    }

    fn raw(&self, e: f64, integral: f64) -> f64 {
        self.out_min + self.gains.kp * e + self.gains.ki * integral
    }

    /// Advances the loop by `dt_h` hours on error `e` and returns the clamped output.
    pub fn update(&mut self, e: f64, dt_h: f64) -> f64 {
        let trial = self.integral + e * dt_h;
        let u = self.raw(e, trial);
        let winding_up = (u > self.out_max && e > 0.0) || (u < self.out_min && e < 0.0);
        if winding_up {
            self.clamped = true;
        } else {
            self.integral = trial;
            self.clamped = false;
        }
        // integral term itself never leaves the output span
        if self.gains.ki > 0.0 {
            let span = (self.out_max - self.out_min) / self.gains.ki;
            self.integral = self.integral.clamp(0.0, span.max(0.0));
        }
        self.raw(e, self.integral).clamp(self.out_min, self.out_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineMode {
    Cooling,
    Heating,
    Deadband,
}

/// Mode from the zone temperature alone; the comfort bounds belong to the deadband.
pub fn mode_of(tz: f64, bounds: &StepBounds) -> BaselineMode {
    if tz > bounds.tz_max {
        BaselineMode::Cooling
    } else if tz < bounds.tz_min {
        BaselineMode::Heating
    } else {
        BaselineMode::Deadband
    }
}

/// One decision of the single-maximum logic, before rate limiting.
pub fn single_max_step(
    tz: f64,
    bounds: &StepBounds,
    pi_cool: &mut PiState,
    pi_heat: &mut PiState,
    consts: &HvacConstants,
) -> (f64, f64) {
    let dt_h = consts.dt_hours();
    pi_cool.set_limits(bounds.mdot_min, bounds.mdot_max);
    pi_heat.set_limits(consts.tca.max(bounds.tsa_min), bounds.tsa_max);
    match mode_of(tz, bounds) {
        BaselineMode::Cooling => (pi_cool.update(tz - bounds.tz_max, dt_h), consts.tca.max(bounds.tsa_min)),
        BaselineMode::Heating => (bounds.mdot_min, pi_heat.update(bounds.tz_min - tz, dt_h)),
        BaselineMode::Deadband => (bounds.mdot_min, consts.tca.max(bounds.tsa_min)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub cool: PiGains,
    pub heat: PiGains,
    /// Occupied minimum airflow used by the baseline, kg/s.
    pub mdot_min_occ: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            cool: PiGains { kp: 1.5, ki: 3.0 },
            heat: PiGains { kp: 4.0, ki: 8.0 },
            mdot_min_occ: 1.90,
        }
    }
}

impl BaselineConfig {
    pub fn limits(&self, base: &ActuatorLimits) -> ActuatorLimits {
        base.with_mdot_min_occ(self.mdot_min_occ)
    }
}

/// Stateful baseline: PI loops plus the rate limits relative to the last command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineController {
    pub config: BaselineConfig,
    pub cool: PiState,
    pub heat: PiState,
    pub last: Option<[f64; 2]>,
}

impl BaselineController {
    pub fn new(config: BaselineConfig, limits: &ActuatorLimits) -> Self {
        let limits = config.limits(limits);
        Self {
            config,
            cool: PiState::new(config.cool, limits.mdot_min_occ, limits.mdot_max),
            heat: PiState::new(config.heat, limits.tsa_min, limits.tsa_max),
            last: None,
        }
    }

    /// Command for one step. `bounds` must already carry the baseline airflow minimum.
    pub fn step(&mut self, tz: f64, bounds: &StepBounds, limits: &ActuatorLimits, consts: &HvacConstants) -> [f64; 2] {
        let (m, t) = single_max_step(tz, bounds, &mut self.cool, &mut self.heat, consts);
        let cmd = limit_command([m, t], self.last, bounds, limits, consts.dt);
        self.last = Some(cmd);
        cmd
    }

    /// Tracks a command sent by another source so the next output is rate limited against it.
    pub fn observe_applied(&mut self, cmd: [f64; 2]) {
        self.last = Some(cmd);
    }
}

/// Clamps to the rate limits around `last`, then to the box.
pub fn limit_command(cmd: [f64; 2], last: Option<[f64; 2]>, bounds: &StepBounds, limits: &ActuatorLimits, dt: f64) -> [f64; 2] {
    let [mut m, mut t] = cmd;
    if let Some([lm, lt]) = last {
        let dm = limits.mdot_step(dt);
        let ds = limits.tsa_step(dt);
        m = m.clamp(lm - dm, lm + dm);
        t = t.clamp(lt - ds, lt + ds);
    }
    [m.clamp(bounds.mdot_min, bounds.mdot_max), t.clamp(bounds.tsa_min, bounds.tsa_max)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn occupied() -> StepBounds {
        StepBounds { tz_min: 21.1, tz_max: 23.6, mdot_min: 1.90, mdot_max: 4.72, tsa_min: 12.8, tsa_max: 37.8 }
    }

    fn controller() -> BaselineController {
        BaselineController::new(BaselineConfig::default(), &ActuatorLimits::table1())
    }

    #[test]
    fn cooling_turns_reheat_off() {
        let c = HvacConstants::table1();
        let mut b = controller();
        let cmd = b.step(25.0, &occupied(), &ActuatorLimits::table1(), &c);
        assert_eq!(cmd[1], 12.8);
        assert!(cmd[0] > 1.90);
    }

    #[test]
    fn deadband_holds_minimums() {
        let c = HvacConstants::table1();
        let mut b = controller();
        for tz in [21.1, 22.0, 23.6] {
            assert_eq!(mode_of(tz, &occupied()), BaselineMode::Deadband);
            assert_eq!(b.step(tz, &occupied(), &ActuatorLimits::table1(), &c), [1.90, 12.8]);
        }
    }

    #[test]
    fn heating_uses_supply_temperature() {
        let c = HvacConstants::table1();
        let mut b = controller();
        b.last = Some([1.90, 12.8]);
        let cmd = b.step(20.0, &occupied(), &ActuatorLimits::table1(), &c);
        assert_eq!(cmd[0], 1.90);
        assert!(cmd[1] > 12.8);
        assert!(cmd[1] <= 12.8 + ActuatorLimits::table1().tsa_step(c.dt) + 1e-12);
    }

    #[test]
    fn inactive_integrator_is_held() {
        let c = HvacConstants::table1();
        let mut b = controller();
        let l = ActuatorLimits::table1();
        b.step(24.0, &occupied(), &l, &c);
        let held = b.cool.integral;
        assert!(held > 0.0);
        b.step(22.0, &occupied(), &l, &c);
        b.step(20.0, &occupied(), &l, &c);
        assert_eq!(b.cool.integral, held);
    }

    #[test]
    fn anti_windup_stops_integration_at_saturation() {
        let mut pi = PiState::new(PiGains { kp: 1.0, ki: 1.0 }, 0.0, 1.0);
        for _ in 0..1000 {
            let u = pi.update(5.0, 1.0);
            assert!((0.0..=1.0).contains(&u));
        }
        assert!(pi.clamped);
        assert!(pi.integral <= 1.0);
    }

    #[test]
    fn rate_limits_apply_before_box() {
        let l = ActuatorLimits::table1();
        let b = occupied();
        let cmd = limit_command([4.72, 37.8], Some([1.90, 12.8]), &b, &l, 300.0);
        assert!((cmd[0] - 2.90).abs() < 1e-12);
        assert!((cmd[1] - 15.6).abs() < 1e-12);
        let cmd = limit_command([0.0, 0.0], Some([1.0, 12.8]), &b, &l, 300.0);
        assert_eq!(cmd, [1.90, 12.8]);
    }
}
