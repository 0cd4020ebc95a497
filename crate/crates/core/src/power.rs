//! HVAC power and heat-injection models. Powers are in kW, energies in kWh.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::HvacConstants;

#[derive(Debug, Clone, Copy, Error, PartialEq)]
pub enum PowerError {
    #[error("negative mass flow {0} kg/s")]
    NegativeFlow(f64),
    #[error("supply temperature {tsa} below conditioned-air temperature {tca}")]
    ReheatBelowCoil { tsa: f64, tca: f64 },
}

/// `a_f · ṁ²` in kW for `a_f` in W/(kg/s)².
pub fn fan_power(mdot: f64, a_f: f64) -> Result<f64, PowerError> {
    if mdot < 0.0 {
        return Err(PowerError::NegativeFlow(mdot));
    }
    Ok(a_f * mdot * mdot / crate::domain::W_PER_KW)
}

pub fn mixed_air_temp(tz: f64, toa: f64, alpha: f64) -> f64 {
    alpha * toa + (1.0 - alpha) * tz
}

/// Chiller electrical power; zero when the mixed air is not warmer than the coil.
pub fn cooling_power(mdot: f64, tma: f64, c: &HvacConstants) -> Result<f64, PowerError> {
    if mdot < 0.0 {
        return Err(PowerError::NegativeFlow(mdot));
    }
    if tma > c.tca {
        Ok(c.cpa * mdot * (tma - c.tca) / c.cop)
    } else {
        Ok(0.0)
    }
}

pub fn reheat_power(mdot: f64, tsa: f64, c: &HvacConstants) -> Result<f64, PowerError> {
    if mdot < 0.0 {
        return Err(PowerError::NegativeFlow(mdot));
    }
    if tsa < c.tca {
        return Err(PowerError::ReheatBelowCoil { tsa, tca: c.tca });
    }
    Ok(c.cpa * mdot * (tsa - c.tca))
}

/// Heat delivered to the zone, negative when cooling.
pub fn qhvac(mdot: f64, tsa: f64, tz: f64, cpa: f64) -> f64 {
    cpa * mdot * (tsa - tz)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PowerBreakdown {
    pub p_fan: f64,
    pub p_cc: f64,
    pub p_rh: f64,
    pub total: f64,
}

impl PowerBreakdown {
    pub fn evaluate(mdot: f64, tsa: f64, tz: f64, toa: f64, c: &HvacConstants) -> Result<Self, PowerError> {
        let p_fan = fan_power(mdot, c.a_f)?;
        let p_cc = cooling_power(mdot, mixed_air_temp(tz, toa, c.alpha), c)?;
        let p_rh = reheat_power(mdot, tsa, c)?;
        Ok(Self { p_fan, p_cc, p_rh, total: p_fan + p_cc + p_rh })
    }

    /// Energy over one step, kWh.
    pub fn step_energy(&self, c: &HvacConstants) -> f64 {
        self.total * c.dt_hours()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn fan_power_values() {
        assert!(close(fan_power(1.0, 417.5).unwrap(), 0.4175, 1e-12));
        assert!(close(fan_power(2.0, 417.5).unwrap(), 1.670, 1e-12));
        assert_eq!(fan_power(0.0, 417.5).unwrap(), 0.0);
        assert!(fan_power(-0.1, 417.5).is_err());
    }

    #[test]
    fn mixed_air_values() {
        assert!(close(mixed_air_temp(23.0, 30.0, 0.3), 25.1, 1e-12));
        assert_eq!(mixed_air_temp(23.0, 30.0, 0.0), 23.0);
        assert_eq!(mixed_air_temp(23.0, 30.0, 1.0), 30.0);
    }

    #[test]
    fn cooling_and_reheat_values() {
        let c = HvacConstants::table1();
        assert!(close(cooling_power(2.0, 25.1, &c).unwrap(), 2.0 * 1.006 * 12.3 / 3.5, 1e-12));
        assert!(close(cooling_power(2.0, 25.1, &c).unwrap(), 7.0707, 1e-4));
        assert_eq!(cooling_power(2.0, 12.8, &c).unwrap(), 0.0);
        assert_eq!(cooling_power(2.0, 10.0, &c).unwrap(), 0.0);
        assert!(close(reheat_power(1.5, 15.0, &c).unwrap(), 3.3198, 1e-12));
        assert_eq!(reheat_power(1.5, 12.8, &c).unwrap(), 0.0);
        assert!(reheat_power(1.5, 12.0, &c).is_err());
    }

    #[test]
    fn qhvac_values() {
        assert!(close(qhvac(1.5, 15.0, 23.0, 1.006), -12.072, 1e-12));
        assert_eq!(qhvac(1.5, 23.0, 23.0, 1.006), 0.0);
        assert_eq!(qhvac(0.0, 15.0, 23.0, 1.006), 0.0);
    }
}
