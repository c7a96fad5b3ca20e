use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loading-factor schedule: `λ` rises by `delta_lambda` every `interval`
/// seconds until `lambda_max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RampSchedule {
    pub delta_lambda: f64,
    pub interval: f64,
    pub lambda_max: f64,
    /// Linear instead of stepwise increase, same average speed.
    #[serde(default)]
    pub continuous: bool,
}

impl RampSchedule {
    pub fn new(delta_lambda: f64, interval: f64, lambda_max: f64) -> Result<Self> {
        let s = Self {
            delta_lambda,
            interval,
            lambda_max,
            continuous: false,
        };
        s.validate()?;
        Ok(s)
    }

    /// Schedule whose speed in MW/s is `speed` for ramped power `p0_mw`.
    pub fn from_speed(speed: f64, delta_lambda: f64, p0_mw: f64, lambda_max: f64) -> Result<Self> {
        if !(speed > 0.0 && p0_mw > 0.0) {
            return Err(Error::InvalidParameter(
                "speed and ramped power must be positive".into(),
            ));
        }
        Self::new(delta_lambda, delta_lambda * p0_mw / speed, lambda_max)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("delta_lambda", self.delta_lambda),
            ("interval", self.interval),
            ("lambda_max", self.lambda_max),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// `delta_lambda · p0_mw / interval`.
    pub fn speed_mw_per_s(&self, p0_mw: f64) -> f64 {
        self.delta_lambda * p0_mw / self.interval
    }

    /// Time at which `lambda_max` is reached.
    pub fn duration(&self) -> f64 {
        (self.lambda_max / self.delta_lambda).ceil() * self.interval
    }
}

/// `λ(t) = Δλ · ⌊t / interval⌋`, capped at `lambda_max`.
pub fn ramp_lambda(schedule: &RampSchedule, t: f64) -> f64 {
    let steps = if schedule.continuous {
        t / schedule.interval
    } else {
        // tolerance so that t = k·interval accumulated in floating point
        // still counts as k completed intervals
        (t / schedule.interval + 1e-9).floor()
    };
    (schedule.delta_lambda * steps.max(0.0)).min(schedule.lambda_max)
}
