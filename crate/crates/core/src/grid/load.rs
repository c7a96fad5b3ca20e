//! Exponential-recovery loads with a fluctuating nominal power.
//!
//! Steady and transient characteristics are
//! `p_s = (p0(1+λ) + η)(V/V0)^{α_s}` and `p_t = (p0(1+λ) + η)(V/V0)^{α_t}`
//! (likewise for `q` with `β`). A dynamic load consumes `x_p/T_p + p_t` and
//! its recovery state obeys `ẋ_p = −x_p/T_p + p_s − p_t`. A static load has
//! no state and consumes `p_s`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_alpha_t() -> f64 {
    2.0
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadDynParams {
    pub bus: usize,
    pub p0: f64,
    pub q0: f64,
    #[serde(default = "default_tp")]
    pub tp: f64,
    #[serde(default = "default_tp")]
    pub tq: f64,
    #[serde(default)]
    pub alpha_s: f64,
    #[serde(default = "default_alpha_t")]
    pub alpha_t: f64,
    #[serde(default)]
    pub beta_s: f64,
    #[serde(default = "default_alpha_t")]
    pub beta_t: f64,
    /// Nominal voltage; when absent it is set to the base-case solution so
    /// that `x = 0` is an equilibrium.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_channel: Option<usize>,
    /// Whether the loading factor scales this load's nominal power.
    #[serde(default)]
    pub ramped: bool,
    /// Static loads have no recovery states.
    #[serde(default = "default_true")]
    pub dynamic: bool,
}

fn default_tp() -> f64 {
    1.0
}

impl LoadDynParams {
    pub fn new(bus: usize, p0: f64, q0: f64) -> Self {
        Self {
            bus,
            p0,
            q0,
            tp: default_tp(),
            tq: default_tp(),
            alpha_s: 0.0,
            alpha_t: 2.0,
            beta_s: 0.0,
            beta_t: 2.0,
            v0: None,
            noise_channel: None,
            ramped: false,
            dynamic: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dynamic && !(self.tp > 0.0 && self.tq > 0.0) {
            return Err(Error::Validation(format!(
                "load at bus {}: time constants must be positive",
                self.bus
            )));
        }
        if !(self.p0 >= 0.0) || !self.q0.is_finite() {
            return Err(Error::Validation(format!(
                "load at bus {}: p0 must be >= 0 and q0 finite",
                self.bus
            )));
        }
        if let Some(v0) = self.v0 {
            if !(v0 > 0.0) {
                return Err(Error::Validation(format!(
                    "load at bus {}: v0 must be positive",
                    self.bus
                )));
            }
        }
        Ok(())
    }

    pub fn nominal_voltage(&self) -> f64 {
        self.v0.unwrap_or(1.0)
    }

    /// `(p0(1+λ)+η, q0(1+λ)+η)`.
    pub fn nominal_powers(&self, lambda: f64, eta: f64) -> (f64, f64) {
        let scale = if self.ramped { 1.0 + lambda } else { 1.0 };
        (self.p0 * scale + eta, self.q0 * scale + eta)
    }
}

/// Load-bus quantities needed to evaluate a load.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoadPoint {
    pub v: f64,
    pub x_p: f64,
    pub x_q: f64,
    pub eta: f64,
    pub lambda: f64,
}

/// Steady and transient characteristics with their voltage derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Characteristics {
    pub p_s: f64,
    pub p_t: f64,
    pub q_s: f64,
    pub q_t: f64,
    pub dp_s: f64,
    pub dp_t: f64,
    pub dq_s: f64,
    pub dq_t: f64,
}

fn power_law(nominal: f64, ratio: f64, v0: f64, exponent: f64) -> (f64, f64) {
    if exponent == 0.0 {
        return (nominal, 0.0);
    }
    let f = ratio.powf(exponent);
    (nominal * f, nominal * exponent * f / (ratio * v0))
}

pub fn characteristics(load: &LoadDynParams, pt: &LoadPoint) -> Result<Characteristics> {
    if !(pt.v > 0.0) {
        return Err(Error::CollapsedVoltage {
            bus: load.bus,
            v: pt.v,
        });
    }
    let v0 = load.nominal_voltage();
    let ratio = pt.v / v0;
    let (pn, qn) = load.nominal_powers(pt.lambda, pt.eta);
    let (p_s, dp_s) = power_law(pn, ratio, v0, load.alpha_s);
    let (p_t, dp_t) = power_law(pn, ratio, v0, load.alpha_t);
    let (q_s, dq_s) = power_law(qn, ratio, v0, load.beta_s);
    let (q_t, dq_t) = power_law(qn, ratio, v0, load.beta_t);
    Ok(Characteristics {
        p_s,
        p_t,
        q_s,
        q_t,
        dp_s,
        dp_t,
        dq_s,
        dq_t,
    })
}

/// Power drawn from the network, per unit.
pub fn load_consumption(load: &LoadDynParams, pt: &LoadPoint) -> Result<(f64, f64)> {
    let c = characteristics(load, pt)?;
    if load.dynamic {
        Ok((pt.x_p / load.tp + c.p_t, pt.x_q / load.tq + c.q_t))
    } else {
        Ok((c.p_s, c.q_s))
    }
}

/// `(ẋ_p, ẋ_q)`; zero for static loads.
pub fn load_state_derivative(load: &LoadDynParams, pt: &LoadPoint) -> Result<(f64, f64)> {
    if !load.dynamic {
        return Ok((0.0, 0.0));
    }
    let c = characteristics(load, pt)?;
    Ok((
        -pt.x_p / load.tp + c.p_s - c.p_t,
        -pt.x_q / load.tq + c.q_s - c.q_t,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_load() -> LoadDynParams {
        let mut l = LoadDynParams::new(1, 1.0, 0.5);
        l.v0 = Some(1.0);
        l.tp = 10.0;
        l
    }

    fn at(v: f64, x_p: f64) -> LoadPoint {
        LoadPoint {
            v,
            x_p,
            x_q: 0.0,
            eta: 0.0,
            lambda: 0.0,
        }
    }

    #[test]
    fn nominal_point_draws_nominal_power() {
        let (p, q) = load_consumption(&unit_load(), &at(1.0, 0.0)).unwrap();
        assert_eq!((p, q), (1.0, 0.5));
    }

    #[test]
    fn transient_response_is_quadratic() {
        let (p, _) = load_consumption(&unit_load(), &at(0.95, 0.0)).unwrap();
        assert!((p - 0.9025).abs() < 1e-12);
    }

    #[test]
    fn recovery_state_adds_its_share() {
        let (p, _) = load_consumption(&unit_load(), &at(1.0, 0.1)).unwrap();
        assert!((p - 1.01).abs() < 1e-12);
    }

    #[test]
    fn derivative_examples() {
        let l = unit_load();
        let (dp, _) = load_state_derivative(&l, &at(1.0, 0.3)).unwrap();
        assert!((dp + 0.03).abs() < 1e-12);
        let (dp, _) = load_state_derivative(&l, &at(0.95, 0.0)).unwrap();
        assert!((dp - 0.0975).abs() < 1e-12);
        // equilibrium x_p = T_p (p_s − p_t)
        let xe = 10.0 * 0.0975;
        let (dp, _) = load_state_derivative(&l, &at(0.95, xe)).unwrap();
        assert!(dp.abs() < 1e-12);
    }

    #[test]
    fn collapsed_voltage_is_an_error() {
        assert!(matches!(
            load_consumption(&unit_load(), &at(0.0, 0.0)),
            Err(Error::CollapsedVoltage { .. })
        ));
    }

    #[test]
    fn ramp_and_noise_enter_nominal_power() {
        let mut l = unit_load();
        l.ramped = true;
        assert_eq!(l.nominal_powers(0.5, 0.1), (1.6, 0.85));
        l.ramped = false;
        assert_eq!(l.nominal_powers(0.5, 0.1), (1.1, 0.6));
    }

    #[test]
    fn voltage_derivative_matches_difference_quotient() {
        let mut l = unit_load();
        l.alpha_s = 0.7;
        l.alpha_t = 1.8;
        let pt = at(0.93, 0.0);
        let c = characteristics(&l, &pt).unwrap();
        let h = 1e-6;
        let up = characteristics(&l, &LoadPoint { v: 0.93 + h, ..pt }).unwrap();
        let dn = characteristics(&l, &LoadPoint { v: 0.93 - h, ..pt }).unwrap();
        assert!((c.dp_t - (up.p_t - dn.p_t) / (2.0 * h)).abs() < 1e-8);
        assert!((c.dp_s - (up.p_s - dn.p_s) / (2.0 * h)).abs() < 1e-8);
    }
}
