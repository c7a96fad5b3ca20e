//! Fixed-step SDAE integration: explicit Euler–Maruyama on `(x, η)`, then
//! the ramp, then a warm-started Newton solve for the algebraic states.

use serde::{Deserialize, Serialize};

use crate::detector::{check_snb, DetectionCause, DetectorConfig, SnbCheck};
use crate::error::{Error, Result};
use crate::grid::{ramp_lambda, GridModel, GridState, NewtonOptions, RampSchedule};
use crate::ou::{ou_initial_sample, ou_step, OuParams};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_iter")]
    pub max_newton_iter: usize,
    /// Seconds; defaults to the time the ramp needs to reach `lambda_max`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Keep every n-th step in the record (0 keeps none).
    #[serde(default)]
    pub record_every: usize,
    /// Bus ids whose voltage magnitude is recorded.
    #[serde(default)]
    pub record_buses: Vec<usize>,
}

fn default_dt() -> f64 {
    0.05
}

fn default_tol() -> f64 {
    1e-8
}

fn default_iter() -> usize {
    20
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            newton_tol: default_tol(),
            max_newton_iter: default_iter(),
            horizon: None,
            record_every: 0,
            record_buses: Vec::new(),
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.newton_tol > 0.0) || self.max_newton_iter == 0 {
            return Err(Error::InvalidParameter(
                "Newton settings must be positive".into(),
            ));
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "horizon must be positive, got {h}"
                )));
            }
        }
        Ok(())
    }

    pub fn newton(&self) -> NewtonOptions {
        NewtonOptions {
            tol: self.newton_tol,
            max_iter: self.max_newton_iter,
        }
    }

    pub fn horizon_for(&self, schedule: &RampSchedule) -> f64 {
        self.horizon
            .unwrap_or_else(|| schedule.duration() + schedule.interval)
    }

    /// `true` when `dt` exceeds a tenth of the fastest recovery constant.
    pub fn is_coarse_for(&self, model: &GridModel) -> bool {
        model
            .loads
            .iter()
            .filter(|l| l.dynamic)
            .any(|l| self.dt > l.tp.min(l.tq) / 10.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    SnbDetected,
    NoSolution,
    HorizonReached,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub lambda: f64,
    pub v: Vec<f64>,
    pub x: Vec<f64>,
    pub eta: Vec<f64>,
    pub rcond: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub samples: Vec<Sample>,
    pub termination: Termination,
    /// MW at the last step classified stable; absent when the horizon was
    /// reached without detection.
    pub margin_mw: Option<f64>,
    pub lambda_last_stable: f64,
    pub lambda_at_detection: Option<f64>,
    pub t_at_detection: Option<f64>,
    pub steps: usize,
    /// Steps whose Newton solve needed more than five iterations.
    pub slow_newton_steps: usize,
}

/// Algebraic failure during a step; carries the last consistent state.
#[derive(Clone, Debug)]
pub struct Collapse {
    pub last: GridState,
    pub t: f64,
}

/// Advances `st` by one step. On algebraic failure `st` is unchanged and
/// the failing time is returned inside [`Collapse`].
#[allow(clippy::result_large_err)]
pub fn sdae_step(
    model: &GridModel,
    st: &mut GridState,
    ou: &OuParams,
    schedule: &RampSchedule,
    cfg: &IntegratorConfig,
    step_index: u64,
    rng: &mut RngStream,
) -> std::result::Result<usize, Collapse> {
    let dt = cfg.dt;
    let collapse = |s: &GridState| Collapse {
        last: s.clone(),
        t: (step_index + 1) as f64 * dt,
    };
    let drift = model.state_derivative(st).map_err(|_| collapse(st))?;
    let mut next = st.clone();
    for (x, d) in next.x.iter_mut().zip(&drift) {
        *x += d * dt;
    }
    ou_step(&mut next.eta, ou, dt, rng);
    // t from the step count so that ramp boundaries do not drift
    next.t = (step_index + 1) as f64 * dt;
    next.eta.t = next.t;
    next.lambda = ramp_lambda(schedule, next.t);
    match model.solve_algebraic(&mut next, &cfg.newton()) {
        Ok(iters) => {
            *st = next;
            Ok(iters)
        }
        Err(_) => Err(collapse(st)),
    }
}

fn sample(st: &GridState, buses: &[usize], rcond: f64) -> Sample {
    Sample {
        t: st.t,
        lambda: st.lambda,
        v: buses.iter().map(|&i| st.v[i]).collect(),
        x: st.x.clone(),
        eta: st.eta.eta.clone(),
        rcond,
    }
}

/// One trajectory from a stationary noise draw until detection, algebraic
/// failure or the horizon.
pub fn simulate_trajectory(
    model: &GridModel,
    ou: &OuParams,
    schedule: &RampSchedule,
    cfg: &IntegratorConfig,
    detector: &DetectorConfig,
    rng: &mut RngStream,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    detector.validate()?;
    schedule.validate()?;
    let buses: Vec<usize> = cfg
        .record_buses
        .iter()
        .map(|id| model.case.index_of(*id))
        .collect::<Result<_>>()?;
    let eta0 = ou_initial_sample(ou, rng);
    let mut st = model.initial_state(eta0, &cfg.newton())?;
    let horizon = cfg.horizon_for(schedule);
    let mut rec = TrajectoryRecord {
        samples: Vec::new(),
        termination: Termination::HorizonReached,
        margin_mw: None,
        lambda_last_stable: st.lambda,
        lambda_at_detection: None,
        t_at_detection: None,
        steps: 0,
        slow_newton_steps: 0,
    };

    let mut check = check_snb(model, &st, ou, detector)?;
    if cfg.record_every > 0 {
        rec.samples.push(sample(&st, &buses, check.rcond()));
    }
    let mut k: u64 = 0;
    loop {
        if let SnbCheck::Detected { sample: s, .. } = check {
            rec.termination = match s.cause {
                DetectionCause::RcondThreshold => Termination::SnbDetected,
                DetectionCause::NoSolution => Termination::NoSolution,
            };
            rec.lambda_at_detection = Some(s.lambda_at_detection);
            rec.t_at_detection = Some(s.t_at_detection);
            rec.margin_mw = Some(model.margin_mw(rec.lambda_last_stable));
            break;
        }
        rec.lambda_last_stable = st.lambda;
        if st.t >= horizon - 1e-9 * cfg.dt {
            break;
        }
        let lambda_before = st.lambda;
        match sdae_step(model, &mut st, ou, schedule, cfg, k, rng) {
            Ok(iters) => {
                if iters > 5 {
                    rec.slow_newton_steps += 1;
                }
            }
            Err(c) => {
                rec.termination = Termination::NoSolution;
                rec.lambda_at_detection = Some(ramp_lambda(schedule, c.t));
                rec.t_at_detection = Some(c.t);
                rec.margin_mw = Some(model.margin_mw(rec.lambda_last_stable));
                rec.steps = k as usize + 1;
                break;
            }
        }
        k += 1;
        rec.steps = k as usize;
        check = if detector.check_every_step || st.lambda != lambda_before {
            check_snb(model, &st, ou, detector)?
        } else {
            SnbCheck::Stable { rcond: f64::NAN }
        };
        if cfg.record_every > 0
            && ((k as usize).is_multiple_of(cfg.record_every) || check.is_detected())
        {
            rec.samples.push(sample(&st, &buses, check.rcond()));
        }
    }
    Ok(rec)
}
