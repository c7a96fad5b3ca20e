//! Vector Ornstein–Uhlenbeck process for load fluctuations.
//!
//! Each channel obeys `dη = -α η dt + σ β dW` with independent Wiener
//! processes. With `β = √(2α)` the stationary variance is exactly `σ²`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma: f64,
}

impl OuParams {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>, sigma: f64) -> Result<Self> {
        let p = Self { alpha, beta, sigma };
        p.validate()?;
        Ok(p)
    }

    /// Channels with `β_i = √(2 α_i)`, so that `Var[η_i] = σ²`.
    pub fn unit_variance(alpha: Vec<f64>, sigma: f64) -> Result<Self> {
        let beta = alpha.iter().map(|a| (2.0 * a).sqrt()).collect();
        Self::new(alpha, beta, sigma)
    }

    /// No channels; used by cases without fluctuating loads.
    pub fn empty() -> Self {
        Self {
            alpha: Vec::new(),
            beta: Vec::new(),
            sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.len() != self.beta.len() {
            return Err(Error::InvalidParameter(format!(
                "alpha has {} channels but beta has {}",
                self.alpha.len(),
                self.beta.len()
            )));
        }
        if let Some(a) = self.alpha.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be positive, got {a}"
            )));
        }
        if let Some(b) = self.beta.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "beta must be positive, got {b}"
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be non-negative, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn with_sigma(&self, sigma: f64) -> Self {
        Self {
            sigma,
            ..self.clone()
        }
    }

    /// `(σ β_i)² / (2 α_i)`.
    pub fn stationary_variance(&self, channel: usize) -> f64 {
        let sb = self.sigma * self.beta[channel];
        sb * sb / (2.0 * self.alpha[channel])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuState {
    pub eta: Vec<f64>,
    pub t: f64,
}

impl OuState {
    pub fn zeros(dim: usize) -> Self {
        Self {
            eta: vec![0.0; dim],
            t: 0.0,
        }
    }
}

/// Draws `η(0)` from the stationary law `N(0, (σβ_i)²/(2α_i))`.
pub fn ou_initial_sample(params: &OuParams, rng: &mut RngStream) -> OuState {
    let eta = (0..params.dim())
        .map(|i| {
            if params.sigma == 0.0 {
                0.0
            } else {
                params.stationary_variance(i).sqrt() * rng.standard_normal()
            }
        })
        .collect();
    OuState { eta, t: 0.0 }
}

/// One Euler–Maruyama step: `η ← η − α η dt + σ β √dt z`.
///
/// With `σ = 0` no variates are consumed and the map is the plain linear
/// decay `η ← (1 − α dt) η`.
pub fn ou_step(state: &mut OuState, params: &OuParams, dt: f64, rng: &mut RngStream) {
    let sqrt_dt = dt.sqrt();
    for (i, eta) in state.eta.iter_mut().enumerate() {
        let drift = -params.alpha[i] * *eta * dt;
        if params.sigma == 0.0 {
            *eta += drift;
        } else {
            *eta += drift + params.sigma * params.beta[i] * sqrt_dt * rng.standard_normal();
        }
    }
    state.t += dt;
}

/// Exact transition kernel, kept as an independent reference for the
/// Euler–Maruyama stepper.
pub fn ou_exact_step(state: &mut OuState, params: &OuParams, dt: f64, rng: &mut RngStream) {
    for (i, eta) in state.eta.iter_mut().enumerate() {
        let decay = (-params.alpha[i] * dt).exp();
        let var = params.stationary_variance(i) * (1.0 - decay * decay);
        *eta = *eta * decay + var.sqrt() * rng.standard_normal();
    }
    state.t += dt;
}

/// Generates `n_steps + 1` samples starting from a stationary draw.
pub fn ou_stationary_path(
    params: &OuParams,
    dt: f64,
    n_steps: usize,
    rng: &mut RngStream,
) -> Vec<OuState> {
    let mut state = ou_initial_sample(params, rng);
    let mut path = Vec::with_capacity(n_steps + 1);
    path.push(state.clone());
    for _ in 0..n_steps {
        ou_step(&mut state, params, dt, rng);
        path.push(state.clone());
    }
    path
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathStatistics {
    pub dt: f64,
    pub mean: Vec<f64>,
    /// Unbiased (n − 1) sample variance.
    pub variance: Vec<f64>,
    /// `autocorrelation[channel][j]` at `lags[j]` steps; `None` when the
    /// channel has zero variance.
    pub autocorrelation: Vec<Option<Vec<f64>>>,
    pub lags: Vec<usize>,
}

impl PathStatistics {
    pub fn is_degenerate(&self, channel: usize) -> bool {
        self.autocorrelation[channel].is_none()
    }
}

/// Per-channel sample statistics of a uniformly spaced path.
///
/// Lags are in steps. The autocorrelation uses the usual biased estimator
/// `c(k)/c(0)`, which equals 1 at lag 0.
pub fn ou_path_statistics(path: &[OuState], lags: &[usize]) -> Result<PathStatistics> {
    if path.len() < 2 {
        return Err(Error::InvalidPath(format!(
            "need at least 2 samples, got {}",
            path.len()
        )));
    }
    let dim = path[0].eta.len();
    if path.iter().any(|s| s.eta.len() != dim) {
        return Err(Error::InvalidPath("inconsistent channel count".into()));
    }
    let dt = path[1].t - path[0].t;
    if !(dt > 0.0) {
        return Err(Error::InvalidPath(format!(
            "non-increasing time, dt = {dt}"
        )));
    }
    let tol = 1e-9 * dt.max(path[path.len() - 1].t.abs() * 1e-3);
    for (k, w) in path.windows(2).enumerate() {
        if ((w[1].t - w[0].t) - dt).abs() > tol.max(1e-12) {
            return Err(Error::InvalidPath(format!(
                "non-uniform spacing at sample {}: {} vs {}",
                k + 1,
                w[1].t - w[0].t,
                dt
            )));
        }
    }

    let n = path.len();
    let mut mean = vec![0.0; dim];
    let mut variance = vec![0.0; dim];
    let mut autocorrelation = Vec::with_capacity(dim);
    for ch in 0..dim {
        // shifted by the first sample so that constant paths give exactly 0
        let x0 = path[0].eta[ch];
        let xs: Vec<f64> = path.iter().map(|s| s.eta[ch] - x0).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
        mean[ch] = m + x0;
        variance[ch] = ss / (n - 1) as f64;
        if ss == 0.0 {
            autocorrelation.push(None);
            continue;
        }
        let acf = lags
            .iter()
            .map(|&lag| {
                if lag >= n {
                    return 0.0;
                }
                let c: f64 = xs[..n - lag]
                    .iter()
                    .zip(&xs[lag..])
                    .map(|(a, b)| (a - m) * (b - m))
                    .sum();
                c / ss
            })
            .collect();
        autocorrelation.push(Some(acf));
    }
    Ok(PathStatistics {
        dt,
        mean,
        variance,
        autocorrelation,
        lags: lags.to_vec(),
    })
}
