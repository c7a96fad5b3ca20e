//! Slow-fast saddle-node normal form `ε x' = −y − x²`, `y' = 1`.
//!
//! Everything here runs in slow time. Noise enters the fast equation as
//! `(σ/√ε) dW` and, optionally, the slow equation as `σ̃ dW`. Paths are
//! advanced with Euler–Maruyama on the grid `y_k = y0 + k·dt`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Default escape level: "negative values of order one".
pub const ESCAPE_LEVEL: f64 = -1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalFormParams {
    pub epsilon: f64,
    pub sigma: f64,
    #[serde(default)]
    pub sigma_slow: f64,
    pub x0: f64,
    pub y0: f64,
}

impl NormalFormParams {
    /// Starts on the stable branch `x = √(−y0)`.
    pub fn on_branch(epsilon: f64, sigma: f64, y0: f64) -> Self {
        Self {
            epsilon,
            sigma,
            sigma_slow: 0.0,
            x0: (-y0).sqrt(),
            y0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma_slow >= 0.0) {
            return Err(Error::InvalidParameter(
                "noise intensities must be >= 0".into(),
            ));
        }
        if !(self.x0.is_finite() && self.y0.is_finite()) {
            return Err(Error::InvalidParameter(
                "initial condition must be finite".into(),
            ));
        }
        Ok(())
    }

    fn check_dt(&self, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dt must be positive, got {dt}"
            )));
        }
        if dt > self.epsilon / 10.0 * (1.0 + 1e-12) {
            return Err(Error::Stiffness {
                dt,
                epsilon: self.epsilon,
            });
        }
        Ok(())
    }
}

/// Where and whether a path left through the unstable branch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeRecord {
    pub escaped: bool,
    /// `y` when `x` first reached the escape level.
    pub y_at_escape: Option<f64>,
    /// `y` when `x` first crossed zero.
    pub y_cross_zero: Option<f64>,
}

/// Options for a single run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOptions {
    pub dt: f64,
    /// Stop once `y` exceeds this value.
    pub y_max: f64,
    pub escape_level: f64,
    /// Keep every `record_every`-th sample (0 keeps none).
    pub record_every: usize,
}

impl RunOptions {
    pub fn new(dt: f64, y_max: f64) -> Self {
        Self {
            dt,
            y_max,
            escape_level: ESCAPE_LEVEL,
            record_every: 1,
        }
    }

    pub fn unrecorded(mut self) -> Self {
        self.record_every = 0;
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NfPath {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[inline]
fn fast_field(x: f64, y: f64) -> f64 {
    -y - x * x
}

fn integrate(
    params: &NormalFormParams,
    opts: &RunOptions,
    mut rng: Option<&mut RngStream>,
) -> Result<(NfPath, EscapeRecord)> {
    params.validate()?;
    params.check_dt(opts.dt)?;
    let dt = opts.dt;
    let h = dt / params.epsilon;
    let fast_amp = params.sigma * h.sqrt();
    let slow_amp = params.sigma_slow * dt.sqrt();
    let noisy = rng.is_some() && (params.sigma > 0.0 || params.sigma_slow > 0.0);

    let mut path = NfPath::default();
    let (mut x, mut y) = (params.x0, params.y0);
    let mut record = EscapeRecord {
        escaped: false,
        y_at_escape: None,
        y_cross_zero: None,
    };
    let mut k: u64 = 0;
    if opts.record_every > 0 {
        path.x.push(x);
        path.y.push(y);
    }
    if x <= opts.escape_level {
        record.escaped = true;
        record.y_at_escape = Some(y);
        return Ok((path, record));
    }
    while y <= opts.y_max {
        let mut x_next = x + h * fast_field(x, y);
        let y_next;
        if noisy {
            let rng = rng.as_deref_mut().expect("noisy run has a stream");
            if params.sigma > 0.0 {
                x_next += fast_amp * rng.standard_normal();
            }
            if params.sigma_slow > 0.0 {
                y_next = y + dt + slow_amp * rng.standard_normal();
            } else {
                y_next = params.y0 + (k + 1) as f64 * dt;
            }
        } else {
            y_next = params.y0 + (k + 1) as f64 * dt;
        }
        k += 1;

        if record.y_cross_zero.is_none() && x > 0.0 && x_next <= 0.0 {
            record.y_cross_zero = Some(y + (y_next - y) * x / (x - x_next));
        }
        if x_next <= opts.escape_level || !x_next.is_finite() {
            let y_esc = if x_next.is_finite() {
                y + (y_next - y) * (x - opts.escape_level) / (x - x_next)
            } else {
                y_next
            };
            record.escaped = true;
            record.y_at_escape = Some(y_esc);
            if record.y_cross_zero.is_none() {
                record.y_cross_zero = Some(y_esc);
            }
            x = x_next;
            y = y_next;
            if opts.record_every > 0 {
                path.x.push(x);
                path.y.push(y);
            }
            break;
        }
        x = x_next;
        y = y_next;
        if opts.record_every > 0 && k.is_multiple_of(opts.record_every as u64) {
            path.x.push(x);
            path.y.push(y);
        }
    }
    Ok((path, record))
}

/// Noise-free path of the normal form (explicit Euler in slow time).
pub fn nf_deterministic_trajectory(
    params: &NormalFormParams,
    opts: &RunOptions,
) -> Result<(NfPath, EscapeRecord)> {
    let p = NormalFormParams {
        sigma: 0.0,
        sigma_slow: 0.0,
        ..*params
    };
    integrate(&p, opts, None)
}

/// Euler–Maruyama sample path. With `σ = σ̃ = 0` this is bit-identical to
/// [`nf_deterministic_trajectory`].
pub fn nf_stochastic_trajectory(
    params: &NormalFormParams,
    opts: &RunOptions,
    rng: &mut RngStream,
) -> Result<(NfPath, EscapeRecord)> {
    integrate(params, opts, Some(rng))
}

/// Escape records for `n_paths` independent paths; path `i` uses stream
/// `(seed_base, i)`.
pub fn nf_escape_ensemble(
    params: &NormalFormParams,
    opts: &RunOptions,
    n_paths: usize,
    seed_base: u64,
) -> Result<Vec<EscapeRecord>> {
    use rayon::prelude::*;
    let opts = opts.unrecorded();
    (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed_base, i as u64);
            nf_stochastic_trajectory(params, &opts, &mut rng).map(|(_, r)| r)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Weak,
    Strong,
}

/// Weak iff `σ < √ε`; the boundary counts as strong.
pub fn classify_regime(sigma: f64, epsilon: f64) -> Regime {
    if sigma < epsilon.sqrt() {
        Regime::Weak
    } else {
        Regime::Strong
    }
}

/// Solves `A U + U Aᵀ + Q = 0` by vectorisation.
pub fn stationary_cross_section(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut kron = DMatrix::<f64>::zeros(n * n, n * n);
    // column-major vec: vec(AU) = (I⊗A) vec U, vec(UAᵀ) = (A⊗I) vec U
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                kron[(j * n + i, j * n + k)] += a[(i, k)];
                kron[(j * n + i, k * n + i)] += a[(j, k)];
            }
        }
    }
    let rhs = nalgebra::DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let sol = kron.lu().solve(&rhs).ok_or(Error::SingularJacobian)?;
    let u = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&u + u.transpose()) * 0.5)
}

fn check_hurwitz(a: &DMatrix<f64>, y: f64) -> Result<()> {
    let eig = a.complex_eigenvalues();
    if let Some(bad) = eig.iter().find(|z| !(z.re < 0.0)) {
        return Err(Error::NotHurwitz { y, a: bad.re });
    }
    Ok(())
}

/// Block forcing `diag(κ I_nx, B Bᵀ)`.
pub fn cross_section_forcing(
    n_fast: usize,
    kappa: f64,
    noise_shape: &DMatrix<f64>,
) -> DMatrix<f64> {
    let k = noise_shape.nrows();
    let mut q = DMatrix::zeros(n_fast + k, n_fast + k);
    for i in 0..n_fast {
        q[(i, i)] = kappa;
    }
    let bbt = noise_shape * noise_shape.transpose();
    q.view_mut((n_fast, n_fast), (k, k)).copy_from(&bbt);
    q
}

/// Cross-section `Ū(y, ε)` of the concentration layer.
///
/// Integrates `ε U' = A(y) U + U A(y)ᵀ + diag(κ I, B Bᵀ)` with RK4 from the
/// stationary value at `y_start` up to `y`. `linearization(y)` returns the
/// Jacobian along the nominal path and must be Hurwitz over the range.
pub fn cross_section_value<F>(
    linearization: F,
    y_start: f64,
    y: f64,
    epsilon: f64,
    kappa: f64,
    n_fast: usize,
    noise_shape: &DMatrix<f64>,
) -> Result<DMatrix<f64>>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter("epsilon must be positive".into()));
    }
    let q = cross_section_forcing(n_fast, kappa, noise_shape);
    let a0 = linearization(y_start);
    check_hurwitz(&a0, y_start)?;
    let mut u = stationary_cross_section(&a0, &q)?;
    if y <= y_start {
        return Ok(u);
    }
    let rhs = |yy: f64, uu: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let a = linearization(yy);
        check_hurwitz(&a, yy)?;
        Ok((&a * uu + uu * a.transpose() + &q) / epsilon)
    };
    let n_steps = (((y - y_start) / (epsilon / 20.0)).ceil() as usize).max(1);
    let h = (y - y_start) / n_steps as f64;
    let mut yy = y_start;
    for _ in 0..n_steps {
        let k1 = rhs(yy, &u)?;
        let k2 = rhs(yy + h / 2.0, &(&u + &k1 * (h / 2.0)))?;
        let k3 = rhs(yy + h / 2.0, &(&u + &k2 * (h / 2.0)))?;
        let k4 = rhs(yy + h, &(&u + &k3 * h))?;
        u += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        yy += h;
    }
    Ok(u)
}

/// Tabulated concentration layer `B(h)` on the grid `y_k = y0 + k·dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct EllipsoidSpec {
    pub y0: f64,
    pub dt: f64,
    /// Nominal path `x̄(y_k)`.
    pub center: Vec<f64>,
    /// Cross-section `X̄(y_k)`.
    pub shape: Vec<f64>,
    pub h: f64,
}

impl EllipsoidSpec {
    /// Builds the layer around the noise-free path from `(x0, y0)` up to
    /// `y_stop`. The cross-section solves `ε X' = 2 a X + 1` with
    /// `a = ∂ₓf(x̄, y) = −2 x̄`, starting from its stationary value.
    pub fn for_normal_form(
        params: &NormalFormParams,
        dt: f64,
        y_stop: f64,
        h: f64,
    ) -> Result<Self> {
        params.validate()?;
        params.check_dt(dt)?;
        if !(h > 0.0) {
            return Err(Error::InvalidParameter("h must be positive".into()));
        }
        let n = ((y_stop - params.y0) / dt).floor().max(0.0) as usize;
        let ratio = dt / params.epsilon;
        let mut center = Vec::with_capacity(n + 1);
        let mut shape = Vec::with_capacity(n + 1);
        let mut x = params.x0;
        let a0 = -2.0 * x;
        if !(a0 < 0.0) {
            return Err(Error::NotHurwitz {
                y: params.y0,
                a: a0,
            });
        }
        let mut xs = -1.0 / (2.0 * a0);
        for k in 0..=n {
            let y = params.y0 + k as f64 * dt;
            let a = -2.0 * x;
            if !(a < 0.0) {
                return Err(Error::NotHurwitz { y, a });
            }
            center.push(x);
            shape.push(xs);
            // Heun step on X, Euler on x to match the path scheme
            let x_next = x + ratio * fast_field(x, y);
            let a_next = -2.0 * x_next;
            let k1 = 2.0 * a * xs + 1.0;
            let pred = xs + ratio * k1;
            let k2 = 2.0 * a_next * pred + 1.0;
            xs += 0.5 * ratio * (k1 + k2);
            x = x_next;
        }
        Ok(Self {
            y0: params.y0,
            dt,
            center,
            shape,
            h,
        })
    }

    pub fn len(&self) -> usize {
        self.center.len()
    }

    pub fn is_empty(&self) -> bool {
        self.center.is_empty()
    }

    fn index_of(&self, y: f64) -> Option<usize> {
        let k = ((y - self.y0) / self.dt).round();
        if k < 0.0 || k as usize >= self.center.len() {
            None
        } else {
            Some(k as usize)
        }
    }

    /// `true` iff `(x − x̄)² / X̄ < h²` at the grid point nearest to `y`.
    /// Points outside the tabulated range are reported as outside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self.index_of(y) {
            Some(k) => scalar_ellipsoid_contains(x - self.center[k], self.shape[k], self.h),
            None => false,
        }
    }
}

pub fn scalar_ellipsoid_contains(deviation: f64, shape: f64, h: f64) -> bool {
    deviation * deviation / shape < h * h
}

/// `⟨d, U⁻¹ d⟩ < h²` for a positive-definite cross-section `U`.
pub fn ellipsoid_contains(
    deviation: &nalgebra::DVector<f64>,
    shape: &DMatrix<f64>,
    h: f64,
) -> bool {
    match shape.clone().cholesky() {
        Some(ch) => {
            let w = ch.solve(deviation);
            deviation.dot(&w) < h * h
        }
        None => false,
    }
}

/// Monte Carlo exit probability with a 95% Wilson interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitEstimate {
    pub h: f64,
    pub probability: f64,
    pub lower: f64,
    pub upper: f64,
    pub exits: usize,
    pub n_paths: usize,
}

pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if successes == 0 {
        0.0
    } else {
        (centre - half).max(0.0)
    };
    let hi = if successes == n {
        1.0
    } else {
        (centre + half).min(1.0)
    };
    (lo, hi)
}

const Z95: f64 = 1.959_963_984_540_054;

/// Options shared by both exit estimators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExitOptions {
    pub dt: f64,
    pub y_stop: f64,
    pub n_paths: usize,
}

fn check_exit_options(params: &NormalFormParams, opts: &ExitOptions) -> Result<()> {
    if opts.n_paths < 100 {
        return Err(Error::InvalidParameter(format!(
            "need at least 100 paths for a meaningful interval, got {}",
            opts.n_paths
        )));
    }
    let limit = -params.epsilon.powf(2.0 / 3.0);
    if !(opts.y_stop <= limit) {
        return Err(Error::InvalidParameter(format!(
            "y_stop = {} must lie on the stable branch (<= {limit})",
            opts.y_stop
        )));
    }
    if !(opts.y_stop > params.y0) {
        return Err(Error::InvalidParameter("y_stop must exceed y0".into()));
    }
    Ok(())
}

/// Whether one Euler–Maruyama path leaves the layer before `y_stop`.
fn path_exits(
    params: &NormalFormParams,
    tube: &EllipsoidSpec,
    h2: f64,
    rng: &mut RngStream,
    shift: Option<&dyn Fn(usize) -> f64>,
    mut on_noise: impl FnMut(usize, f64),
) -> bool {
    let ratio = tube.dt / params.epsilon;
    let amp = params.sigma * ratio.sqrt();
    let mut x = params.x0;
    let mut exited = false;
    for k in 0..tube.len() - 1 {
        let y = params.y0 + k as f64 * tube.dt;
        let mut z = rng.standard_normal();
        if let Some(s) = shift {
            z += s(k);
        }
        on_noise(k, z);
        if !exited {
            x += ratio * fast_field(x, y) + amp * z;
            let d = x - tube.center[k + 1];
            if !(d * d < h2 * tube.shape[k + 1]) {
                exited = true;
            }
        }
    }
    exited
}

/// Fraction of paths that leave `B(h)` before `y_stop`.
///
/// Path `i` uses stream `(seed_base, i)`.
pub fn estimate_exit_probability(
    params: &NormalFormParams,
    h: f64,
    opts: &ExitOptions,
    seed_base: u64,
) -> Result<ExitEstimate> {
    use rayon::prelude::*;
    check_exit_options(params, opts)?;
    let tube = EllipsoidSpec::for_normal_form(params, opts.dt, opts.y_stop, h)?;
    if params.sigma == 0.0 {
        let (lower, upper) = wilson_interval(0, opts.n_paths, Z95);
        return Ok(ExitEstimate {
            h,
            probability: 0.0,
            lower,
            upper,
            exits: 0,
            n_paths: opts.n_paths,
        });
    }
    let h2 = h * h;
    let exits: usize = (0..opts.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed_base, i as u64);
            path_exits(params, &tube, h2, &mut rng, None, |_, _| {}) as usize
        })
        .sum();
    let (lower, upper) = wilson_interval(exits, opts.n_paths, Z95);
    Ok(ExitEstimate {
        h,
        probability: exits as f64 / opts.n_paths as f64,
        lower,
        upper,
        exits,
        n_paths: opts.n_paths,
    })
}

/// Importance-sampled exit probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedExitEstimate {
    pub h: f64,
    pub probability: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
    /// Paths that left the layer under the proposal.
    pub hits: usize,
    pub n_paths: usize,
}

/// Exit probability for layers too deep for plain sampling.
///
/// Paths are drawn from a uniform mixture of Gaussian mean shifts. Mixture
/// component `(τ, s)` adds the minimum-energy forcing that drives the
/// linearised deviation to `s·h·√X̄(y_τ)` at step `τ`. The likelihood ratio
/// of the whole mixture only depends on the linear response `L_τ` to the
/// realised increments, so each weight costs one pass over the grid. The
/// indicator is evaluated on the full nonlinear path, so the estimator is
/// unbiased regardless of how good the linearisation is.
pub fn estimate_exit_probability_weighted(
    params: &NormalFormParams,
    h: f64,
    opts: &ExitOptions,
    seed_base: u64,
) -> Result<WeightedExitEstimate> {
    use rayon::prelude::*;
    check_exit_options(params, opts)?;
    let tube = EllipsoidSpec::for_normal_form(params, opts.dt, opts.y_stop, h)?;
    let n = tube.len();
    if params.sigma == 0.0 || n < 3 {
        return Ok(WeightedExitEstimate {
            h,
            probability: 0.0,
            std_error: 0.0,
            lower: 0.0,
            upper: 0.0,
            hits: 0,
            n_paths: opts.n_paths,
        });
    }
    let ratio = tube.dt / params.epsilon;
    let c = params.sigma * ratio.sqrt();
    // g_k = 1 + a_k dt/ε; prefix[k] = Σ_{i<k} ln g_i
    let gain: Vec<f64> = tube.center.iter().map(|x| 1.0 - 2.0 * x * ratio).collect();
    if gain.iter().any(|g| !(*g > 0.0)) {
        return Err(Error::Stiffness {
            dt: opts.dt,
            epsilon: params.epsilon,
        });
    }
    let mut prefix = vec![0.0; n + 1];
    for k in 0..n {
        prefix[k + 1] = prefix[k] + gain[k].ln();
    }
    // variance of the linear response and target offsets, τ = 1..n-1
    let mut var = vec![0.0; n];
    for k in 0..n - 1 {
        var[k + 1] = gain[k] * gain[k] * var[k] + c * c;
    }
    let targets: Vec<usize> = (1..n).collect();
    let target_dev: Vec<f64> = targets.iter().map(|&t| h * tube.shape[t].sqrt()).collect();
    let log_m = (2 * targets.len()) as f64;
    let h2 = h * h;

    let weights: Vec<(bool, f64)> = (0..opts.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed_base, i as u64);
            let pick = rng.index(targets.len());
            let sign = if rng.uniform() < 0.5 { 1.0 } else { -1.0 };
            let tau = targets[pick];
            let coef = sign * target_dev[pick] * c / var[tau];
            // shift on step k < τ: coef · Φ(k→τ) with Φ(k→τ) = Π_{k<i<τ} g_i
            let shift = |k: usize| -> f64 {
                if k < tau {
                    coef * (prefix[tau] - prefix[k + 1]).exp()
                } else {
                    0.0
                }
            };
            let mut lin = vec![0.0; n];
            let mut acc = 0.0;
            let exited = path_exits(params, &tube, h2, &mut rng, Some(&shift), |k, z| {
                acc = gain[k] * acc + c * z;
                lin[k + 1] = acc;
            });
            if !exited {
                return (false, 0.0);
            }
            // log of mixture density ratio dQ/dP = (1/2M) Σ_τ Σ_s exp(E)
            let mut terms = Vec::with_capacity(targets.len());
            for (j, &t) in targets.iter().enumerate() {
                let d = target_dev[j];
                let u = d * lin[t] / var[t];
                let log_cosh2 = u.abs() + (-2.0 * u.abs()).exp().ln_1p();
                terms.push(log_cosh2 - 0.5 * d * d / var[t]);
            }
            let mx = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln();
            (true, (log_m.ln() - lse).exp())
        })
        .collect();

    let nf = opts.n_paths as f64;
    let hits = weights.iter().filter(|w| w.0).count();
    let mean = weights.iter().map(|w| w.1).sum::<f64>() / nf;
    let var_w = weights.iter().map(|w| (w.1 - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let se = (var_w / nf).sqrt();
    Ok(WeightedExitEstimate {
        h,
        probability: mean,
        std_error: se,
        lower: (mean - Z95 * se).max(0.0),
        upper: mean + Z95 * se,
        hits,
        n_paths: opts.n_paths,
    })
}

/// Least-squares slope of `ln p` against `h²/(2σ²)`, skipping zero estimates.
pub fn exit_decay_slope(sigma: f64, points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(h, p)| (h * h / (2.0 * sigma * sigma), p.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regime_examples() {
        assert_eq!(classify_regime(0.05, 0.01), Regime::Weak);
        assert_eq!(classify_regime(0.15, 0.01), Regime::Strong);
        assert_eq!(classify_regime(0.0, 0.3), Regime::Weak);
        assert_eq!(classify_regime(0.1, 0.01), Regime::Strong);
    }

    #[test]
    fn stiffness_is_rejected() {
        let p = NormalFormParams::on_branch(1e-3, 0.0, -1.0);
        let r = nf_deterministic_trajectory(&p, &RunOptions::new(2e-4, 0.1));
        assert!(matches!(r, Err(Error::Stiffness { .. })));
    }

    #[test]
    fn slow_variable_advances_linearly() {
        let p = NormalFormParams::on_branch(1e-2, 0.0, -1.0);
        let (path, _) = nf_deterministic_trajectory(&p, &RunOptions::new(1e-3, -0.5)).unwrap();
        for (k, y) in path.y.iter().enumerate() {
            assert_eq!(*y, -1.0 + k as f64 * 1e-3);
        }
    }

    #[test]
    fn zero_noise_matches_deterministic_bitwise() {
        let p = NormalFormParams::on_branch(1e-2, 0.0, -1.0);
        let opts = RunOptions::new(1e-4, 0.2);
        let (a, ra) = nf_deterministic_trajectory(&p, &opts).unwrap();
        let mut rng = RngStream::new(5, 5);
        let (b, rb) = nf_stochastic_trajectory(&p, &opts, &mut rng).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.x.len(), b.x.len());
        assert!(a
            .x
            .iter()
            .zip(&b.x)
            .all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn scalar_lyapunov_examples() {
        let cases = [(-1.0, 2.0, 1.0), (-2.0, 2.0, 0.5), (-2.0, 1.0, 0.25)];
        for (a, b2, expected) in cases {
            let noise = DMatrix::from_element(1, 1, b2_sqrt(b2));
            let u = cross_section_value(
                |_| DMatrix::from_element(1, 1, a),
                0.0,
                0.5,
                0.1,
                0.0,
                0,
                &noise,
            )
            .unwrap();
            assert!(
                (u[(0, 0)] - expected).abs() < 1e-9,
                "{a} {b2}: {}",
                u[(0, 0)]
            );
        }
    }

    fn b2_sqrt(b2: f64) -> f64 {
        b2.sqrt()
    }

    #[test]
    fn cross_section_requires_stability() {
        let noise = DMatrix::from_element(1, 1, 1.0);
        let r = cross_section_value(
            |_| DMatrix::from_element(1, 1, 0.5),
            0.0,
            0.1,
            0.1,
            0.0,
            0,
            &noise,
        );
        assert!(matches!(r, Err(Error::NotHurwitz { .. })));
    }

    #[test]
    fn matrix_lyapunov_residual_vanishes() {
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 0.3, 0.0, -0.2, -2.0, 0.5, 0.1, 0.0, -0.7]);
        let noise = DMatrix::from_row_slice(1, 1, &[2.0f64.sqrt()]);
        let q = cross_section_forcing(2, 0.01, &noise);
        let u = stationary_cross_section(&a, &q).unwrap();
        let res = &a * &u + &u * a.transpose() + &q;
        assert!(res.amax() < 1e-12);
        assert!(u.clone().cholesky().is_some());
    }

    #[test]
    fn ellipsoid_examples() {
        assert!(scalar_ellipsoid_contains(0.0, 0.7, 1e-6));
        assert!(!scalar_ellipsoid_contains(0.2, 0.25, 0.3));
        assert!(scalar_ellipsoid_contains(0.15, 1.0, 0.3));
        let d = nalgebra::DVector::from_vec(vec![0.2]);
        let u = DMatrix::from_element(1, 1, 0.25);
        assert!(!ellipsoid_contains(&d, &u, 0.3));
    }

    #[test]
    fn tube_center_is_inside() {
        let p = NormalFormParams::on_branch(1e-2, 0.0, -1.0);
        let tube = EllipsoidSpec::for_normal_form(&p, 1e-3, -0.2, 0.01).unwrap();
        for k in 0..tube.len() {
            assert!(tube.contains(tube.center[k], p.y0 + k as f64 * 1e-3));
        }
        // stationary start: X̄ = 1/(4 x0)
        assert!((tube.shape[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn exit_needs_enough_paths() {
        let p = NormalFormParams::on_branch(1e-3, 0.01, -0.2);
        let opts = ExitOptions {
            dt: 1e-5,
            y_stop: -0.1,
            n_paths: 50,
        };
        assert!(estimate_exit_probability(&p, 0.02, &opts, 1).is_err());
    }

    #[test]
    fn zero_noise_never_exits() {
        let p = NormalFormParams::on_branch(1e-3, 0.0, -0.2);
        let opts = ExitOptions {
            dt: 1e-5,
            y_stop: -0.1,
            n_paths: 100,
        };
        let e = estimate_exit_probability(&p, 1e-3, &opts, 1).unwrap();
        assert_eq!(e.probability, 0.0);
        assert_eq!(e.exits, 0);
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(0, 100, Z95);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.03 && hi < 0.05);
        let (lo, hi) = wilson_interval(50, 100, Z95);
        assert!(lo < 0.5 && hi > 0.5);
    }

    #[test]
    fn decay_slope_of_exact_gaussian_tail() {
        let sigma = 0.01;
        let pts: Vec<(f64, f64)> = (2..=8)
            .map(|k| {
                let h = k as f64 * sigma;
                (h, (-(h * h) / (2.0 * sigma * sigma)).exp())
            })
            .collect();
        assert!((exit_decay_slope(sigma, &pts).unwrap() + 1.0).abs() < 1e-12);
    }
}
