//! Saddle-node proximity detection and margin bookkeeping.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{reduced_state_matrix, GridModel, GridState};
use crate::ou::OuParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    #[serde(default = "default_threshold")]
    pub rcond_threshold: f64,
    #[serde(default = "default_true")]
    pub check_every_step: bool,
}

fn default_threshold() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            rcond_threshold: default_threshold(),
            check_every_step: true,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rcond_threshold > 0.0 && self.rcond_threshold < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rcond threshold must lie in (0, 1), got {}",
                self.rcond_threshold
            )));
        }
        Ok(())
    }
}

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `1 / (‖A‖₁ ‖A⁻¹‖₁)` with an explicit inverse; 0 when `A` is singular.
pub fn rcond_exact(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    match a.clone().try_inverse() {
        Some(inv) if inv.iter().all(|v| v.is_finite()) => {
            let r = 1.0 / (norm1(a) * norm1(&inv));
            if r.is_finite() {
                r
            } else {
                0.0
            }
        }
        _ => 0.0,
    }
}

/// Reciprocal 1-norm condition number with `‖A⁻¹‖₁` estimated by the
/// Hager–Higham iteration on an LU factorisation.
pub fn rcond_estimate(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 1.0;
    }
    let anorm = norm1(a);
    if !(anorm > 0.0) || !anorm.is_finite() {
        return 0.0;
    }
    let lu = a.clone().lu();
    let lut = a.transpose().lu();
    if !lu.is_invertible() {
        return 0.0;
    }
    let solve = |b: &DVector<f64>| lu.solve(b);
    let solve_t = |b: &DVector<f64>| lut.solve(b);

    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut est = 0.0;
    let mut last_j = usize::MAX;
    for _ in 0..5 {
        let Some(y) = solve(&x) else { return 0.0 };
        est = y.iter().map(|v| v.abs()).sum::<f64>();
        let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let Some(z) = solve_t(&xi) else { return 0.0 };
        let (j, zmax) = z
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bj, bv), (j, v)| {
                if v.abs() > bv {
                    (j, v.abs())
                } else {
                    (bj, bv)
                }
            });
        if zmax <= z.dot(&x) || j == last_j {
            break;
        }
        x = DVector::zeros(n);
        x[j] = 1.0;
        last_j = j;
    }
    // alternating probe guards against the iteration's known blind spots
    let alt = DVector::from_fn(n, |i, _| {
        let s = if i % 2 == 0 { 1.0 } else { -1.0 };
        s * (1.0 + i as f64 / (n.max(2) - 1) as f64)
    });
    if let Some(y) = solve(&alt) {
        let alt_est = 2.0 * y.iter().map(|v| v.abs()).sum::<f64>() / (3.0 * n as f64);
        est = est.max(alt_est);
    }
    let r = 1.0 / (anorm * est);
    if r.is_finite() {
        r.min(1.0)
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectionCause {
    RcondThreshold,
    NoSolution,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginSample {
    /// MW; `lambda_at_detection · Σp0 · base_MVA`.
    pub s_mw: f64,
    pub lambda_at_detection: f64,
    pub t_at_detection: f64,
    pub cause: DetectionCause,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SnbCheck {
    Stable { rcond: f64 },
    Detected { rcond: f64, sample: MarginSample },
}

impl SnbCheck {
    pub fn rcond(&self) -> f64 {
        match self {
            SnbCheck::Stable { rcond } | SnbCheck::Detected { rcond, .. } => *rcond,
        }
    }

    pub fn is_detected(&self) -> bool {
        matches!(self, SnbCheck::Detected { .. })
    }
}

/// Flags a solved state whose reduced state matrix is nearly singular.
pub fn check_snb(
    model: &GridModel,
    st: &GridState,
    ou: &OuParams,
    cfg: &DetectorConfig,
) -> Result<SnbCheck> {
    let sample = |cause| MarginSample {
        s_mw: model.margin_mw(st.lambda),
        lambda_at_detection: st.lambda,
        t_at_detection: st.t,
        cause,
    };
    let a = match reduced_state_matrix(model, st, ou) {
        Ok(a) => a,
        Err(Error::SingularJacobian) | Err(Error::CollapsedVoltage { .. }) => {
            return Ok(SnbCheck::Detected {
                rcond: 0.0,
                sample: sample(DetectionCause::NoSolution),
            })
        }
        Err(e) => return Err(e),
    };
    let rcond = rcond_estimate(&a);
    if rcond < cfg.rcond_threshold {
        Ok(SnbCheck::Detected {
            rcond,
            sample: sample(DetectionCause::RcondThreshold),
        })
    } else {
        Ok(SnbCheck::Stable { rcond })
    }
}

/// First-order stochastic margin reduction `σ^{4/3} · S_det`.
pub fn margin_reduction_estimate(sigma: f64, s_det: f64) -> f64 {
    sigma.powf(4.0 / 3.0) * s_det
}

/// Noise intensity that keeps `σ/√ε` fixed when `ε` becomes `eps_new`.
pub fn tradeoff_sigma(sigma: f64, eps: f64, eps_new: f64) -> f64 {
    sigma * (eps_new / eps).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_diagonal() {
        let i = DMatrix::<f64>::identity(4, 4);
        assert_eq!(rcond_estimate(&i), 1.0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-3]));
        assert!((rcond_estimate(&d) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn nearly_singular_two_by_two() {
        let delta = 1e-2;
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 + delta]);
        // inverse = [[1+δ, −1], [−1, 1]] / δ
        let inv_norm = (2.0 + delta) / delta;
        let expected = 1.0 / ((2.0 + delta) * inv_norm);
        assert!((rcond_estimate(&a) - expected).abs() < 1e-12 * expected);
        assert!((rcond_exact(&a) - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn singular_gives_zero() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(rcond_estimate(&a), 0.0);
        assert_eq!(rcond_exact(&a), 0.0);
    }

    #[test]
    fn reduction_examples() {
        assert_eq!(margin_reduction_estimate(0.0, 542.75), 0.0);
        assert!((margin_reduction_estimate(0.10, 542.75) - 25.2).abs() < 0.1);
        // 0.15^(4/3) * 542.75 evaluated independently
        assert!((margin_reduction_estimate(0.15, 542.75) - 43.2568).abs() < 1e-3);
    }

    #[test]
    fn tradeoff_examples() {
        let eps = 0.37;
        assert_eq!(tradeoff_sigma(0.10, eps, eps / 4.0), 0.05);
        assert_eq!(tradeoff_sigma(0.10, eps, eps), 0.10);
        assert!((tradeoff_sigma(0.05, eps, 4.0 * eps) - 0.10).abs() < 1e-15);
    }

    #[test]
    fn threshold_must_be_open_unit_interval() {
        assert!(DetectorConfig {
            rcond_threshold: 1.0,
            check_every_step: true
        }
        .validate()
        .is_err());
        assert!(DetectorConfig::default().validate().is_ok());
    }
}
