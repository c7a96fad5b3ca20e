//! State matrix of the reduced system in `u = [x, η]`.
//!
//! `A = ∂h₁/∂u − ∂h₁/∂z (∂h₂/∂z)⁻¹ ∂h₂/∂u`, where `h₁` stacks the load
//! recovery equations and the OU drift `−α η`, and `h₂` is the power
//! balance.

use nalgebra::DMatrix;

use super::load::characteristics;
use super::model::{GridModel, GridState, NewtonOptions};
use crate::error::{Error, Result};
use crate::ou::OuParams;

fn check_dims(model: &GridModel, ou: &OuParams) -> Result<()> {
    if ou.dim() != model.n_channels {
        return Err(Error::InvalidParameter(format!(
            "model has {} noise channels, OU parameters have {}",
            model.n_channels,
            ou.dim()
        )));
    }
    Ok(())
}

fn ratio_pow(ratio: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else {
        ratio.powf(e)
    }
}

/// Analytic reduced state matrix at a solved algebraic state.
pub fn reduced_state_matrix(
    model: &GridModel,
    st: &GridState,
    ou: &OuParams,
) -> Result<DMatrix<f64>> {
    check_dims(model, ou)?;
    let nx = model.n_x;
    let nu = model.n_u();
    let lay = model.layout(&st.q_limits);
    let nz = lay.n;

    let mut h1u = DMatrix::zeros(nu, nu);
    let mut h1z = DMatrix::zeros(nu, nz);
    let mut h2u = DMatrix::zeros(nz, nu);
    for (c, a) in ou.alpha.iter().enumerate() {
        h1u[(nx + c, nx + c)] = -a;
    }
    for (k, l) in model.loads.iter().enumerate() {
        let i = model.load_bus[k];
        let pt = model.load_point(k, st);
        let ch = characteristics(l, &pt)?;
        let ratio = pt.v / l.nominal_voltage();
        let (rp, rq) = (lay.theta_col[i], lay.v_col[i]);
        if let Some(o) = model.x_offset[k] {
            h1u[(o, o)] = -1.0 / l.tp;
            h1u[(o + 1, o + 1)] = -1.0 / l.tq;
            if let Some(cv) = lay.v_col[i] {
                h1z[(o, cv)] = ch.dp_s - ch.dp_t;
                h1z[(o + 1, cv)] = ch.dq_s - ch.dq_t;
            }
            if let Some(r) = rp {
                h2u[(r, o)] -= 1.0 / l.tp;
            }
            if let Some(r) = rq {
                h2u[(r, o + 1)] -= 1.0 / l.tq;
            }
        }
        if let Some(c) = l.noise_channel {
            let col = nx + c;
            let (ep, eq) = if l.dynamic {
                (ratio_pow(ratio, l.alpha_t), ratio_pow(ratio, l.beta_t))
            } else {
                (ratio_pow(ratio, l.alpha_s), ratio_pow(ratio, l.beta_s))
            };
            if let Some(o) = model.x_offset[k] {
                h1u[(o, col)] += ratio_pow(ratio, l.alpha_s) - ep;
                h1u[(o + 1, col)] += ratio_pow(ratio, l.beta_s) - eq;
            }
            if let Some(r) = rp {
                h2u[(r, col)] -= ep;
            }
            if let Some(r) = rq {
                h2u[(r, col)] -= eq;
            }
        }
    }
    if nz == 0 {
        return Ok(h1u);
    }
    let jac = model.mismatch_jacobian(st, &lay)?;
    let sol = jac.lu().solve(&h2u).ok_or(Error::SingularJacobian)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularJacobian);
    }
    Ok(h1u - h1z * sol)
}

fn reduced_drift(model: &GridModel, st: &GridState, ou: &OuParams) -> Result<Vec<f64>> {
    let mut d = model.state_derivative(st)?;
    d.extend(st.eta.eta.iter().zip(&ou.alpha).map(|(e, a)| -a * e));
    Ok(d)
}

/// Same matrix by central differences, re-solving the algebraic equations
/// at every perturbed `u` with the PV/PQ assignment held fixed.
pub fn reduced_state_matrix_fd(
    model: &GridModel,
    st: &GridState,
    ou: &OuParams,
    step: f64,
) -> Result<DMatrix<f64>> {
    check_dims(model, ou)?;
    let nu = model.n_u();
    let nx = model.n_x;
    let opts = NewtonOptions {
        tol: 1e-13,
        max_iter: 50,
    };
    let mut a = DMatrix::zeros(nu, nu);
    for j in 0..nu {
        let mut cols = Vec::with_capacity(2);
        for sign in [1.0, -1.0] {
            let mut p = st.clone();
            if j < nx {
                p.x[j] += sign * step;
            } else {
                p.eta.eta[j - nx] += sign * step;
            }
            let fixed = p.q_limits.clone();
            model.solve_algebraic(&mut p, &opts)?;
            if p.q_limits != fixed {
                return Err(Error::InvalidParameter(
                    "perturbation switched a generator limit".into(),
                ));
            }
            cols.push(reduced_drift(model, &p, ou)?);
        }
        for i in 0..nu {
            a[(i, j)] = (cols[0][i] - cols[1][i]) / (2.0 * step);
        }
    }
    Ok(a)
}
