//! Differential-algebraic grid model and its Newton power-flow solver.
//!
//! Differential states are the recovery states of the dynamic loads (plus
//! the load-noise channels). Algebraic states are bus voltage magnitudes
//! and angles; they satisfy the active/reactive power balance at every
//! non-slack bus.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::case::{BusKind, GenAggregate, NetworkCase};
use super::load::{
    characteristics, load_consumption, load_state_derivative, LoadDynParams, LoadPoint,
};
use crate::error::{Error, Result};
use crate::ou::OuState;

/// Reactive-power state of a PV bus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QLimit {
    Free,
    AtMax,
    AtMin,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridState {
    /// `[x_p, x_q]` per dynamic load, in load order.
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub eta: OuState,
    pub lambda: f64,
    pub t: f64,
    /// Per bus; only meaningful at PV buses.
    pub q_limits: Vec<QLimit>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20,
        }
    }
}

/// Unknown layout for one PV/PQ assignment.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub theta_col: Vec<Option<usize>>,
    pub v_col: Vec<Option<usize>>,
    pub n: usize,
}

/// Per-bus `(P, Q, ∂P/∂V, ∂Q/∂V)` of the demand.
type Demand = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

/// Immutable network + load data shared by all trajectories.
#[derive(Clone, Debug)]
pub struct GridModel {
    pub case: NetworkCase,
    pub loads: Vec<LoadDynParams>,
    pub n_channels: usize,
    pub(crate) g: DMatrix<f64>,
    pub(crate) b: DMatrix<f64>,
    pub(crate) slack: usize,
    pub(crate) gens: BTreeMap<usize, GenAggregate>,
    pub(crate) load_bus: Vec<usize>,
    /// Offset of `x_p` in the state vector for dynamic loads.
    pub(crate) x_offset: Vec<Option<usize>>,
    pub(crate) n_x: usize,
}

impl GridModel {
    /// Validates the data and fixes unset load nominal voltages at the
    /// base-case solution, so that `x = 0, η = 0, λ = 0` is an equilibrium.
    pub fn new(case: NetworkCase, loads: Vec<LoadDynParams>, n_channels: usize) -> Result<Self> {
        case.validate()?;
        let idx = case.bus_index();
        let mut load_bus = Vec::with_capacity(loads.len());
        let mut x_offset = Vec::with_capacity(loads.len());
        let mut n_x = 0;
        for l in &loads {
            l.validate()?;
            let i = *idx.get(&l.bus).ok_or_else(|| {
                Error::Validation(format!("load references unknown bus {}", l.bus))
            })?;
            load_bus.push(i);
            if let Some(c) = l.noise_channel {
                if c >= n_channels {
                    return Err(Error::Validation(format!(
                        "load at bus {} uses noise channel {c} but only {n_channels} are defined",
                        l.bus
                    )));
                }
            }
            if l.dynamic {
                x_offset.push(Some(n_x));
                n_x += 2;
            } else {
                x_offset.push(None);
            }
        }
        let (g, b) = case.admittance();
        let mut model = Self {
            slack: case.slack_index(),
            gens: case.generation_by_bus(),
            case,
            loads,
            n_channels,
            g,
            b,
            load_bus,
            x_offset,
            n_x,
        };
        model.fix_nominal_voltages()?;
        Ok(model)
    }

    fn fix_nominal_voltages(&mut self) -> Result<()> {
        let unresolved: Vec<usize> = (0..self.loads.len())
            .filter(|&k| self.loads[k].v0.is_none())
            .collect();
        if unresolved.is_empty() {
            return Ok(());
        }
        // solve with the unresolved loads drawing constant power
        let mut probe = self.clone();
        for &k in &unresolved {
            let l = &mut probe.loads[k];
            l.alpha_s = 0.0;
            l.alpha_t = 0.0;
            l.beta_s = 0.0;
            l.beta_t = 0.0;
            l.v0 = Some(1.0);
        }
        let st = probe.flat_state(OuState::zeros(self.n_channels));
        let st = probe.solved(st, &NewtonOptions::default())?;
        for &k in &unresolved {
            self.loads[k].v0 = Some(st.v[self.load_bus[k]]);
        }
        Ok(())
    }

    pub fn n_buses(&self) -> usize {
        self.case.buses.len()
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    /// Dimension of the reduced state `[x, η]`.
    pub fn n_u(&self) -> usize {
        self.n_x + self.n_channels
    }

    /// `Σ p0` of ramped loads, per unit.
    pub fn ramped_p0(&self) -> f64 {
        self.loads.iter().filter(|l| l.ramped).map(|l| l.p0).sum()
    }

    pub fn ramped_p0_mw(&self) -> f64 {
        self.ramped_p0() * self.case.base_mva
    }

    /// Margin in MW for loading factor `λ`.
    pub fn margin_mw(&self, lambda: f64) -> f64 {
        lambda * self.ramped_p0_mw()
    }

    pub fn bus_kind(&self, i: usize) -> BusKind {
        self.case.buses[i].kind
    }

    /// Voltage set-point of a slack or PV bus.
    pub fn v_set(&self, i: usize) -> f64 {
        self.gens
            .get(&i)
            .map(|g| g.v_set)
            .unwrap_or(self.case.buses[i].v0)
    }

    /// Flat start: set-points at voltage-controlled buses, `v0` elsewhere.
    pub fn flat_state(&self, eta: OuState) -> GridState {
        let n = self.n_buses();
        let v = (0..n)
            .map(|i| match self.bus_kind(i) {
                BusKind::Pq => self.case.buses[i].v0,
                _ => self.v_set(i),
            })
            .collect();
        GridState {
            x: vec![0.0; self.n_x],
            v,
            theta: vec![0.0; n],
            eta,
            lambda: 0.0,
            t: 0.0,
            q_limits: vec![QLimit::Free; n],
        }
    }

    /// Solved base state with recovery states at zero.
    pub fn initial_state(&self, eta: OuState, opts: &NewtonOptions) -> Result<GridState> {
        if eta.eta.len() != self.n_channels {
            return Err(Error::InvalidParameter(format!(
                "expected {} noise channels, got {}",
                self.n_channels,
                eta.eta.len()
            )));
        }
        self.solved(self.flat_state(eta), opts)
    }

    fn solved(&self, mut st: GridState, opts: &NewtonOptions) -> Result<GridState> {
        self.solve_algebraic(&mut st, opts)?;
        Ok(st)
    }

    pub(crate) fn layout(&self, q_limits: &[QLimit]) -> Layout {
        let n = self.n_buses();
        let mut theta_col = vec![None; n];
        let mut v_col = vec![None; n];
        let mut k = 0;
        for (i, col) in theta_col.iter_mut().enumerate() {
            if i != self.slack {
                *col = Some(k);
                k += 1;
            }
        }
        for (i, col) in v_col.iter_mut().enumerate() {
            let pq = match self.bus_kind(i) {
                BusKind::Slack => false,
                BusKind::Pq => true,
                BusKind::Pv => q_limits[i] != QLimit::Free,
            };
            if pq {
                *col = Some(k);
                k += 1;
            }
        }
        Layout {
            theta_col,
            v_col,
            n: k,
        }
    }

    pub(crate) fn load_point(&self, k: usize, st: &GridState) -> LoadPoint {
        let (x_p, x_q) = match self.x_offset[k] {
            Some(o) => (st.x[o], st.x[o + 1]),
            None => (0.0, 0.0),
        };
        LoadPoint {
            v: st.v[self.load_bus[k]],
            x_p,
            x_q,
            eta: self.loads[k]
                .noise_channel
                .map(|c| st.eta.eta[c])
                .unwrap_or(0.0),
            lambda: st.lambda,
        }
    }

    /// Network injections `(P, Q)` at every bus.
    pub fn injections(&self, v: &[f64], theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = v.len();
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            for k in 0..n {
                let (gik, bik) = (self.g[(i, k)], self.b[(i, k)]);
                if gik == 0.0 && bik == 0.0 {
                    continue;
                }
                let (s, c) = (theta[i] - theta[k]).sin_cos();
                p[i] += v[i] * v[k] * (gik * c + bik * s);
                q[i] += v[i] * v[k] * (gik * s - bik * c);
            }
        }
        (p, q)
    }

    /// Total demand `(P, Q)` at every bus and its voltage derivative.
    pub(crate) fn demand(&self, st: &GridState) -> Result<Demand> {
        let n = self.n_buses();
        let mut pd: Vec<f64> = self.case.buses.iter().map(|b| b.pd).collect();
        let mut qd: Vec<f64> = self.case.buses.iter().map(|b| b.qd).collect();
        let mut dpd = vec![0.0; n];
        let mut dqd = vec![0.0; n];
        for (k, l) in self.loads.iter().enumerate() {
            let i = self.load_bus[k];
            let pt = self.load_point(k, st);
            let (p, q) = load_consumption(l, &pt)?;
            let c = characteristics(l, &pt)?;
            pd[i] += p;
            qd[i] += q;
            if l.dynamic {
                dpd[i] += c.dp_t;
                dqd[i] += c.dq_t;
            } else {
                dpd[i] += c.dp_s;
                dqd[i] += c.dq_s;
            }
        }
        Ok((pd, qd, dpd, dqd))
    }

    /// Reactive generation held at a PV bus by its limit state.
    fn q_gen_fixed(&self, i: usize, lim: QLimit) -> f64 {
        match (self.gens.get(&i), lim) {
            (Some(g), QLimit::AtMax) => g.q_max,
            (Some(g), QLimit::AtMin) => g.q_min,
            _ => 0.0,
        }
    }

    fn p_gen(&self, i: usize) -> f64 {
        self.gens.get(&i).map(|g| g.p).unwrap_or(0.0)
    }

    /// Power-balance mismatches `P_gen − P_demand − P_network` at non-slack
    /// buses, followed by the reactive mismatches at PQ(-switched) buses.
    pub fn algebraic_residuals(&self, st: &GridState) -> Result<Vec<f64>> {
        let lay = self.layout(&st.q_limits);
        self.mismatch(st, &lay)
    }

    pub(crate) fn mismatch(&self, st: &GridState, lay: &Layout) -> Result<Vec<f64>> {
        let (p, q) = self.injections(&st.v, &st.theta);
        let (pd, qd, _, _) = self.demand(st)?;
        let mut f = vec![0.0; lay.n];
        for i in 0..self.n_buses() {
            if let Some(r) = lay.theta_col[i] {
                f[r] = self.p_gen(i) - pd[i] - p[i];
            }
            if let Some(r) = lay.v_col[i] {
                f[r] = self.q_gen_fixed(i, st.q_limits[i]) - qd[i] - q[i];
            }
        }
        Ok(f)
    }

    /// `∂(mismatch)/∂(θ, V)` for the given layout.
    pub(crate) fn mismatch_jacobian(&self, st: &GridState, lay: &Layout) -> Result<DMatrix<f64>> {
        let n = self.n_buses();
        let (v, th) = (&st.v, &st.theta);
        let (p, q) = self.injections(v, th);
        let (_, _, dpd, dqd) = self.demand(st)?;
        let mut jac = DMatrix::zeros(lay.n, lay.n);
        for i in 0..n {
            let (rp, rq) = (lay.theta_col[i], lay.v_col[i]);
            if rp.is_none() && rq.is_none() {
                continue;
            }
            for k in 0..n {
                let (gik, bik) = (self.g[(i, k)], self.b[(i, k)]);
                if i != k && gik == 0.0 && bik == 0.0 {
                    continue;
                }
                let (s, c) = (th[i] - th[k]).sin_cos();
                let (dp_dth, dp_dv, dq_dth, dq_dv) = if i == k {
                    (
                        -q[i] - bik * v[i] * v[i],
                        p[i] / v[i] + gik * v[i],
                        p[i] - gik * v[i] * v[i],
                        q[i] / v[i] - bik * v[i],
                    )
                } else {
                    (
                        v[i] * v[k] * (gik * s - bik * c),
                        v[i] * (gik * c + bik * s),
                        -v[i] * v[k] * (gik * c + bik * s),
                        v[i] * (gik * s - bik * c),
                    )
                };
                if let Some(r) = rp {
                    if let Some(col) = lay.theta_col[k] {
                        jac[(r, col)] -= dp_dth;
                    }
                    if let Some(col) = lay.v_col[k] {
                        jac[(r, col)] -= dp_dv;
                    }
                }
                if let Some(r) = rq {
                    if let Some(col) = lay.theta_col[k] {
                        jac[(r, col)] -= dq_dth;
                    }
                    if let Some(col) = lay.v_col[k] {
                        jac[(r, col)] -= dq_dv;
                    }
                }
            }
            if let Some(col) = lay.v_col[i] {
                if let Some(r) = rp {
                    jac[(r, col)] -= dpd[i];
                }
                if let Some(r) = rq {
                    jac[(r, col)] -= dqd[i];
                }
            }
        }
        Ok(jac)
    }

    fn newton(&self, st: &mut GridState, lay: &Layout, opts: &NewtonOptions) -> Result<usize> {
        for it in 0..=opts.max_iter {
            let f = self.mismatch(st, lay).map_err(|_| Error::NoSolution)?;
            let norm = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if !norm.is_finite() {
                return Err(Error::NoSolution);
            }
            if norm <= opts.tol {
                return Ok(it);
            }
            if it == opts.max_iter {
                break;
            }
            let jac = self
                .mismatch_jacobian(st, lay)
                .map_err(|_| Error::NoSolution)?;
            let rhs = DVector::from_vec(f);
            let dz = jac.lu().solve(&rhs).ok_or(Error::NoSolution)?;
            for i in 0..self.n_buses() {
                if let Some(c) = lay.theta_col[i] {
                    st.theta[i] -= dz[c];
                }
                if let Some(c) = lay.v_col[i] {
                    st.v[i] -= dz[c];
                }
            }
            if st.v.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::NoSolution);
            }
        }
        Err(Error::NoSolution)
    }

    /// Newton solve of the algebraic equations, warm-started from the
    /// voltages and the PV/PQ assignment stored in `st`.
    ///
    /// After convergence PV buses whose reactive output violates a limit
    /// become PQ at that limit, and switched buses whose voltage would
    /// exceed (fall below) the set-point at the max (min) limit return to
    /// PV. The loop ends at a consistent assignment. On failure `st` is left
    /// untouched and `NoSolution` is returned.
    pub fn solve_algebraic(&self, st: &mut GridState, opts: &NewtonOptions) -> Result<usize> {
        let mut work = st.clone();
        let mut iters = 0;
        let n = self.n_buses();
        for _round in 0..(2 * n + 2) {
            let lay = self.layout(&work.q_limits);
            for i in 0..n {
                if lay.v_col[i].is_none() && i != self.slack {
                    work.v[i] = self.v_set(i);
                }
            }
            iters += self.newton(&mut work, &lay, opts)?;
            let (_, q) = self.injections(&work.v, &work.theta);
            let (_, qd, _, _) = self.demand(&work).map_err(|_| Error::NoSolution)?;
            let mut changed = false;
            for i in 0..n {
                if self.bus_kind(i) != BusKind::Pv {
                    continue;
                }
                let g = self.gens[&i];
                let next = match work.q_limits[i] {
                    QLimit::Free => {
                        let qg = q[i] + qd[i];
                        if qg > g.q_max {
                            QLimit::AtMax
                        } else if qg < g.q_min {
                            QLimit::AtMin
                        } else {
                            QLimit::Free
                        }
                    }
                    QLimit::AtMax if work.v[i] > g.v_set => QLimit::Free,
                    QLimit::AtMin if work.v[i] < g.v_set => QLimit::Free,
                    other => other,
                };
                if next != work.q_limits[i] {
                    work.q_limits[i] = next;
                    changed = true;
                }
            }
            if !changed {
                *st = work;
                return Ok(iters);
            }
        }
        Err(Error::NoSolution)
    }

    /// Recovery-state derivatives `h₁(x, z, η, λ)`.
    pub fn state_derivative(&self, st: &GridState) -> Result<Vec<f64>> {
        let mut dx = vec![0.0; self.n_x];
        for (k, l) in self.loads.iter().enumerate() {
            if let Some(o) = self.x_offset[k] {
                let (a, b) = load_state_derivative(l, &self.load_point(k, st))?;
                dx[o] = a;
                dx[o + 1] = b;
            }
        }
        Ok(dx)
    }

    /// Reactive output of the generators at every bus (zero at buses
    /// without generation).
    pub fn reactive_generation(&self, st: &GridState) -> Result<Vec<f64>> {
        let (_, q) = self.injections(&st.v, &st.theta);
        let (_, qd, _, _) = self.demand(st)?;
        Ok((0..self.n_buses())
            .map(|i| {
                if self.gens.contains_key(&i) || i == self.slack {
                    q[i] + qd[i]
                } else {
                    0.0
                }
            })
            .collect())
    }

    /// `(total generation, total demand, losses)` in per unit active power.
    pub fn active_balance(&self, st: &GridState) -> Result<(f64, f64, f64)> {
        let (p, _) = self.injections(&st.v, &st.theta);
        let (pd, _, _, _) = self.demand(st)?;
        let demand: f64 = pd.iter().sum();
        let losses: f64 = p.iter().sum();
        let gen: f64 = (0..self.n_buses())
            .map(|i| {
                if i == self.slack {
                    p[i] + pd[i]
                } else {
                    self.p_gen(i)
                }
            })
            .sum();
        Ok((gen, demand, losses))
    }
}
