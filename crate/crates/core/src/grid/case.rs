//! Network data: buses, branches and generators in per unit.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    #[serde(default = "one")]
    pub v0: f64,
    #[serde(default = "one")]
    pub base_kv: f64,
    /// Constant-power demand not modelled as a `[[load]]`.
    #[serde(default)]
    pub pd: f64,
    #[serde(default)]
    pub qd: f64,
    #[serde(default)]
    pub gs: f64,
    #[serde(default)]
    pub bs: f64,
}

fn one() -> f64 {
    1.0
}

/// Series admittance `g + jb`, total charging susceptance `b_shunt`, and an
/// off-nominal tap ratio on the `from` side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub g: f64,
    pub b: f64,
    #[serde(default)]
    pub b_shunt: f64,
    #[serde(default = "one")]
    pub tap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub bus: usize,
    pub p: f64,
    pub v_set: f64,
    #[serde(default = "neg_inf")]
    pub q_min: f64,
    #[serde(default = "pos_inf")]
    pub q_max: f64,
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}

fn pos_inf() -> f64 {
    f64::INFINITY
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
}

impl NetworkCase {
    pub fn bus_index(&self) -> HashMap<usize, usize> {
        self.buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id, i))
            .collect()
    }

    pub fn index_of(&self, id: usize) -> Result<usize> {
        self.buses
            .iter()
            .position(|b| b.id == id)
            .ok_or_else(|| Error::Validation(format!("unknown bus id {id}")))
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated case has a slack bus")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_mva > 0.0) {
            return Err(Error::Validation("base_mva must be positive".into()));
        }
        if self.buses.is_empty() {
            return Err(Error::Validation("case has no buses".into()));
        }
        let mut seen = HashMap::new();
        for (i, b) in self.buses.iter().enumerate() {
            if seen.insert(b.id, i).is_some() {
                return Err(Error::Validation(format!("duplicate bus id {}", b.id)));
            }
            if !(b.v0 > 0.0) {
                return Err(Error::Validation(format!(
                    "bus {}: v0 must be positive",
                    b.id
                )));
            }
        }
        let slacks: Vec<usize> = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .map(|b| b.id)
            .collect();
        match slacks.len() {
            1 => {}
            0 => return Err(Error::Validation("case has no slack bus".into())),
            _ => {
                return Err(Error::Validation(format!(
                    "case has {} slack buses ({:?}); exactly one is required",
                    slacks.len(),
                    slacks
                )))
            }
        }
        for (k, br) in self.branches.iter().enumerate() {
            for end in [br.from, br.to] {
                if !seen.contains_key(&end) {
                    return Err(Error::Validation(format!(
                        "branch {k} references unknown bus {end}"
                    )));
                }
            }
            if br.from == br.to {
                return Err(Error::Validation(format!("branch {k} is a self-loop")));
            }
            if !(br.tap > 0.0) {
                return Err(Error::Validation(format!(
                    "branch {k}: tap must be positive"
                )));
            }
        }
        for (k, g) in self.generators.iter().enumerate() {
            if !seen.contains_key(&g.bus) {
                return Err(Error::Validation(format!(
                    "generator {k} references unknown bus {}",
                    g.bus
                )));
            }
            if g.q_min > g.q_max {
                return Err(Error::Validation(format!(
                    "generator {k} at bus {}: q_min {} exceeds q_max {}",
                    g.bus, g.q_min, g.q_max
                )));
            }
            if !(g.v_set > 0.0) {
                return Err(Error::Validation(format!(
                    "generator {k} at bus {}: v_set must be positive",
                    g.bus
                )));
            }
        }
        for b in &self.buses {
            if b.kind == BusKind::Pv && !self.generators.iter().any(|g| g.bus == b.id) {
                return Err(Error::Validation(format!(
                    "PV bus {} has no generator",
                    b.id
                )));
            }
        }
        self.check_connected(&seen)
    }

    fn check_connected(&self, index: &HashMap<usize, usize>) -> Result<()> {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in &self.branches {
            let (f, t) = (index[&br.from], index[&br.to]);
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        let islanded: Vec<usize> = (0..n)
            .filter(|&i| !seen[i])
            .map(|i| self.buses[i].id)
            .collect();
        if islanded.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "network is disconnected; buses {islanded:?} are not reachable from bus {}",
                self.buses[0].id
            )))
        }
    }

    /// Bus admittance matrix as `(G, B)`.
    pub fn admittance(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.buses.len();
        let idx = self.bus_index();
        let mut g = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, n);
        for br in &self.branches {
            let (f, t) = (idx[&br.from], idx[&br.to]);
            let tap2 = br.tap * br.tap;
            g[(f, f)] += br.g / tap2;
            b[(f, f)] += (br.b + br.b_shunt / 2.0) / tap2;
            g[(t, t)] += br.g;
            b[(t, t)] += br.b + br.b_shunt / 2.0;
            g[(f, t)] -= br.g / br.tap;
            b[(f, t)] -= br.b / br.tap;
            g[(t, f)] -= br.g / br.tap;
            b[(t, f)] -= br.b / br.tap;
        }
        for (i, bus) in self.buses.iter().enumerate() {
            g[(i, i)] += bus.gs;
            b[(i, i)] += bus.bs;
        }
        (g, b)
    }

    /// Total scheduled active generation and voltage set-point per bus index.
    pub fn generation_by_bus(&self) -> BTreeMap<usize, GenAggregate> {
        let idx = self.bus_index();
        let mut out: BTreeMap<usize, GenAggregate> = BTreeMap::new();
        for g in &self.generators {
            let e = out.entry(idx[&g.bus]).or_insert(GenAggregate {
                p: 0.0,
                v_set: g.v_set,
                q_min: 0.0,
                q_max: 0.0,
            });
            e.p += g.p;
            e.q_min += g.q_min;
            e.q_max += g.q_max;
        }
        out
    }
}

/// Generators at one bus lumped together.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenAggregate {
    pub p: f64,
    pub v_set: f64,
    pub q_min: f64,
    pub q_max: f64,
}
