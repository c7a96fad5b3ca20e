//! Seeded trajectory ensembles over a `(σ, schedule)` grid and the margin
//! statistics reported for each cell.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::grid::{GridModel, RampSchedule};
use crate::integrator::{simulate_trajectory, IntegratorConfig, Termination, TrajectoryRecord};
use crate::ou::OuParams;
use crate::rng::RngStream;

/// Running mean and (n − 1) variance.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    pub fn variance(&self) -> f64 {
        match self.n {
            0 => f64::NAN,
            1 => 0.0,
            n => self.m2 / (n - 1) as f64,
        }
    }
}

/// `(mean − S_det) / S_det · 100`.
pub fn percent_diff(mean_s: f64, s_det: f64) -> f64 {
    (mean_s - s_det) / s_det * 100.0
}

/// Rounds to two decimals, the precision used in reports.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub enum Bins<'a> {
    Count(usize),
    Edges(&'a [f64]),
}

pub fn histogram(samples: &[f64], bins: Bins<'_>) -> Result<Histogram> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter(
            "histogram of an empty sample".into(),
        ));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(
            "histogram samples must be finite".into(),
        ));
    }
    let edges: Vec<f64> = match bins {
        Bins::Count(0) => return Err(Error::InvalidParameter("need at least one bin".into())),
        Bins::Count(k) => {
            let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let (lo, hi) = if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, lo + 0.5)
            };
            let w = (hi - lo) / k as f64;
            (0..=k)
                .map(|i| if i == k { hi } else { lo + w * i as f64 })
                .collect()
        }
        Bins::Edges(e) => {
            if e.len() < 2 || e.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidParameter(
                    "histogram edges must be strictly increasing".into(),
                ));
            }
            e.to_vec()
        }
    };
    let k = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[k]);
    let mut counts = vec![0; k];
    for &x in samples {
        if x < lo || x > hi {
            return Err(Error::InvalidParameter(format!(
                "sample {x} outside histogram range [{lo}, {hi}]"
            )));
        }
        // upper_bound on the edges, last bin closed on the right
        let j = edges
            .partition_point(|e| *e <= x)
            .saturating_sub(1)
            .min(k - 1);
        counts[j] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Empirical 5th percentile with linear interpolation between order
/// statistics (`h = (n − 1)·0.05`).
pub fn ci90_lower(samples: &[f64]) -> Result<f64> {
    if samples.len() < 20 {
        return Err(Error::InvalidParameter(format!(
            "need at least 20 samples for a 90% lower bound, got {}",
            samples.len()
        )));
    }
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let h = (s.len() - 1) as f64 * 0.05;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let hi = (lo + 1).min(s.len() - 1);
    Ok(s[lo] + frac * (s[hi] - s[lo]))
}

/// Standard deviation of the resampled means.
pub fn bootstrap_se(samples: &[f64], resamples: usize, rng: &mut RngStream) -> f64 {
    let n = samples.len();
    if n < 2 || resamples < 2 {
        return 0.0;
    }
    let mut acc = Welford::default();
    for _ in 0..resamples {
        let mut sum = 0.0;
        for _ in 0..n {
            sum += samples[rng.index(n)];
        }
        acc.push(sum / n as f64);
    }
    acc.variance().sqrt()
}

fn default_bins() -> usize {
    30
}

fn default_resamples() -> usize {
    2000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub sigma_list: Vec<f64>,
    pub schedules: Vec<RampSchedule>,
    pub n_paths: usize,
    pub seed_base: u64,
    /// Noise channel rates; `σ` is taken from `sigma_list`.
    pub ou: OuParams,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    /// Restrict the grid to these `(σ index, schedule index)` cells.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<(usize, usize)>>,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    /// Record full trajectories for the first this-many paths of each cell.
    #[serde(default)]
    pub dump_paths: usize,
}

impl ExperimentSpec {
    pub fn validate(&self, model: &GridModel) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::InvalidParameter("n_paths must be at least 1".into()));
        }
        if self.sigma_list.is_empty() || self.schedules.is_empty() {
            return Err(Error::InvalidParameter(
                "sigma and schedule lists must be non-empty".into(),
            ));
        }
        if let Some(s) = self
            .sigma_list
            .iter()
            .find(|s| !(**s >= 0.0 && s.is_finite()))
        {
            return Err(Error::InvalidParameter(format!("invalid sigma {s}")));
        }
        for s in &self.schedules {
            s.validate()?;
        }
        self.ou.validate()?;
        if self.ou.dim() != model.n_channels {
            return Err(Error::InvalidParameter(format!(
                "case defines {} noise channels, OU parameters have {}",
                model.n_channels,
                self.ou.dim()
            )));
        }
        if let Some(cells) = &self.cells {
            for &(i, j) in cells {
                if i >= self.sigma_list.len() || j >= self.schedules.len() {
                    return Err(Error::InvalidParameter(format!(
                        "cell ({i}, {j}) is outside the grid"
                    )));
                }
            }
        }
        self.detector.validate()?;
        self.integrator.validate()
    }

    /// `(σ index, schedule index)` pairs in report order.
    pub fn cell_list(&self) -> Vec<(usize, usize)> {
        match &self.cells {
            Some(c) => c.clone(),
            None => (0..self.sigma_list.len())
                .flat_map(|i| (0..self.schedules.len()).map(move |j| (i, j)))
                .collect(),
        }
    }

    /// Stream namespace of a cell; independent of which cells are run.
    pub fn cell_id(&self, sigma_index: usize, schedule_index: usize) -> u32 {
        (sigma_index * self.schedules.len() + schedule_index) as u32
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub schedule_index: usize,
    pub s_det: f64,
    pub termination: Termination,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginStatistics {
    pub cell: u32,
    pub sigma: f64,
    pub schedule_index: usize,
    pub interval: f64,
    pub delta_lambda: f64,
    pub speed_mw_per_s: f64,
    pub n: usize,
    pub n_censored: usize,
    pub n_no_solution: usize,
    pub mean_s: f64,
    pub var_s: f64,
    pub bootstrap_se: f64,
    pub s_det: f64,
    pub pct_diff_vs_det: f64,
    pub ci90_lower: Option<f64>,
    pub histogram: Option<Histogram>,
    /// Margins in path order (censored paths omitted).
    pub samples: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub baselines: Vec<Baseline>,
    pub cells: Vec<MarginStatistics>,
    #[serde(skip)]
    pub dumps: Vec<(u32, usize, TrajectoryRecord)>,
}

impl ExperimentResult {
    pub fn cell(&self, sigma: f64, interval: f64) -> Option<&MarginStatistics> {
        self.cells
            .iter()
            .find(|c| c.sigma == sigma && c.interval == interval)
    }
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        b = b.num_threads(t.max(1));
    }
    b.build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

/// Runs every cell of the grid.
///
/// Path `p` of cell `c` draws from stream `(seed_base, c << 32 | p)`, and
/// results are reduced in path order, so the output does not depend on the
/// number of worker threads.
pub fn run_experiment(
    model: &GridModel,
    spec: &ExperimentSpec,
    threads: Option<usize>,
) -> Result<ExperimentResult> {
    spec.validate(model)?;
    let pool = pool(threads)?;
    let mut base_cfg = spec.integrator.clone();
    base_cfg.record_every = 0;

    let baselines: Vec<Baseline> = spec
        .schedules
        .iter()
        .enumerate()
        .map(|(j, sch)| {
            let ou0 = spec.ou.with_sigma(0.0);
            let mut rng = RngStream::new(spec.seed_base, u64::MAX);
            let rec = simulate_trajectory(model, &ou0, sch, &base_cfg, &spec.detector, &mut rng)
                .map_err(|e| Error::Trajectory {
                    sigma: 0.0,
                    schedule: j,
                    path_index: 0,
                    message: e.to_string(),
                })?;
            let s_det = rec.margin_mw.ok_or_else(|| Error::Trajectory {
                sigma: 0.0,
                schedule: j,
                path_index: 0,
                message: "deterministic baseline reached the horizon without detection".into(),
            })?;
            Ok(Baseline {
                schedule_index: j,
                s_det,
                termination: rec.termination,
            })
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    let mut dumps = Vec::new();
    for (si, ji) in spec.cell_list() {
        let sigma = spec.sigma_list[si];
        let sch = &spec.schedules[ji];
        let ou = spec.ou.with_sigma(sigma);
        let cell = spec.cell_id(si, ji);
        let records: Vec<Result<TrajectoryRecord>> = pool.install(|| {
            (0..spec.n_paths)
                .into_par_iter()
                .map(|p| {
                    let mut cfg = base_cfg.clone();
                    if p < spec.dump_paths {
                        cfg.record_every = spec.integrator.record_every.max(1);
                    }
                    let mut rng = RngStream::for_path(spec.seed_base, cell, p as u32);
                    simulate_trajectory(model, &ou, sch, &cfg, &spec.detector, &mut rng).map_err(
                        |e| Error::Trajectory {
                            sigma,
                            schedule: ji,
                            path_index: p as u64,
                            message: e.to_string(),
                        },
                    )
                })
                .collect()
        });
        let mut acc = Welford::default();
        let mut samples = Vec::with_capacity(spec.n_paths);
        let (mut censored, mut no_solution) = (0, 0);
        for (p, r) in records.into_iter().enumerate() {
            let r = r?;
            match r.margin_mw {
                Some(s) => {
                    acc.push(s);
                    samples.push(s);
                }
                None => censored += 1,
            }
            if r.termination == Termination::NoSolution {
                no_solution += 1;
            }
            if p < spec.dump_paths {
                dumps.push((cell, p, r));
            }
        }
        let s_det = baselines[ji].s_det;
        let mut brng = RngStream::new(spec.seed_base ^ 0xB007_5742, cell as u64);
        let stats = MarginStatistics {
            cell,
            sigma,
            schedule_index: ji,
            interval: sch.interval,
            delta_lambda: sch.delta_lambda,
            speed_mw_per_s: sch.speed_mw_per_s(model.ramped_p0_mw()),
            n: acc.count(),
            n_censored: censored,
            n_no_solution: no_solution,
            mean_s: acc.mean(),
            var_s: acc.variance(),
            bootstrap_se: bootstrap_se(&samples, spec.bootstrap_resamples, &mut brng),
            s_det,
            pct_diff_vs_det: percent_diff(acc.mean(), s_det),
            ci90_lower: ci90_lower(&samples).ok(),
            histogram: if samples.is_empty() {
                None
            } else {
                Some(histogram(&samples, Bins::Count(spec.histogram_bins))?)
            },
            samples,
        };
        cells.push(stats);
    }
    Ok(ExperimentResult {
        baselines,
        cells,
        dumps,
    })
}
