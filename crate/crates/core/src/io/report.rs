//! Sweep outputs: `results.csv`, `results.struct` (JSON), per-cell
//! histogram files and trajectory dumps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::case_file::{read_text, sha256_hex};
use crate::error::{Error, Result};
use crate::grid::GridModel;
use crate::integrator::{Termination, TrajectoryRecord};
use crate::montecarlo::{round2, Baseline, ExperimentResult, ExperimentSpec, MarginStatistics};

pub const REPORT_FILE: &str = "results.struct";
pub const TABLE_FILE: &str = "results.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuredReport {
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub case_name: String,
    pub case_sha256: String,
    pub spec: ExperimentSpec,
    pub baselines: Vec<Baseline>,
    /// Per-cell statistics with histogram arrays; raw samples omitted.
    pub cells: Vec<MarginStatistics>,
}

/// First line of every emitted text file.
pub fn provenance_header(seed: u64, config_hash: &str) -> String {
    format!(
        "# sdae-margin {} seed={seed} config_hash={config_hash}\n",
        env!("CARGO_PKG_VERSION")
    )
}

/// Hash of everything that determines the output of a sweep.
pub fn config_hash(spec: &ExperimentSpec, case_text: &str) -> Result<String> {
    let spec_json = serde_json::to_string(spec).map_err(|e| Error::Serialize(e.to_string()))?;
    let mut buf = spec_json.into_bytes();
    buf.push(0);
    buf.extend_from_slice(case_text.as_bytes());
    Ok(sha256_hex(&buf))
}

impl StructuredReport {
    pub fn new(
        spec: &ExperimentSpec,
        case_name: &str,
        case_text: &str,
        result: &ExperimentResult,
    ) -> Result<Self> {
        let cells = result
            .cells
            .iter()
            .map(|c| MarginStatistics {
                samples: Vec::new(),
                ..c.clone()
            })
            .collect();
        Ok(Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: spec.seed_base,
            config_hash: config_hash(spec, case_text)?,
            case_name: case_name.to_string(),
            case_sha256: sha256_hex(case_text.as_bytes()),
            spec: spec.clone(),
            baselines: result.baselines.clone(),
            cells,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s =
            serde_json::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn header(&self) -> String {
        provenance_header(self.seed, &self.config_hash)
    }

    pub fn read(path: &Path) -> Result<Self> {
        serde_json::from_str(&read_text(path)?).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// File-name fragment for a cell, e.g. `s0.1_T0.4`.
pub fn cell_label(c: &MarginStatistics) -> String {
    format!("s{}_T{}", c.sigma, c.interval)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per cell. Floats use the shortest exact representation except
/// `pct_diff`, which is rounded to two decimals.
pub fn results_table(report: &StructuredReport) -> String {
    let mut s = String::from(
        "cell,sigma,interval_s,delta_lambda,speed_mw_per_s,n,n_censored,n_no_solution,\
         mean_S_mw,var_S,bootstrap_se,S_det_mw,pct_diff,ci90_lower_mw\n",
    );
    for c in &report.cells {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{:.2},{}",
            c.cell,
            c.sigma,
            c.interval,
            c.delta_lambda,
            c.speed_mw_per_s,
            c.n,
            c.n_censored,
            c.n_no_solution,
            c.mean_s,
            c.var_s,
            c.bootstrap_se,
            c.s_det,
            round2(c.pct_diff_vs_det),
            opt(c.ci90_lower),
        );
    }
    s
}

pub fn histogram_csv(c: &MarginStatistics) -> Option<String> {
    let h = c.histogram.as_ref()?;
    let mut s = String::from("bin_lo_mw,bin_hi_mw,count\n");
    for (k, n) in h.counts.iter().enumerate() {
        let _ = writeln!(s, "{},{},{}", h.edges[k], h.edges[k + 1], n);
    }
    Some(s)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes `results.csv` and `hist_<cell>.csv`, each starting with the
/// provenance header; returns the written paths.
pub fn render_tables(report: &StructuredReport, out: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out)?;
    let header = report.header();
    let mut written = Vec::new();
    let table = out.join(TABLE_FILE);
    write_file(&table, &(header.clone() + &results_table(report)))?;
    written.push(table);
    for c in &report.cells {
        if let Some(h) = histogram_csv(c) {
            let p = out.join(format!("hist_{}.csv", cell_label(c)));
            write_file(&p, &(header.clone() + &h))?;
            written.push(p);
        }
    }
    Ok(written)
}

/// Writes the structured report plus the rendered tables.
pub fn write_sweep_outputs(report: &StructuredReport, out: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out)?;
    let p = out.join(REPORT_FILE);
    write_file(&p, &report.to_json()?)?;
    let mut written = vec![p];
    written.extend(render_tables(report, out)?);
    Ok(written)
}

pub fn termination_code(t: Termination) -> &'static str {
    match t {
        Termination::SnbDetected => "SNB",
        Termination::NoSolution => "NOSOL",
        Termination::HorizonReached => "HORIZON",
    }
}

/// CSV with columns `t, lambda, V_<bus>…, xp_<bus>/xq_<bus>…, eta_<c>…,
/// rcond, event`. A detection is appended as a final row carrying its
/// time, loading factor and cause code.
pub fn trajectory_csv(model: &GridModel, record_buses: &[usize], rec: &TrajectoryRecord) -> String {
    let mut cols = vec!["t".to_string(), "lambda".to_string()];
    cols.extend(record_buses.iter().map(|b| format!("V_{b}")));
    for l in model.loads.iter().filter(|l| l.dynamic) {
        cols.push(format!("xp_{}", l.bus));
        cols.push(format!("xq_{}", l.bus));
    }
    cols.extend((0..model.n_channels).map(|c| format!("eta_{c}")));
    cols.push("rcond".into());
    cols.push("event".into());
    let width = cols.len();
    let mut s = cols.join(",");
    s.push('\n');
    for smp in &rec.samples {
        let mut row: Vec<String> = vec![smp.t.to_string(), smp.lambda.to_string()];
        row.extend(smp.v.iter().map(|v| v.to_string()));
        row.extend(smp.x.iter().map(|v| v.to_string()));
        row.extend(smp.eta.iter().map(|v| v.to_string()));
        row.push(if smp.rcond.is_nan() {
            String::new()
        } else {
            smp.rcond.to_string()
        });
        row.push(String::new());
        s.push_str(&row.join(","));
        s.push('\n');
    }
    if let (Some(t), Some(l)) = (rec.t_at_detection, rec.lambda_at_detection) {
        let mut row = vec![t.to_string(), l.to_string()];
        row.resize(width - 1, String::new());
        row.push(termination_code(rec.termination).to_string());
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// `trajectories/<cell>/<idx>.csv` for every dumped path, each prefixed
/// with `header`.
pub fn write_trajectory_dumps(
    model: &GridModel,
    record_buses: &[usize],
    result: &ExperimentResult,
    out: &Path,
    header: &str,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (cell, idx, rec) in &result.dumps {
        let label = result
            .cells
            .iter()
            .find(|c| c.cell == *cell)
            .map(cell_label)
            .unwrap_or_else(|| format!("cell{cell}"));
        let dir = out.join("trajectories").join(label);
        create_dir(&dir)?;
        let p = dir.join(format!("{idx}.csv"));
        write_file(
            &p,
            &(header.to_string() + &trajectory_csv(model, record_buses, rec)),
        )?;
        written.push(p);
    }
    Ok(written)
}
