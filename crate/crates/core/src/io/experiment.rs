//! Experiment files: a case reference plus the `(σ, schedule)` sweep.
//!
//! ```toml
//! case = "three_bus.toml"
//! seed = 20190925
//! n_paths = 1000
//!
//! [sweep]
//! sigma_list = [0.05, 0.10, 0.15]
//! delta_lambda = 0.02
//! lambda_max = 2.0
//! schedules = [{ interval = 0.4 }, { speed_mw_per_s = 2.0 }]
//! ```
//!
//! A schedule gives either `interval` or `speed_mw_per_s`; `delta_lambda`
//! and `lambda_max` fall back to the sweep-level values. Optional
//! `[ou]`, `[[loads]]`, `[detector]` and `[integrator]` tables override the
//! case and the defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::case_file::{
    parse_case, read_text, validate_document, CaseDocument, CaseFormat, OuSection,
};
use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::grid::{GridModel, LoadDynParams, RampSchedule};
use crate::integrator::IntegratorConfig;
use crate::montecarlo::ExperimentSpec;

fn default_delta() -> f64 {
    0.02
}

fn default_lambda_max() -> f64 {
    3.0
}

fn default_bins() -> usize {
    30
}

fn default_resamples() -> usize {
    2000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_mw_per_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_max: Option<f64>,
    #[serde(default)]
    pub continuous: bool,
}

impl ScheduleEntry {
    pub fn resolve(&self, sweep: &SweepSection, p0_mw: f64) -> Result<RampSchedule> {
        let delta = self.delta_lambda.unwrap_or(sweep.delta_lambda);
        let lmax = self.lambda_max.unwrap_or(sweep.lambda_max);
        let mut s = match (self.interval, self.speed_mw_per_s) {
            (Some(t), None) => RampSchedule::new(delta, t, lmax)?,
            (None, Some(v)) => RampSchedule::from_speed(v, delta, p0_mw, lmax)?,
            (Some(_), Some(_)) => {
                return Err(Error::InvalidParameter(
                    "schedule gives both interval and speed_mw_per_s".into(),
                ))
            }
            (None, None) => {
                return Err(Error::InvalidParameter(
                    "schedule needs interval or speed_mw_per_s".into(),
                ))
            }
        };
        s.continuous = self.continuous;
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub sigma_list: Vec<f64>,
    pub schedules: Vec<ScheduleEntry>,
    #[serde(default = "default_delta")]
    pub delta_lambda: f64,
    #[serde(default = "default_lambda_max")]
    pub lambda_max: f64,
    /// Optional subset of `[σ index, schedule index]` pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<(usize, usize)>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    /// Relative paths are resolved against the experiment file.
    pub case: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_format: Option<CaseFormat>,
    pub seed: u64,
    pub n_paths: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub sweep: SweepSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ou: Option<OuSection>,
    /// Replaces the loads of the case when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loads: Option<Vec<LoadDynParams>>,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
}

/// Everything a sweep needs, with defaults filled in.
#[derive(Clone, Debug)]
pub struct ResolvedExperiment {
    pub file: ExperimentFile,
    pub case: CaseDocument,
    pub model: GridModel,
    pub spec: ExperimentSpec,
    pub out: Option<PathBuf>,
}

pub fn parse_experiment_str(text: &str, source: &Path) -> Result<ExperimentFile> {
    toml::from_str(text).map_err(|e| Error::Parse {
        path: source.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn parse_experiment(path: &Path) -> Result<ExperimentFile> {
    parse_experiment_str(&read_text(path)?, path)
}

impl ExperimentFile {
    pub fn case_path(&self, base_dir: &Path) -> PathBuf {
        if self.case.is_absolute() {
            self.case.clone()
        } else {
            base_dir.join(&self.case)
        }
    }

    /// Loads the case, applies overrides and builds the run specification.
    pub fn resolve(&self, base_dir: &Path) -> Result<ResolvedExperiment> {
        let path = self.case_path(base_dir);
        let format = self
            .case_format
            .unwrap_or_else(|| CaseFormat::from_path(&path));
        let mut case = parse_case(&path, format)?;
        if let Some(loads) = &self.loads {
            case.loads = loads.clone();
        }
        if let Some(ou) = &self.ou {
            case.ou = Some(ou.clone());
        }
        validate_document(&case)?;
        let model = case.model()?;
        for id in &self.integrator.record_buses {
            model.case.index_of(*id)?;
        }
        let p0_mw = model.ramped_p0_mw();
        let schedules = self
            .sweep
            .schedules
            .iter()
            .map(|s| s.resolve(&self.sweep, p0_mw))
            .collect::<Result<Vec<_>>>()?;
        let spec = ExperimentSpec {
            sigma_list: self.sweep.sigma_list.clone(),
            schedules,
            n_paths: self.n_paths,
            seed_base: self.seed,
            ou: case.ou_params(0.0)?,
            detector: self.detector,
            integrator: self.integrator.clone(),
            cells: self.sweep.cells.clone(),
            histogram_bins: self.histogram_bins,
            bootstrap_resamples: self.bootstrap_resamples,
            dump_paths: 0,
        };
        spec.validate(&model)?;
        let out = self.out.as_ref().map(|o| {
            if o.is_absolute() {
                o.clone()
            } else {
                base_dir.join(o)
            }
        });
        Ok(ResolvedExperiment {
            file: self.clone(),
            case,
            model,
            spec,
            out,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sweep() -> SweepSection {
        SweepSection {
            sigma_list: vec![0.1],
            schedules: vec![],
            delta_lambda: 0.02,
            lambda_max: 2.0,
            cells: None,
        }
    }

    fn entry(interval: Option<f64>, speed: Option<f64>) -> ScheduleEntry {
        ScheduleEntry {
            delta_lambda: None,
            interval,
            speed_mw_per_s: speed,
            lambda_max: None,
            continuous: false,
        }
    }

    #[test]
    fn speed_and_interval_are_exclusive() {
        assert!(entry(Some(0.4), Some(2.0)).resolve(&sweep(), 40.0).is_err());
        assert!(entry(None, None).resolve(&sweep(), 40.0).is_err());
    }

    #[test]
    fn speed_round_trips_through_interval() {
        let s = entry(None, Some(2.0)).resolve(&sweep(), 40.0).unwrap();
        assert!((s.interval - 0.4).abs() < 1e-15);
        assert!((s.speed_mw_per_s(40.0) - 2.0).abs() < 1e-12);
        let t = entry(Some(0.4), None).resolve(&sweep(), 40.0).unwrap();
        assert_eq!(t.delta_lambda, 0.02);
        assert_eq!(t.lambda_max, 2.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = "case = \"c.toml\"\nseed = 1\nn_paths = 10\nthreads = 4\n[sweep]\nsigma_list = [0.1]\nschedules = [{ interval = 0.4 }]\n";
        let err = parse_experiment_str(text, Path::new("e.toml"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("threads"), "{err}");
    }
}
