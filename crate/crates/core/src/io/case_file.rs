//! Canonical TOML case format.
//!
//! ```toml
//! name = "three_bus"
//! base_mva = 100.0
//!
//! [[buses]]
//! id = 1
//! kind = "slack"
//!
//! [[branches]]
//! from = 1
//! to = 2
//! g = 0.99
//! b = -9.9
//!
//! [[generators]]
//! bus = 2
//! p = 0.5
//! v_set = 1.02
//!
//! [[loads]]
//! bus = 3
//! p0 = 0.5
//! q0 = 0.1
//! noise_channel = 0
//!
//! [ou]
//! alpha = [1.0]
//! ```
//!
//! Powers are in per unit of `base_mva`. `beta` in `[ou]` defaults to
//! `√(2α)`, so each channel has stationary variance `σ²`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{Branch, Bus, Generator, GridModel, LoadDynParams, NetworkCase};
use crate::ou::OuParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseFormat {
    Canonical,
    MatpowerSubset,
}

impl CaseFormat {
    /// `.m` files are read as MATPOWER, everything else as canonical.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("m") => CaseFormat::MatpowerSubset,
            _ => CaseFormat::Canonical,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuSection {
    pub alpha: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
}

impl OuSection {
    pub fn params(&self, sigma: f64) -> Result<OuParams> {
        match &self.beta {
            Some(b) => OuParams::new(self.alpha.clone(), b.clone(), sigma),
            None => OuParams::unit_variance(self.alpha.clone(), sigma),
        }
    }
}

/// On-disk layout of a canonical case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    #[serde(default)]
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub loads: Vec<LoadDynParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ou: Option<OuSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: PathBuf,
    pub format: CaseFormat,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseDocument {
    pub case: NetworkCase,
    pub loads: Vec<LoadDynParams>,
    pub ou: Option<OuSection>,
    pub provenance: Provenance,
    /// Non-fatal notes from the reader, e.g. ignored columns.
    pub warnings: Vec<String>,
}

impl CaseDocument {
    pub fn n_channels(&self) -> usize {
        let declared = self.ou.as_ref().map_or(0, |o| o.alpha.len());
        let used = self
            .loads
            .iter()
            .filter_map(|l| l.noise_channel)
            .map(|c| c + 1)
            .max()
            .unwrap_or(0);
        declared.max(used)
    }

    pub fn model(&self) -> Result<GridModel> {
        GridModel::new(self.case.clone(), self.loads.clone(), self.n_channels())
    }

    pub fn ou_params(&self, sigma: f64) -> Result<OuParams> {
        match &self.ou {
            Some(o) => o.params(sigma),
            None if self.n_channels() == 0 => Ok(OuParams::empty().with_sigma(sigma)),
            None => Err(Error::Validation(
                "loads use noise channels but the case has no [ou] section".into(),
            )),
        }
    }

    pub fn to_case_file(&self) -> CaseFile {
        CaseFile {
            name: self.case.name.clone(),
            base_mva: self.case.base_mva,
            buses: self.case.buses.clone(),
            branches: self.case.branches.clone(),
            generators: self.case.generators.clone(),
            loads: self.loads.clone(),
            ou: self.ou.clone(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses and validates canonical TOML text.
pub fn parse_canonical_str(text: &str, source: &Path) -> Result<CaseDocument> {
    let file: CaseFile = toml::from_str(text).map_err(|e| Error::Parse {
        path: source.to_path_buf(),
        message: e.to_string(),
    })?;
    let doc = CaseDocument {
        case: NetworkCase {
            name: file.name,
            base_mva: file.base_mva,
            buses: file.buses,
            branches: file.branches,
            generators: file.generators,
        },
        loads: file.loads,
        ou: file.ou,
        provenance: Provenance {
            source: source.to_path_buf(),
            format: CaseFormat::Canonical,
            sha256: sha256_hex(text.as_bytes()),
        },
        warnings: Vec::new(),
    };
    validate_document(&doc)?;
    Ok(doc)
}

pub(crate) fn validate_document(doc: &CaseDocument) -> Result<()> {
    doc.case.validate()?;
    if let Some(o) = &doc.ou {
        o.params(0.0)?;
    }
    // also checks load buses and channel indices
    doc.model().map(|_| ())
}

pub fn parse_case(path: &Path, format: CaseFormat) -> Result<CaseDocument> {
    let text = read_text(path)?;
    let doc = match format {
        CaseFormat::Canonical => parse_canonical_str(&text, path)?,
        CaseFormat::MatpowerSubset => super::matpower::parse_matpower_str(&text, path)?,
    };
    for w in &doc.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(doc)
}

/// Canonical TOML text for a document.
pub fn write_canonical(doc: &CaseDocument) -> Result<String> {
    toml::to_string(&doc.to_case_file()).map_err(|e| Error::Serialize(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE_BUS: &str = r#"
name = "t"
base_mva = 100.0

[[buses]]
id = 1
kind = "slack"

[[buses]]
id = 2
kind = "pv"

[[buses]]
id = 3
kind = "pq"

[[branches]]
from = 1
to = 2
g = 1.0
b = -10.0

[[branches]]
from = 2
to = 3
g = 1.0
b = -10.0

[[generators]]
bus = 2
p = 0.3
v_set = 1.01
q_min = -1.0
q_max = 1.0

[[loads]]
bus = 3
p0 = 0.4
q0 = 0.1
noise_channel = 0
ramped = true

[ou]
alpha = [1.0]
"#;

    #[test]
    fn parses_and_round_trips() {
        let doc = parse_canonical_str(THREE_BUS, Path::new("t.toml")).unwrap();
        assert_eq!(doc.case.buses.len(), 3);
        assert_eq!(doc.n_channels(), 1);
        let text = write_canonical(&doc).unwrap();
        let again = parse_canonical_str(&text, Path::new("t.toml")).unwrap();
        assert_eq!(again.to_case_file(), doc.to_case_file());
        assert_eq!(write_canonical(&again).unwrap(), text);
    }

    #[test]
    fn infinite_limits_survive_round_trip() {
        let text = THREE_BUS.replace("q_min = -1.0\nq_max = 1.0\n", "");
        let doc = parse_canonical_str(&text, Path::new("t.toml")).unwrap();
        assert_eq!(doc.case.generators[0].q_max, f64::INFINITY);
        let again =
            parse_canonical_str(&write_canonical(&doc).unwrap(), Path::new("t.toml")).unwrap();
        assert_eq!(again.case.generators[0].q_min, f64::NEG_INFINITY);
    }

    #[test]
    fn schema_error_has_location() {
        let text = THREE_BUS.replace("p0 = 0.4", "p0 = \"lots\"");
        let err = parse_canonical_str(&text, Path::new("bad.toml"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("bad.toml") && err.contains("line"), "{err}");
        let text = THREE_BUS.replace("ramped = true", "ramped = true\nspeed = 3");
        let err = parse_canonical_str(&text, Path::new("bad.toml"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("speed"), "{err}");
    }

    #[test]
    fn invalid_limits_name_the_generator() {
        let text = THREE_BUS.replace("q_min = -1.0", "q_min = 2.0");
        let err = parse_canonical_str(&text, Path::new("t.toml"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("generator 0 at bus 2"), "{err}");
    }

    #[test]
    fn second_slack_rejected() {
        let text = THREE_BUS.replacen("kind = \"pq\"", "kind = \"slack\"", 1);
        assert!(parse_canonical_str(&text, Path::new("t.toml")).is_err());
    }

    #[test]
    fn channel_without_ou_section_rejected() {
        let text = THREE_BUS.replace("[ou]\nalpha = [1.0]\n", "");
        let doc = parse_canonical_str(&text, Path::new("t.toml")).unwrap();
        assert!(doc.ou_params(0.1).is_err());
    }
}
