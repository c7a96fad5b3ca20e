//! Read-only subset of the MATPOWER case format: `mpc.baseMVA` and the
//! `mpc.bus`, `mpc.gen` and `mpc.branch` matrices.

use std::path::Path;

use super::case_file::{sha256_hex, validate_document, CaseDocument, CaseFormat, Provenance};
use crate::error::{Error, Result};
use crate::grid::{Branch, Bus, BusKind, Generator, NetworkCase};

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 21;
const BRANCH_COLS: usize = 13;

struct Matrix {
    rows: Vec<Vec<f64>>,
    line: usize,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: format!("line {line}: {}", message.into()),
    }
}

fn strip_comment(line: &str) -> &str {
    line.split('%').next().unwrap_or("")
}

fn scalar(text: &str, key: &str, path: &Path) -> Result<Option<f64>> {
    for (n, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if let Some(rest) = line.strip_prefix(key) {
            let rest = rest.trim_start();
            let Some(rhs) = rest.strip_prefix('=') else {
                continue;
            };
            let v = rhs.trim().trim_end_matches(';').trim();
            return v
                .parse()
                .map(Some)
                .map_err(|_| parse_err(path, n + 1, format!("cannot read {key} value {v:?}")));
        }
    }
    Ok(None)
}

fn matrix(text: &str, key: &str, path: &Path) -> Result<Option<Matrix>> {
    let lines: Vec<&str> = text.lines().collect();
    let Some(start) = lines.iter().position(|l| {
        let l = strip_comment(l).trim();
        l.starts_with(key) && l[key.len()..].trim_start().starts_with('=')
    }) else {
        return Ok(None);
    };
    let mut rows = Vec::new();
    let mut current: Vec<f64> = Vec::new();
    let mut opened = false;
    for (n, raw) in lines.iter().enumerate().skip(start) {
        let mut body = strip_comment(raw);
        if !opened {
            let Some(p) = body.find('[') else {
                return Err(parse_err(path, n + 1, format!("expected '[' after {key}")));
            };
            body = &body[p + 1..];
            opened = true;
        }
        let (body, closed) = match body.find(']') {
            Some(p) => (&body[..p], true),
            None => (body, false),
        };
        for chunk in body.split_inclusive(';') {
            let ends_row = chunk.ends_with(';');
            for tok in chunk
                .trim_end_matches(';')
                .split(|c: char| c.is_whitespace() || c == ',')
            {
                if tok.is_empty() {
                    continue;
                }
                let v: f64 = tok
                    .parse()
                    .map_err(|_| parse_err(path, n + 1, format!("bad number {tok:?} in {key}")))?;
                current.push(v);
            }
            if ends_row && !current.is_empty() {
                rows.push(std::mem::take(&mut current));
            }
        }
        // a newline also ends a row
        if !current.is_empty() {
            rows.push(std::mem::take(&mut current));
        }
        if closed {
            return Ok(Some(Matrix {
                rows,
                line: start + 1,
            }));
        }
    }
    Err(parse_err(
        path,
        start + 1,
        format!("unterminated matrix {key}"),
    ))
}

fn check_width(
    m: &Matrix,
    name: &str,
    min: usize,
    known: usize,
    path: &Path,
    warnings: &mut Vec<String>,
) -> Result<()> {
    for (k, r) in m.rows.iter().enumerate() {
        if r.len() < min {
            return Err(parse_err(
                path,
                m.line,
                format!(
                    "{name} row {k} has {} columns, need at least {min}",
                    r.len()
                ),
            ));
        }
    }
    if let Some(w) = m.rows.iter().map(|r| r.len()).max() {
        if w > known {
            warnings.push(format!(
                "{name}: ignoring {} column(s) beyond the {known} standard ones",
                w - known
            ));
        }
    }
    Ok(())
}

fn as_id(v: f64, what: &str, path: &Path, line: usize) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(parse_err(
            path,
            line,
            format!("{what} {v} is not a positive integer"),
        ))
    }
}

/// Parses a MATPOWER case. Powers are converted to per unit; loads stay
/// as constant-power bus demand.
pub fn parse_matpower_str(text: &str, source: &Path) -> Result<CaseDocument> {
    let mut warnings = Vec::new();
    let base_mva = scalar(text, "mpc.baseMVA", source)?
        .ok_or_else(|| parse_err(source, 1, "missing mpc.baseMVA"))?;
    if !(base_mva > 0.0) {
        return Err(parse_err(source, 1, "mpc.baseMVA must be positive"));
    }
    let need = |k: &str| -> Result<Matrix> {
        matrix(text, k, source)?.ok_or_else(|| parse_err(source, 1, format!("missing {k}")))
    };
    let bus_m = need("mpc.bus")?;
    let gen_m = need("mpc.gen")?;
    let br_m = need("mpc.branch")?;
    check_width(&bus_m, "bus", 10, BUS_COLS, source, &mut warnings)?;
    check_width(&gen_m, "gen", 8, GEN_COLS, source, &mut warnings)?;
    check_width(&br_m, "branch", 9, BRANCH_COLS, source, &mut warnings)?;

    let mut buses = Vec::with_capacity(bus_m.rows.len());
    for r in &bus_m.rows {
        let id = as_id(r[0], "bus id", source, bus_m.line)?;
        let kind = match r[1] as i64 {
            3 => BusKind::Slack,
            2 => BusKind::Pv,
            1 => BusKind::Pq,
            t => {
                return Err(parse_err(
                    source,
                    bus_m.line,
                    format!("bus {id}: unsupported bus type {t}"),
                ))
            }
        };
        buses.push(Bus {
            id,
            kind,
            v0: r[7],
            base_kv: r[9],
            pd: r[2] / base_mva,
            qd: r[3] / base_mva,
            gs: r[4] / base_mva,
            bs: r[5] / base_mva,
        });
    }

    let mut generators = Vec::new();
    for r in &gen_m.rows {
        let bus = as_id(r[0], "generator bus", source, gen_m.line)?;
        if r[7] <= 0.0 {
            warnings.push(format!("generator at bus {bus} is out of service; skipped"));
            continue;
        }
        generators.push(Generator {
            bus,
            p: r[1] / base_mva,
            v_set: r[5],
            q_min: r[4] / base_mva,
            q_max: r[3] / base_mva,
        });
    }

    let mut branches = Vec::new();
    for r in &br_m.rows {
        let from = as_id(r[0], "branch from-bus", source, br_m.line)?;
        let to = as_id(r[1], "branch to-bus", source, br_m.line)?;
        if r.len() > 10 && r[10] <= 0.0 {
            warnings.push(format!("branch {from}-{to} is out of service; skipped"));
            continue;
        }
        let (res, x) = (r[2], r[3]);
        let z2 = res * res + x * x;
        if z2 == 0.0 {
            return Err(parse_err(
                source,
                br_m.line,
                format!("branch {from}-{to} has zero impedance"),
            ));
        }
        if r[9] != 0.0 {
            warnings.push(format!(
                "branch {from}-{to}: phase shift {} deg ignored",
                r[9]
            ));
        }
        branches.push(Branch {
            from,
            to,
            g: res / z2,
            b: -x / z2,
            b_shunt: r[4],
            tap: if r[8] == 0.0 { 1.0 } else { r[8] },
        });
    }

    let name = source
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("matpower")
        .to_string();
    let doc = CaseDocument {
        case: NetworkCase {
            name,
            base_mva,
            buses,
            branches,
            generators,
        },
        loads: Vec::new(),
        ou: None,
        provenance: Provenance {
            source: source.to_path_buf(),
            format: CaseFormat::MatpowerSubset,
            sha256: sha256_hex(text.as_bytes()),
        },
        warnings,
    };
    validate_document(&doc)?;
    Ok(doc)
}
