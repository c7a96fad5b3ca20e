use std::path::{Path, PathBuf};

use sdae_margin::grid::BusKind;
use sdae_margin::io::{
    parse_canonical_str, parse_case, parse_experiment, write_canonical, CaseFormat,
};

fn cases() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cases")
}

const CANONICAL: [&str; 3] = ["two_bus.toml", "three_bus.toml", "ieee14_dynamic.toml"];

#[test]
fn canonical_fixtures_round_trip() {
    for name in CANONICAL {
        let path = cases().join(name);
        let doc = parse_case(&path, CaseFormat::Canonical).unwrap();
        let text = write_canonical(&doc).unwrap();
        let again = parse_canonical_str(&text, &path).unwrap();
        assert_eq!(again.to_case_file(), doc.to_case_file(), "{name}");
        assert_eq!(write_canonical(&again).unwrap(), text, "{name}");
    }
}

#[test]
fn writer_output_is_byte_identical_for_generated_fixture() {
    let path = cases().join("ieee14_dynamic.toml");
    let original = std::fs::read_to_string(&path).unwrap();
    let doc = parse_case(&path, CaseFormat::Canonical).unwrap();
    assert_eq!(write_canonical(&doc).unwrap(), original);
}

#[test]
fn three_bus_shape() {
    let doc = parse_case(&cases().join("three_bus.toml"), CaseFormat::Canonical).unwrap();
    assert_eq!(doc.case.buses.len(), 3);
    let slacks = doc
        .case
        .buses
        .iter()
        .filter(|b| b.kind == BusKind::Slack)
        .count();
    assert_eq!(slacks, 1);
    assert_eq!(doc.n_channels(), 1);
    let m = doc.model().unwrap();
    assert_eq!(m.ramped_p0_mw(), 40.0);
    assert_eq!(doc.provenance.sha256.len(), 64);
}

#[test]
fn matpower_fixture_maps_reference_bus() {
    let doc = parse_case(
        &cases().join("case14.m"),
        CaseFormat::from_path(Path::new("case14.m")),
    )
    .unwrap();
    assert_eq!(doc.case.buses.len(), 14);
    assert_eq!(doc.case.buses[0].id, 1);
    assert_eq!(doc.case.buses[0].kind, BusKind::Slack);
    let pv: Vec<usize> = doc
        .case
        .buses
        .iter()
        .filter(|b| b.kind == BusKind::Pv)
        .map(|b| b.id)
        .collect();
    assert_eq!(pv, vec![2, 3, 6, 8]);
    assert_eq!(doc.case.branches.len(), 20);
    let taps: Vec<f64> = doc
        .case
        .branches
        .iter()
        .filter(|b| b.tap != 1.0)
        .map(|b| b.tap)
        .collect();
    assert_eq!(taps, vec![0.978, 0.969, 0.932]);
    assert!(doc.warnings.is_empty());
}

#[test]
fn matpower_base_case_solves() {
    let doc = parse_case(&cases().join("case14.m"), CaseFormat::MatpowerSubset).unwrap();
    let m = doc.model().unwrap();
    let st = m
        .initial_state(sdae_margin::OuState::zeros(0), &Default::default())
        .unwrap();
    // published solution: bus 14 at 1.036 pu with its reactive limits active
    assert!((st.v[13] - 1.036).abs() < 0.01, "{}", st.v[13]);
}

#[test]
fn shipped_experiments_resolve() {
    for name in ["reference.toml", "quick.toml", "ieee14.toml"] {
        let path = cases().join("experiments").join(name);
        let file = parse_experiment(&path).unwrap();
        let r = file.resolve(path.parent().unwrap()).unwrap();
        assert!(!r.spec.cell_list().is_empty(), "{name}");
    }
}

#[test]
fn reference_speeds_match_table_rows() {
    let path = cases().join("experiments/reference.toml");
    let r = parse_experiment(&path)
        .unwrap()
        .resolve(path.parent().unwrap())
        .unwrap();
    let p0 = r.model.ramped_p0_mw();
    let speeds: Vec<f64> = r
        .spec
        .schedules
        .iter()
        .map(|s| s.speed_mw_per_s(p0))
        .collect();
    let expected = [8.0, 2.0, 0.9, 0.5];
    for (s, e) in speeds.iter().zip(expected) {
        assert!((s - e).abs() < 0.015, "{s} vs {e}");
    }
}
