//! Case and experiment files, and sweep outputs.

mod case_file;
mod experiment;
mod matpower;
mod report;

pub use case_file::{
    parse_canonical_str, parse_case, sha256_hex, write_canonical, CaseDocument, CaseFile,
    CaseFormat, OuSection, Provenance,
};
pub use experiment::{
    parse_experiment, parse_experiment_str, ExperimentFile, ResolvedExperiment, ScheduleEntry,
    SweepSection,
};
pub use matpower::parse_matpower_str;
pub use report::{
    cell_label, config_hash, histogram_csv, provenance_header, render_tables, results_table,
    termination_code, trajectory_csv, write_sweep_outputs, write_trajectory_dumps,
    StructuredReport, REPORT_FILE, TABLE_FILE,
};
