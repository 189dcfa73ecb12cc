//! Configuration, data files, scenario presets and the study runner behind the CLI.

pub mod bench;
pub mod catalog;
pub mod command;
pub mod config;
pub mod io;
pub mod study;

pub use bench::{run_bench, taper_fraction, time_loglik, BenchRow, BENCH_HEADER};
pub use catalog::{catalog_entries, preset_families, preset_names, scenario_catalog, CatalogEntry};
pub use command::{run_command, Command, Outcome, METRICS_HEADER};
pub use config::{Method, RunConfig};
pub use io::{ingest_csv, ingest_gridded, parse_time, Dataset, GriddedData, IngestReport};
pub use study::{run_cell, run_study, CellResult, StudyOutcome, StudyRow, TABLE2_HEADER, TABLE3_HEADER};
