//! Configuration, experiment orchestration, sweeps, reports and persisted metrics.

pub mod config;
pub mod experiment;
pub mod records;
pub mod report;
pub mod sweep;

pub use config::{parse_config, parse_daa, ConfigOverrides, DatasetName, RunConfig, DATA_ROOT_ENV};
pub use experiment::{evaluate_checkpoint, load_styler, run_experiment, run_seed, DatasetCache, DatasetSplit};
pub use records::{load_records, mean_std, MetricsRecord, RunStatus, SeedResult, METRICS_FILE, SUMMARY_FILE};
pub use report::{render_report, ReportStyle};
pub use sweep::{comparison_table, run_sweep, SweepCell, SweepGrid, SweepOutcome};
