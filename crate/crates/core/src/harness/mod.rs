//! Capacity-matched sweeps: configuration, execution on a worker pool,
//! aggregation over repeats, and CSV / SVG output.

mod config;
mod output;
mod svg;
mod sweep;

pub use config::{DataSource, DatasetSpec, ExperimentConfig, ScaleAxis, SEED_ENV};
pub use output::{
    aggregate, aggregate_to_csv, emit_csv, parse_csv, rows_to_csv, write_outputs, Aggregate, AggregateRow, CSV_HEADER,
};
pub use svg::{available_metrics, emit_svg, render_svg};
pub use sweep::{run_seed, run_sweep, run_sweep_on, RunFailure, SweepResult, SweepRow};
