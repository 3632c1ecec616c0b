//! End-to-end experiments: decode in each mode, charge every step with the
//! latency model and aggregate wall time and speedup. Sweeps run their cells
//! on the current rayon pool and merge results in cell order.

mod output;
mod record;
mod run;
mod sweep;
mod timeline;

pub use output::{batching_rows, csv_string, fallback_rows, write_csv, write_csv_to, write_json, CsvRow, CSV_HEADER};
pub use record::StepRecord;
pub use run::{
    check_lossless, mode_params, run_mode, run_modes, timelines, ExperimentResult, Mode, ModeRun, Models, SsSettings,
    TIMELINE_TOLERANCE,
};
pub use sweep::{
    bench, run_experiment, run_sessions, sweep_batching, sweep_fallback, sweep_tri_objective, BatchRow, BatchSweep, Bench,
    FallbackCell, FallbackSweep, SeedSpeedups, Setup, TriSweep,
};
pub use timeline::{Interval, Lane, StepTimeline};
