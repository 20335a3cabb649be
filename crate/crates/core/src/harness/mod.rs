//! Experiment orchestration: config files, multi-seed suites, summaries,
//! paired comparisons, grid expansion and run diagnostics.

mod config;
mod diagnostics;
mod grid;
mod suite;

pub use config::{
    parse_config, parse_config_str, parse_config_table, DatasetConfig, DatasetSource,
    ExperimentConfig, STRATEGIES,
};
pub use diagnostics::{analysis_mu, analyze_run, diagnose_seed, DiagnosticsReport, SeedDiagnostics};
pub use grid::{expand_grid, run_grid, run_grid_file, Axis, GridEntry};
pub use suite::{
    compare, load_summary, load_trajectory, read_rounds_csv, run_suite, run_suite_with,
    write_rounds_csv, ComparisonReport, EpsilonSummary, SeedDelta, SeedRun, SeedSummary, Stat,
    SummaryReport, CSV_COLUMNS,
};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "UPCYCLED_FL_THREADS";

/// Sizes the global worker pool from `UPCYCLED_FL_THREADS` when set. Returns
/// the thread count in effect.
pub fn configure_threads() -> crate::Result<usize> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n >= 1)
            .ok_or_else(|| crate::Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        // A pool that already exists keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}
