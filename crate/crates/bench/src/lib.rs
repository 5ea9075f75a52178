//! Benchmark harness for low-rank SS2D: rank sweeps with latency
//! measurement, CSV output, model files, seeded oracle checks and the
//! `lrss2d` command line.

pub mod checks;
pub mod cli;
pub mod error;
pub mod model;
pub mod oracle;
pub mod output;
pub mod sweep;
pub mod timing;

pub use cli::cli_main;
pub use error::{BenchError, Result};
pub use model::{load_model, save_model, Model};
pub use output::{emit_csv, emit_log_csv, write_csv, CSV_HEADER};
pub use sweep::{run_rank_sweep, run_rank_sweep_repeated, BenchConfig, BenchRecord};
pub use timing::{measure_latency, Latency};
