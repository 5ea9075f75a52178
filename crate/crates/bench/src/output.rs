use std::io::Write;
use std::path::Path;

use lowrank_ss2d::distill::TrainingLog;

use crate::error::{BenchError, Result};
use crate::sweep::BenchRecord;

pub const CSV_HEADER: [&str; 9] = [
    "rank_ratio",
    "rank",
    "params_full",
    "params_low",
    "latency_full_us",
    "latency_full_sd",
    "latency_low_us",
    "latency_low_sd",
    "speedup",
];

pub const LOG_HEADER: [&str; 6] = ["step", "loss_task", "loss_svd", "loss_state", "loss_feat", "loss_total"];

/// Columns that hold wall-clock measurements and differ between runs.
pub const LATENCY_COLUMNS: [usize; 5] = [4, 5, 6, 7, 8];

pub fn write_csv<W: Write>(records: &[BenchRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(CSV_HEADER)?;
    for r in records {
        wr.write_record(r.fields())?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn emit_csv(records: &[BenchRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| BenchError::io(path, e))?;
    write_csv(records, file)
}

pub fn write_log_csv<W: Write>(log: &TrainingLog, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(LOG_HEADER)?;
    for rec in &log.records {
        let l = &rec.loss;
        wr.write_record([
            rec.step.to_string(),
            format!("{:?}", l.task),
            format!("{:?}", l.svd),
            format!("{:?}", l.state),
            format!("{:?}", l.feat),
            format!("{:?}", l.total),
        ])?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn emit_log_csv(log: &TrainingLog, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| BenchError::io(path, e))?;
    write_log_csv(log, file)
}
