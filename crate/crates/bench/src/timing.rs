use std::time::Instant;

use crate::error::{BenchError, Result};

/// Sample mean and unbiased standard deviation, in microseconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Latency {
    pub mean_us: f64,
    pub sd_us: f64,
}

/// Times `trials` calls of `f` after `warmup` discarded calls, on the
/// monotonic clock.
pub fn measure_latency<F: FnMut()>(mut f: F, trials: usize, warmup: usize) -> Result<Latency> {
    let mut fs: [&mut dyn FnMut(); 1] = [&mut f];
    Ok(measure_interleaved(&mut fs, trials, warmup)?[0])
}

/// Like [`measure_latency`] for several closures at once, run round-robin:
/// every round times each closure once, so bursts of load on the host fall
/// on all of them alike.
pub fn measure_interleaved(fs: &mut [&mut dyn FnMut()], trials: usize, warmup: usize) -> Result<Vec<Latency>> {
    if trials < 3 {
        return Err(BenchError::Config(format!("need at least 3 trials, got {trials}")));
    }
    for _ in 0..warmup {
        for f in fs.iter_mut() {
            f();
        }
    }
    let mut samples = vec![Vec::with_capacity(trials); fs.len()];
    for _ in 0..trials {
        for (f, s) in fs.iter_mut().zip(&mut samples) {
            let start = Instant::now();
            f();
            s.push(start.elapsed().as_secs_f64() * 1e6);
        }
    }
    samples.iter().map(|s| summarize(s)).collect()
}

fn summarize(samples: &[f64]) -> Result<Latency> {
    if samples.iter().all(|&s| s == 0.0) {
        return Err(BenchError::Measurement(
            "every sample read 0 us; the timer is too coarse, increase the sequence length or state dimension".into(),
        ));
    }
    let n = samples.len() as f64;
    let mean_us = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean_us) * (s - mean_us)).sum::<f64>() / (n - 1.0);
    Ok(Latency {
        mean_us,
        sd_us: var.sqrt(),
    })
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}
