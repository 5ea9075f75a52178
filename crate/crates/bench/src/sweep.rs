use std::hint::black_box;
use std::path::PathBuf;

use lowrank_ss2d::lowrank::{rank_for_ratio, transition_param_count};
use lowrank_ss2d::numlin::Rng;
use lowrank_ss2d::ss2d::{FeatureMap, Ss2dLayer};

use crate::error::{BenchError, Result};
use crate::timing::{measure_interleaved, median};

/// Default rank-ratio grid of the sweep.
pub const ABLATION_RATIOS: [f64; 4] = [0.65, 0.60, 0.55, 0.50];

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub state_dim: usize,
    pub ratios: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub trials: usize,
    pub warmup: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            state_dim: 64,
            ratios: ABLATION_RATIOS.to_vec(),
            height: 32,
            width: 32,
            channels: 1,
            trials: 5,
            warmup: 1,
            seed: 0,
            out: None,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.trials < 3 {
            return bad(format!("trials must be >= 3, got {}", self.trials));
        }
        if self.warmup < 1 {
            return bad("warmup must be >= 1".into());
        }
        if self.ratios.is_empty() {
            return bad("at least one rank ratio is required".into());
        }
        if let Some(r) = self.ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return bad(format!("rank ratio {r} outside (0, 1]"));
        }
        if self.state_dim == 0 || self.height == 0 || self.width == 0 || self.channels == 0 {
            return bad("state_dim, height, width and channels must be positive".into());
        }
        Ok(())
    }

    /// Sets `height x width` to the most square factorization of `len`.
    pub fn set_seq_len(&mut self, len: usize) -> Result<()> {
        if len == 0 {
            return Err(BenchError::Config("sequence length must be positive".into()));
        }
        let mut h = (len as f64).sqrt() as usize;
        while h > 1 && !len.is_multiple_of(h) {
            h -= 1;
        }
        self.height = h.max(1);
        self.width = len / self.height;
        Ok(())
    }

    pub fn seq_len(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub rank_ratio: f64,
    pub rank: usize,
    pub params_full: usize,
    pub params_low: usize,
    pub latency_full_us: f64,
    pub latency_full_sd: f64,
    pub latency_low_us: f64,
    pub latency_low_sd: f64,
    pub speedup: f64,
}

impl BenchRecord {
    pub(crate) fn fields(&self) -> [String; 9] {
        [
            self.rank_ratio.to_string(),
            self.rank.to_string(),
            self.params_full.to_string(),
            self.params_low.to_string(),
            format!("{:.3}", self.latency_full_us),
            format!("{:.3}", self.latency_full_sd),
            format!("{:.3}", self.latency_low_us),
            format!("{:.3}", self.latency_low_sd),
            format!("{:.4}", self.speedup),
        ]
    }
}

/// For each ratio: SVD-compress a seeded full-rank teacher to rank
/// `max(1, round(ratio * N))` and time one full SS2D forward pass of teacher
/// and student on the same seeded input. Trials of all models are
/// interleaved round-robin. Parameter counts are per directional transition.
pub fn run_rank_sweep(cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    cfg.validate()?;
    let rng = Rng::new(cfg.seed);
    let teacher = Ss2dLayer::random_teacher(cfg.state_dim, cfg.channels, &mut rng.split(1));
    let input = FeatureMap::random(cfg.height, cfg.width, cfg.channels, 1.0, &mut rng.split(2));
    let mut students = Vec::with_capacity(cfg.ratios.len());
    for &ratio in &cfg.ratios {
        let rank = rank_for_ratio(ratio, cfg.state_dim);
        students.push((ratio, rank, teacher.compress(rank)?));
    }
    let forward = |layer: &Ss2dLayer| drop(black_box(layer.forward(black_box(&input))));
    let mut closures: Vec<Box<dyn FnMut() + '_>> = Vec::with_capacity(2 * students.len());
    for (_, _, student) in &students {
        closures.push(Box::new(|| forward(&teacher)));
        closures.push(Box::new(move || forward(student)));
    }
    let mut refs: Vec<&mut dyn FnMut()> = closures.iter_mut().map(|c| c.as_mut() as &mut dyn FnMut()).collect();
    let lat = measure_interleaved(&mut refs, cfg.trials, cfg.warmup)?;
    let records = students
        .iter()
        .zip(lat.chunks_exact(2))
        .map(|(&(ratio, rank, _), pair)| {
            let (full, low) = (pair[0], pair[1]);
            let (params_full, params_low) = transition_param_count(cfg.state_dim, rank);
            BenchRecord {
                rank_ratio: ratio,
                rank,
                params_full,
                params_low,
                latency_full_us: full.mean_us,
                latency_full_sd: full.sd_us,
                latency_low_us: low.mean_us,
                latency_low_sd: low.sd_us,
                speedup: full.mean_us / low.mean_us,
            }
        })
        .collect();
    Ok(records)
}

/// Runs the sweep `repetitions` times and reports, per ratio, the median of
/// each latency statistic over the repetitions; the speedup is recomputed
/// from the median means. Odd repetitions visit the ratios in reverse so that
/// slow drift of the machine does not favour one end of the list.
pub fn run_rank_sweep_repeated(cfg: &BenchConfig, repetitions: usize) -> Result<Vec<BenchRecord>> {
    if repetitions == 0 {
        return Err(BenchError::Config("repetitions must be positive".into()));
    }
    let mut reversed = cfg.clone();
    reversed.ratios.reverse();
    let runs = (0..repetitions)
        .map(|rep| {
            if rep % 2 == 0 {
                run_rank_sweep(cfg)
            } else {
                run_rank_sweep(&reversed).map(|mut r| {
                    r.reverse();
                    r
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = runs[0].clone();
    for (i, rec) in out.iter_mut().enumerate() {
        let col = |f: fn(&BenchRecord) -> f64| median(&runs.iter().map(|r| f(&r[i])).collect::<Vec<_>>());
        rec.latency_full_us = col(|r| r.latency_full_us);
        rec.latency_full_sd = col(|r| r.latency_full_sd);
        rec.latency_low_us = col(|r| r.latency_low_us);
        rec.latency_low_sd = col(|r| r.latency_low_sd);
        rec.speedup = rec.latency_full_us / rec.latency_low_us;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seq_len_factorization() {
        let mut cfg = BenchConfig::default();
        for (len, hw) in [(4096, (64, 64)), (1024, (32, 32)), (12, (3, 4)), (7, (1, 7)), (1, (1, 1))] {
            cfg.set_seq_len(len).unwrap();
            assert_eq!((cfg.height, cfg.width), hw);
        }
        assert!(cfg.set_seq_len(0).is_err());
    }

    #[test]
    fn repeated_sweep_keeps_ratio_order() {
        let cfg = BenchConfig {
            state_dim: 8,
            ratios: vec![0.25, 1.0, 0.5],
            height: 2,
            width: 3,
            trials: 3,
            ..BenchConfig::default()
        };
        let recs = run_rank_sweep_repeated(&cfg, 3).unwrap();
        assert_eq!(recs.iter().map(|r| r.rank).collect::<Vec<_>>(), vec![2, 8, 4]);
        assert!(run_rank_sweep_repeated(&cfg, 0).is_err());
    }

    #[test]
    fn config_validation() {
        let base = BenchConfig::default();
        assert!(base.validate().is_ok());
        for cfg in [
            BenchConfig { trials: 2, ..base.clone() },
            BenchConfig { warmup: 0, ..base.clone() },
            BenchConfig { ratios: vec![], ..base.clone() },
            BenchConfig { ratios: vec![1.5], ..base.clone() },
            BenchConfig { ratios: vec![0.0], ..base.clone() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn small_sweep_accounting() {
        let cfg = BenchConfig {
            state_dim: 16,
            ratios: vec![1.0, 0.5, 0.25],
            height: 4,
            width: 4,
            trials: 3,
            ..BenchConfig::default()
        };
        let recs = run_rank_sweep(&cfg).unwrap();
        let summary: Vec<(usize, usize, usize)> = recs.iter().map(|r| (r.rank, r.params_full, r.params_low)).collect();
        assert_eq!(summary, vec![(16, 256, 512), (8, 256, 256), (4, 256, 128)]);
        for r in &recs {
            assert!(r.latency_full_sd >= 0.0 && r.latency_low_sd >= 0.0);
            assert!(r.speedup > 0.0);
        }
    }
}
