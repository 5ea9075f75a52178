use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lowrank_ss2d::detect::{map50, parse_detections, parse_ground_truth};
use lowrank_ss2d::distill::{distill_train, DistillConfig};
use lowrank_ss2d::lowrank::rank_for_ratio;

use crate::checks::{format_report, selfcheck};
use crate::error::{BenchError, Result};
use crate::model::{save_model, Model};
use crate::output::{write_csv, write_log_csv};
use crate::sweep::{run_rank_sweep_repeated, BenchConfig, ABLATION_RATIOS};

#[derive(Debug, Parser)]
#[command(name = "lrss2d", version, about = "Low-rank SS2D benchmarks, distillation and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Time full-rank against SVD-compressed SS2D forward passes per rank ratio.
    Sweep(SweepArgs),
    /// Distill a random full-rank teacher into a low-rank student.
    Distill(DistillArgs),
    /// mAP50 of a detection file against a ground-truth file.
    Eval {
        detections: PathBuf,
        ground_truth: PathBuf,
    },
    /// Run the seeded oracle checks; exits non-zero if any fails.
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
struct Shape {
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    /// Sequence length; sets the most square H x W with H * W = L.
    #[arg(long, conflicts_with_all = ["height", "width"])]
    seq_len: Option<usize>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 64)]
    state_dim: usize,
    /// Comma-separated rank ratios in (0, 1].
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    #[command(flatten)]
    shape: Shape,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sweep repetitions; latencies are medians over repetitions.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DistillArgs {
    #[arg(long, default_value_t = 8)]
    state_dim: usize,
    /// Rank ratio of the student; only the first value is used.
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    #[command(flatten)]
    shape: Shape,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    /// Training-log CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also save the distilled student and the teacher's head here.
    #[arg(long)]
    model: Option<PathBuf>,
}

fn resolve_shape(shape: &Shape, height: usize, width: usize, channels: usize) -> Result<(usize, usize, usize)> {
    let mut cfg = BenchConfig {
        height: shape.height.unwrap_or(height),
        width: shape.width.unwrap_or(width),
        channels: shape.channels.unwrap_or(channels),
        ..BenchConfig::default()
    };
    if let Some(len) = shape.seq_len {
        cfg.set_seq_len(len)?;
    }
    Ok((cfg.height, cfg.width, cfg.channels))
}

fn write_to(path: Option<&PathBuf>, out: &mut dyn Write, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut file = std::fs::File::create(p).map_err(|e| BenchError::io(p, e))?;
            f(&mut file)
        }
        None => f(out),
    }
}

fn sweep(args: SweepArgs, out: &mut dyn Write) -> Result<()> {
    let defaults = BenchConfig::default();
    let (height, width, channels) = resolve_shape(&args.shape, defaults.height, defaults.width, defaults.channels)?;
    let cfg = BenchConfig {
        state_dim: args.state_dim,
        ratios: args.ratios.unwrap_or_else(|| ABLATION_RATIOS.to_vec()),
        height,
        width,
        channels,
        trials: args.trials,
        warmup: args.warmup,
        seed: args.seed,
        out: args.out.clone(),
    };
    let records = run_rank_sweep_repeated(&cfg, args.repeats)?;
    write_to(args.out.as_ref(), out, |w| write_csv(&records, w))
}

fn distill(args: DistillArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let defaults = DistillConfig::default();
    let (height, width, channels) =
        resolve_shape(&args.shape, defaults.height, defaults.width, defaults.channels)?;
    let ratio = args.ratios.as_ref().and_then(|r| r.first().copied()).unwrap_or(0.5);
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(BenchError::Config(format!("rank ratio {ratio} outside (0, 1]")));
    }
    let cfg = DistillConfig {
        state_dim: args.state_dim,
        rank: rank_for_ratio(ratio, args.state_dim),
        height,
        width,
        channels,
        grid: (defaults.grid.0.min(height), defaults.grid.1.min(width)),
        steps: args.steps,
        learning_rate: args.lr,
        seed: args.seed,
        ..defaults
    };
    let run = distill_train(&cfg)?;
    if let (Some(first), Some(last)) = (run.log.initial(), run.log.last()) {
        let _ = writeln!(
            err,
            "rank {} of {}: total loss {:.6} -> {:.6}",
            cfg.rank, cfg.state_dim, first.total, last.total
        );
    }
    if let Some(path) = &args.model {
        let model = Model {
            layer: run.student.layer()?,
            head: Some(run.teacher.head().clone()),
            probe: None,
        };
        save_model(&model, path)?;
    }
    write_to(args.out.as_ref(), out, |w| write_log_csv(&run.log, w))
}

fn eval(dets: &PathBuf, gts: &PathBuf, out: &mut dyn Write) -> Result<()> {
    let read = |p: &PathBuf| std::fs::read_to_string(p).map_err(|e| BenchError::io(p, e));
    let dets = parse_detections(&read(dets)?)?;
    let gts = parse_ground_truth(&read(gts)?)?;
    let classes = dets.iter().map(|d| d.class_id).chain(gts.iter().map(|g| g.class_id)).max().map_or(0, |m| m + 1);
    writeln!(out, "{:.4}", map50(&dets, &gts, classes)).map_err(|e| BenchError::io("<stdout>", e))
}

/// Parses `args` (including the program name) and runs the command. Returns
/// the process exit code: 0 on success, 1 on failure, 2 on usage errors.
pub fn cli_main<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Sweep(a) => sweep(a, out),
        Command::Distill(a) => distill(a, out, err),
        Command::Eval { detections, ground_truth } => eval(&detections, &ground_truth, out),
        Command::Selfcheck { seed } => {
            let checks = selfcheck(seed);
            let _ = write!(out, "{}", format_report(&checks));
            if checks.iter().all(|c| c.passed) {
                Ok(())
            } else {
                return 1;
            }
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}
