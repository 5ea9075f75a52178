//! Seeded correctness checks, each comparing a library routine against an
//! independent reference. Reports carry no timings, so the same seed always
//! yields the same text.

use std::fmt;
use std::path::Path;

use lowrank_ss2d::detect::{map50, BBox, Detection, GroundTruthBox};
use lowrank_ss2d::distill::{
    distill_loss, distill_train, grad_distill, DistillConfig, DistillWeights, Student, StudentInit, Teacher,
};
use lowrank_ss2d::lowrank::{init_from_teacher, lowrank_scan, rank_for_ratio, transition_param_count};
use lowrank_ss2d::numlin::{svd, truncate_svd, Matrix, Rng};
use lowrank_ss2d::ss2d::{flatten_path, gather, scatter, FeatureMap, ScanDirection, Ss2dLayer};
use lowrank_ss2d::ssm::{discretize_zoh, scan_1d, ContinuousSsm, DiscreteSsm};

use crate::model::{load_model, model_from_bytes, model_to_bytes, save_model, Model};
use crate::oracle::{brute_force_ss2d, dense_recurrence, max_abs_diff, metric_instance, oracle_map, oracle_order};
use crate::output::{write_csv, CSV_HEADER};
use crate::sweep::{BenchRecord, ABLATION_RATIOS};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn failed(name: &'static str, e: impl fmt::Display) -> Check {
    Check::new(name, false, format!("error: {e}"))
}

fn stable_teacher(n: usize, rng: &mut Rng) -> DiscreteSsm {
    let ssm = ContinuousSsm::teacher_init(n, rng);
    let step = rng.uniform(0.1, 1.0);
    discretize_zoh(&ssm, step).expect("positive step")
}

/// Low-rank scan against the dense scan of the materialized `UVᵀ` and a
/// textbook recurrence, per element within `tol`.
pub fn scan_equivalence(instances: usize, max_n: usize, max_len: usize, tol: f64, seed: u64) -> Check {
    const NAME: &str = "scan_equivalence";
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = 1 + rng.below(max_n);
        let r = 1 + rng.below(n);
        let len = 1 + rng.below(max_len);
        let d = stable_teacher(n, &mut rng);
        let t = match init_from_teacher(d.a_bar(), r) {
            Ok(t) => t,
            Err(e) => return failed(NAME, e),
        };
        let x = rng.normal_vec(len, 1.0);
        let low = match lowrank_scan(&t, d.b_bar(), d.c(), &x, None) {
            Ok(tr) => tr,
            Err(e) => return failed(NAME, e),
        };
        let dense = DiscreteSsm::new(t.materialize(), d.b_bar().clone(), d.c().clone()).expect("same shapes");
        let full = scan_1d(&dense, &x, None);
        let (ref_states, ref_ys) = dense_recurrence(dense.a_bar(), dense.b_bar(), dense.c(), &x);
        let flat: Vec<f64> = ref_states.concat();
        worst = worst
            .max(max_abs_diff(low.flat_states(), full.flat_states()))
            .max(max_abs_diff(low.outputs(), full.outputs()))
            .max(max_abs_diff(low.flat_states(), &flat))
            .max(max_abs_diff(low.outputs(), &ref_ys));
    }
    Check::new(
        NAME,
        worst <= tol,
        format!("{instances} instances (N <= {max_n}, L <= {max_len}), max |diff| {worst:.3e} (tol {tol:e})"),
    )
}

fn frob_diff(a: &Matrix, u: &Matrix, v: &Matrix) -> f64 {
    let approx = u.matmul(&v.transpose()).expect("conformable");
    a.sub(&approx).expect("same shape").frobenius_norm()
}

/// Truncated SVD error equals the singular-value tail and is no larger than
/// that of any random rank-`r` competitor.
pub fn eckart_young(instances: usize, competitors: usize, seed: u64) -> Check {
    const NAME: &str = "eckart_young";
    let mut rng = Rng::new(seed);
    let mut worst_tail: f64 = 0.0;
    let mut beaten = 0usize;
    for _ in 0..instances {
        let m = 2 + rng.below(7);
        let n = 2 + rng.below(7);
        let a = rng.normal_matrix(m, n, 1.0);
        let r = 1 + rng.below(m.min(n));
        let s = match svd(&a) {
            Ok(s) => s,
            Err(e) => return failed(NAME, e),
        };
        let (ur, vr) = truncate_svd(&s, r).expect("rank in range");
        let err = frob_diff(&a, &ur, &vr);
        let tail = s.sigma[r..].iter().map(|x| x * x).sum::<f64>().sqrt();
        worst_tail = worst_tail.max((err - tail).abs());
        for k in 0..competitors {
            let (cu, cv) = if k % 2 == 0 {
                let scale = (a.frobenius_norm() / (m * n) as f64).sqrt();
                (rng.normal_matrix(m, r, scale), rng.normal_matrix(n, r, scale))
            } else {
                let eps = 10f64.powi(-(1 + rng.below(6) as i32));
                let mut cu = ur.clone();
                cu.axpy(eps, &rng.normal_matrix(m, r, 1.0)).expect("same shape");
                let mut cv = vr.clone();
                cv.axpy(eps, &rng.normal_matrix(n, r, 1.0)).expect("same shape");
                (cu, cv)
            };
            if frob_diff(&a, &cu, &cv) < err - 1e-12 {
                beaten += 1;
            }
        }
    }
    Check::new(
        NAME,
        worst_tail <= 1e-8 && beaten == 0,
        format!(
            "{instances} instances x {competitors} competitors, {beaten} beat the SVD, max |err - tail| {worst_tail:.3e}"
        ),
    )
}

/// Analytic gradients of the distillation objective against central
/// differences, relative tolerance `rel` with a `1e-8` absolute floor.
pub fn gradients(instances: usize, rel: f64, seed: u64) -> Check {
    const NAME: &str = "gradients";
    const STEP: f64 = 1e-5;
    let w = DistillWeights::default();
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    let mut entries = 0usize;
    let mut bad = 0usize;
    for _ in 0..instances {
        let n = 2 + rng.below(7);
        let r = 1 + rng.below(n.min(4));
        let h = 1 + rng.below(4);
        let width = 2 + rng.below(16 / h - 1).min(2);
        let c = 1 + rng.below(2);
        let teacher = Teacher::random(n, c, 2, (1, 2), &mut rng);
        let mut student = match Student::from_teacher(&teacher, r, StudentInit::Random(0.3), &mut rng) {
            Ok(s) => s,
            Err(e) => return failed(NAME, e),
        };
        for v in student.projection_mut().matrix_mut().data_mut() {
            *v += 0.1 * rng.normal();
        }
        let targets = teacher.targets(r).expect("rank in range");
        let samples = match (0..2)
            .map(|_| teacher.sample(FeatureMap::random(h, width, c, 1.0, &mut rng)))
            .collect::<lowrank_ss2d::Result<Vec<_>>>()
        {
            Ok(s) => s,
            Err(e) => return failed(NAME, e),
        };
        let f = |s: &Student| distill_loss(s, &teacher, &targets, &samples, &w).map(|l| l.total).unwrap_or(f64::NAN);
        let (g, _) = match grad_distill(&student, &teacher, &targets, &samples, &w) {
            Ok(g) => g,
            Err(e) => return failed(NAME, e),
        };
        let mut compare = |analytic: &Matrix, pick: &dyn Fn(&mut Student) -> &mut Matrix| {
            for (i, a) in analytic.data().iter().enumerate() {
                let mut plus = student.clone();
                pick(&mut plus).data_mut()[i] += STEP;
                let mut minus = student.clone();
                pick(&mut minus).data_mut()[i] -= STEP;
                let e = (f(&plus) - f(&minus)) / (2.0 * STEP);
                let err = (a - e).abs() / a.abs().max(e.abs()).max(1e-8 / rel);
                worst = worst.max(err);
                entries += 1;
                if err.is_nan() || err > rel {
                    bad += 1;
                }
            }
        };
        for k in 0..student.num_systems() {
            compare(&g.d_u[k], &|s| s.u_mut(k));
            compare(&g.d_v[k], &|s| s.v_mut(k));
        }
        compare(&g.d_p, &|s| s.projection_mut().matrix_mut());
    }
    Check::new(
        NAME,
        bad == 0,
        format!("{instances} instances, {entries} entries, {bad} outside tolerance, max rel err {worst:.3e}"),
    )
}

/// Full-rank SVD student: the distillation terms at step 0 vanish.
pub fn lossless_full_rank(state_dim: usize, seed: u64) -> Check {
    const NAME: &str = "lossless_full_rank";
    let cfg = DistillConfig {
        state_dim,
        rank: state_dim,
        init: StudentInit::Svd,
        steps: 1,
        learning_rate: 0.0,
        seed,
        ..DistillConfig::default()
    };
    match distill_train(&cfg) {
        Ok(run) => {
            let loss = run.log.initial().expect("initial record").distillation(&cfg.weights);
            Check::new(NAME, loss < 1e-10, format!("N = r = {state_dim}, initial distillation loss {loss:.3e}"))
        }
        Err(e) => failed(NAME, e),
    }
}

/// Default distillation run: final total below half the initial total.
pub fn convergence(cfg: &DistillConfig) -> Check {
    const NAME: &str = "convergence";
    match distill_train(cfg) {
        Ok(run) => {
            let first = run.log.initial().expect("initial record").total;
            let last = run.log.last().expect("final record").total;
            Check::new(
                NAME,
                last < 0.5 * first,
                format!(
                    "N={}, r={}, lr={:e}, {} steps: total {first:.6} -> {last:.6} (ratio {:.4})",
                    cfg.state_dim,
                    cfg.rank,
                    cfg.learning_rate,
                    cfg.steps,
                    last / first
                ),
            )
        }
        Err(e) => failed(NAME, e),
    }
}

/// Transition parameter counts against `2 N max(1, round(ρN))`.
pub fn parameter_accounting(dims: &[usize], ratios: &[f64]) -> Check {
    const NAME: &str = "parameter_accounting";
    let mut cases = 0;
    let mut wrong = Vec::new();
    for &n in dims {
        for &rho in ratios {
            let r = ((rho * n as f64).round() as usize).max(1);
            let (full, low) = transition_param_count(n, rank_for_ratio(rho, n));
            let saves = (low as f64 / full as f64) < 1.0;
            if full != n * n || low != 2 * n * r || saves != ((r as f64) < n as f64 / 2.0) {
                wrong.push(format!("N={n} ratio={rho}"));
            }
            cases += 1;
        }
    }
    Check::new(NAME, wrong.is_empty(), format!("{cases} (N, ratio) cases, mismatches: [{}]", wrong.join(", ")))
}

fn metric_hand_cases() -> Vec<(&'static str, f64, f64)> {
    let g = GroundTruthBox::new(BBox::new(0.1, 0.1, 0.4, 0.4).expect("valid"), 0).expect("valid");
    let perfect = Detection::new(g.bbox, 0, 0.9).expect("valid");
    let fp = Detection::new(BBox::new(0.6, 0.6, 0.9, 0.9).expect("valid"), 0, 0.8).expect("valid");
    vec![
        ("perfect", map50(&[perfect], &[g], 1), 1.0),
        ("empty", map50(&[], &[g], 1), 0.0),
        ("two-detection", map50(&[perfect, fp], &[g], 1), 1.0),
    ]
}

/// mAP50 against the exhaustive oracle on random small instances, plus the
/// hand-computed cases at 4 decimals.
pub fn metric_oracle(instances: usize, seed: u64) -> Check {
    const NAME: &str = "metric_oracle";
    let mut rng = Rng::new(seed);
    let mut mismatches = 0;
    for _ in 0..instances {
        let (dets, gts, classes) = metric_instance(&mut rng);
        if map50(&dets, &gts, classes) != oracle_map(&dets, &gts, classes) {
            mismatches += 1;
        }
    }
    let hand: Vec<String> = metric_hand_cases()
        .into_iter()
        .filter(|(_, got, want)| format!("{got:.4}") != format!("{want:.4}"))
        .map(|(name, got, _)| format!("{name}={got:.4}"))
        .collect();
    Check::new(
        NAME,
        mismatches == 0 && hand.is_empty(),
        format!("{instances} instances, {mismatches} mismatches; hand cases failing: [{}]", hand.join(", ")),
    )
}

/// Path bijectivity, scatter/gather identity, brute-force forward agreement
/// (full and rank-2 layers) and transpose symmetry for every `H, W <= max_hw`.
pub fn ss2d_geometry(max_hw: usize, tol: f64, seed: u64) -> Check {
    const NAME: &str = "ss2d_geometry";
    let mut rng = Rng::new(seed);
    let mut problems = Vec::new();
    let mut worst: f64 = 0.0;
    for h in 1..=max_hw {
        for w in 1..=max_hw {
            let f = FeatureMap::random(h, w, 2, 1.0, &mut rng);
            for dir in ScanDirection::ALL {
                let path = flatten_path(h, w, dir);
                let mut seen = vec![false; h * w];
                let mut bijective = path.len() == h * w;
                for &(r, c) in &path {
                    bijective &= r < h && c < w && !std::mem::replace(&mut seen[r * w + c], true);
                }
                if !bijective || path != oracle_order(h, w, dir) {
                    problems.push(format!("path {h}x{w} {dir:?}"));
                }
                let mut g = FeatureMap::zeros(h, w, 2);
                for ch in 0..2 {
                    scatter(&mut g, &path, ch, &gather(&f, &path, ch));
                }
                if g != f {
                    problems.push(format!("scatter {h}x{w} {dir:?}"));
                }
            }
            let layer = Ss2dLayer::random_teacher(3, 2, &mut rng);
            let student = match layer.compress(2) {
                Ok(s) => s,
                Err(e) => return failed(NAME, e),
            };
            for l in [&layer, &student] {
                let out = match l.forward(&f) {
                    Ok(o) => o,
                    Err(e) => return failed(NAME, e),
                };
                let oracle = brute_force_ss2d(&f, l).expect("no selective systems");
                worst = worst.max(max_abs_diff(out.data(), oracle.data()));
                let direct = out.transpose();
                let swapped = l.swap_row_col().forward(&f.transpose()).expect("same channels");
                worst = worst.max(max_abs_diff(direct.data(), swapped.data()));
            }
        }
    }
    Check::new(
        NAME,
        problems.is_empty() && worst <= tol,
        format!(
            "H, W <= {max_hw}, max |forward - oracle| and transpose diff {worst:.3e}, problems: [{}]",
            problems.join(", ")
        ),
    )
}

/// Zero-order hold against closed forms: a diagonal system and a rotation
/// generator `[[0, w], [-w, 0]]`.
pub fn zoh(seed: u64) -> Check {
    const NAME: &str = "zoh";
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = 1 + rng.below(6);
        let lambda: Vec<f64> = (0..n).map(|_| rng.uniform(0.1, 3.0)).collect();
        let b = rng.normal_matrix(n, 1, 1.0);
        let step = rng.uniform(0.01, 2.0);
        let a = Matrix::diag(&lambda.iter().map(|l| -l).collect::<Vec<_>>());
        let ssm = ContinuousSsm::new(a, b.clone(), Matrix::zeros(1, n)).expect("shapes");
        let d = match discretize_zoh(&ssm, step) {
            Ok(d) => d,
            Err(e) => return failed(NAME, e),
        };
        for i in 0..n {
            let e = (-lambda[i] * step).exp();
            let bb = (1.0 - e) / lambda[i] * b[(i, 0)];
            worst = worst.max((d.a_bar()[(i, i)] - e).abs()).max((d.b_bar()[(i, 0)] - bb).abs());
            for j in 0..n {
                if i != j {
                    worst = worst.max(d.a_bar()[(i, j)].abs());
                }
            }
        }

        let om = rng.uniform(0.2, 2.0);
        let a = Matrix::from_rows(&[[0.0, om], [-om, 0.0]]);
        let b = rng.normal_matrix(2, 1, 1.0);
        let ssm = ContinuousSsm::new(a, b.clone(), Matrix::zeros(1, 2)).expect("shapes");
        let d = discretize_zoh(&ssm, step).expect("positive step");
        let (s, c) = (om * step).sin_cos();
        let expect_a = [[c, s], [-s, c]];
        // A^{-1} (Ā - I) B with A^{-1} = [[0, -1/w], [1/w, 0]]
        let m = [[c - 1.0, s], [-s, c - 1.0]];
        let mb = [m[0][0] * b[(0, 0)] + m[0][1] * b[(1, 0)], m[1][0] * b[(0, 0)] + m[1][1] * b[(1, 0)]];
        let expect_b = [-mb[1] / om, mb[0] / om];
        for i in 0..2 {
            worst = worst.max((d.b_bar()[(i, 0)] - expect_b[i]).abs());
            for j in 0..2 {
                worst = worst.max((d.a_bar()[(i, j)] - expect_a[i][j]).abs());
            }
        }
    }
    Check::new(NAME, worst <= 1e-12, format!("40 systems, max |diff| vs closed form {worst:.3e}"))
}

/// Model save/load bit-exactness (through `dir` when given, in memory
/// otherwise) and the CSV schema width.
pub fn serialization(models: usize, dir: Option<&Path>, seed: u64) -> Check {
    const NAME: &str = "serialization";
    let mut rng = Rng::new(seed);
    let mut mismatched = 0;
    for i in 0..models {
        let n = 1 + rng.below(6);
        let c = 1 + rng.below(2);
        let r = 1 + rng.below(n);
        let model = match Model::random(n, c, r, &mut rng) {
            Ok(m) => m,
            Err(e) => return failed(NAME, e),
        };
        let back = match dir {
            Some(d) => {
                let path = d.join(format!("model_{i}.lrm"));
                save_model(&model, &path).and_then(|_| load_model(&path))
            }
            None => model_from_bytes(&model_to_bytes(&model)),
        };
        match back {
            Ok(b) if model_to_bytes(&b) == model_to_bytes(&model) && b == model => {}
            Ok(_) => mismatched += 1,
            Err(e) => return failed(NAME, e),
        }
    }
    let record = BenchRecord {
        rank_ratio: 0.5,
        rank: 8,
        params_full: 256,
        params_low: 256,
        latency_full_us: 1.0,
        latency_full_sd: 0.1,
        latency_low_us: 0.5,
        latency_low_sd: 0.05,
        speedup: 2.0,
    };
    let mut buf = Vec::new();
    let widths: Vec<usize> = match write_csv(&[record], &mut buf) {
        Ok(()) => String::from_utf8_lossy(&buf).lines().map(|l| l.split(',').count()).collect(),
        Err(e) => return failed(NAME, e),
    };
    let csv_ok = widths == [CSV_HEADER.len(), CSV_HEADER.len()] && CSV_HEADER.len() == 9;
    Check::new(
        NAME,
        mismatched == 0 && csv_ok,
        format!("{models} models, {mismatched} not bit-identical; CSV row widths {widths:?}"),
    )
}

/// The check list run by `selfcheck`, sized to finish in a few seconds.
pub fn selfcheck(seed: u64) -> Vec<Check> {
    let s = |k: u64| seed.wrapping_mul(1000).wrapping_add(k);
    vec![
        scan_equivalence(50, 32, 64, 1e-12, s(1)),
        eckart_young(200, 20, s(2)),
        gradients(3, 1e-4, s(3)),
        lossless_full_rank(8, s(4)),
        parameter_accounting(&[16, 32, 64, 128, 256], &[ABLATION_RATIOS.as_slice(), &[0.25, 1.0]].concat()),
        metric_oracle(2000, s(5)),
        ss2d_geometry(6, 1e-12, s(6)),
        serialization(10, None, s(7)),
        zoh(s(8)),
    ]
}

pub fn format_report(checks: &[Check]) -> String {
    let mut out: String = checks.iter().map(|c| format!("{c}\n")).collect();
    let passed = checks.iter().filter(|c| c.passed).count();
    out.push_str(&format!("{passed}/{} checks passed\n", checks.len()));
    out
}
