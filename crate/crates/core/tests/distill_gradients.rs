use lowrank_ss2d::distill::{
    distill_loss, distill_train, grad_distill, DistillConfig, DistillWeights, Student, StudentInit, Teacher,
};
use lowrank_ss2d::numlin::{Matrix, Rng};
use lowrank_ss2d::ss2d::FeatureMap;

const STEP: f64 = 1e-5;

fn agrees(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-8f64.max(1e-4 * analytic.abs().max(numeric.abs()))
}

/// Central difference of `f` with respect to every entry of the matrix
/// selected by `pick`.
fn numeric_grad(student: &Student, pick: impl Fn(&mut Student) -> &mut Matrix, f: impl Fn(&Student) -> f64) -> Vec<f64> {
    let len = pick(&mut student.clone()).data().len();
    (0..len)
        .map(|i| {
            let mut plus = student.clone();
            pick(&mut plus).data_mut()[i] += STEP;
            let mut minus = student.clone();
            pick(&mut minus).data_mut()[i] -= STEP;
            (f(&plus) - f(&minus)) / (2.0 * STEP)
        })
        .collect()
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let w = DistillWeights::default();
    for seed in 0..20u64 {
        let mut rng = Rng::new(1000 + seed);
        let n = 2 + rng.below(7);
        let r = 1 + rng.below(n.min(4));
        let h = 1 + rng.below(4);
        let width = 2 + rng.below(16 / h - 1).min(2);
        let c = 1 + rng.below(2);
        let teacher = Teacher::random(n, c, 2, (1, 2), &mut rng);
        let mut student = Student::from_teacher(&teacher, r, StudentInit::Random(0.3), &mut rng).unwrap();
        for v in student.projection_mut().matrix_mut().data_mut() {
            *v += 0.1 * rng.normal();
        }
        let targets = teacher.targets(r).unwrap();
        let samples: Vec<_> = (0..2)
            .map(|_| teacher.sample(FeatureMap::random(h, width, c, 1.0, &mut rng)).unwrap())
            .collect();
        let f = |s: &Student| distill_loss(s, &teacher, &targets, &samples, &w).unwrap().total;
        let (g, _) = grad_distill(&student, &teacher, &targets, &samples, &w).unwrap();

        for k in 0..student.num_systems() {
            let du = numeric_grad(&student, |s| s.u_mut(k), f);
            let dv = numeric_grad(&student, |s| s.v_mut(k), f);
            for (a, e) in g.d_u[k].data().iter().zip(&du).chain(g.d_v[k].data().iter().zip(&dv)) {
                assert!(agrees(*a, *e), "seed {seed} system {k}: {a} vs {e}");
            }
        }
        let dp = numeric_grad(&student, |s| s.projection_mut().matrix_mut(), f);
        for (a, e) in g.d_p.data().iter().zip(&dp) {
            assert!(agrees(*a, *e), "seed {seed} P: {a} vs {e}");
        }
    }
}

#[test]
fn convergence_baseline() {
    let cfg = DistillConfig::default();
    assert_eq!((cfg.state_dim, cfg.rank, cfg.learning_rate, cfg.steps, cfg.seed), (8, 4, 1e-2, 500, 0));
    let run = distill_train(&cfg).unwrap();
    let first = run.log.initial().unwrap().total;
    let last = run.log.last().unwrap().total;
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn lossless_at_full_rank() {
    let cfg = DistillConfig {
        rank: 8,
        init: StudentInit::Svd,
        steps: 1,
        ..DistillConfig::default()
    };
    let run = distill_train(&cfg).unwrap();
    assert!(run.log.initial().unwrap().distillation(&cfg.weights) < 1e-10);
}

#[test]
fn runs_are_reproducible() {
    let cfg = DistillConfig {
        steps: 30,
        ..DistillConfig::default()
    };
    assert_eq!(distill_train(&cfg).unwrap().log, distill_train(&cfg).unwrap().log);
}
