//! Structure-aware distillation of a full-rank SS2D teacher into a low-rank
//! student: the three alignment losses, the state projection, the weighted
//! objective, its analytic gradient and a plain gradient-descent loop.

mod train;

pub use train::{
    distill_loss, distill_train, grad_distill, train, DistillConfig, DistillRun, GradientBundle, LogRecord,
    LossBreakdown, Sample, Student, StudentInit, Teacher, TrainingLog,
};

use crate::error::{Error, Result};
use crate::numlin::{svd, truncate_svd, Matrix, Rng};
use crate::ss2d::FeatureMap;
use crate::ssm::StateTrajectory;

/// Maps teacher hidden states (`N_t`) into the student state space (`N_s`).
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    p: Matrix,
}

impl Projection {
    pub fn new(p: Matrix) -> Self {
        Self { p }
    }

    /// Identity block padded with zeros. When the two dimensions differ a
    /// seeded `N(0, 0.01²)` perturbation is added; for equal dimensions the
    /// projection starts as the exact identity.
    pub fn init(student_dim: usize, teacher_dim: usize, rng: &mut Rng) -> Self {
        let mut p = Matrix::zeros(student_dim, teacher_dim);
        for i in 0..student_dim.min(teacher_dim) {
            p[(i, i)] = 1.0;
        }
        if student_dim != teacher_dim {
            for v in p.data_mut() {
                *v += 0.01 * rng.normal();
            }
        }
        Self { p }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.p
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.p
    }

    pub fn student_dim(&self) -> usize {
        self.p.rows()
    }

    pub fn teacher_dim(&self) -> usize {
        self.p.cols()
    }

    pub fn apply(&self, h: &[f64]) -> Result<Vec<f64>> {
        self.p.matvec(h)
    }
}

/// `λ1..λ4` weighting task, SVD, state and feature losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistillWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
}

impl DistillWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64, lambda4: f64) -> Result<Self> {
        let w = Self {
            lambda1,
            lambda2,
            lambda3,
            lambda4,
        };
        if w.as_array().iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::arg(format!("loss weights must be non-negative, got {:?}", w.as_array())));
        }
        Ok(w)
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0).expect("zero weights")
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.lambda1, self.lambda2, self.lambda3, self.lambda4]
    }
}

impl Default for DistillWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.5,
            lambda3: 0.1,
            lambda4: 1.5,
        }
    }
}

/// Frozen rank-`r` factor targets of one teacher transition.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillTargets {
    u_target: Matrix,
    v_target: Matrix,
}

impl DistillTargets {
    /// `(U √Σ)_{1:r}` and `(V √Σ)_{1:r}` of the teacher's `Ā`.
    pub fn from_teacher(a_bar: &Matrix, r: usize) -> Result<Self> {
        let (u_target, v_target) = truncate_svd(&svd(a_bar)?, r)?;
        Ok(Self { u_target, v_target })
    }

    pub fn new(u_target: Matrix, v_target: Matrix) -> Result<Self> {
        if u_target.shape() != v_target.shape() {
            return Err(Error::shape("DistillTargets::new", u_target.shape_str(), v_target.shape_str()));
        }
        Ok(Self { u_target, v_target })
    }

    pub fn u_target(&self) -> &Matrix {
        &self.u_target
    }

    pub fn v_target(&self) -> &Matrix {
        &self.v_target
    }
}

fn sq_dist(a: &Matrix, b: &Matrix, op: &'static str) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape_str(), b.shape_str()));
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// `‖U_s − U_t‖²_F + ‖V_s − V_t‖²_F`.
pub fn loss_svd(u_s: &Matrix, v_s: &Matrix, targets: &DistillTargets) -> Result<f64> {
    Ok(sq_dist(u_s, &targets.u_target, "loss_svd")? + sq_dist(v_s, &targets.v_target, "loss_svd")?)
}

/// `(1/L) Σ_t MSE(h_s(t), P h_t(t))`.
pub fn loss_state(h_student: &StateTrajectory, h_teacher: &StateTrajectory, p: &Projection) -> Result<f64> {
    if h_student.len() != h_teacher.len() {
        return Err(Error::arg(format!(
            "trajectory lengths differ: student {} vs teacher {}",
            h_student.len(),
            h_teacher.len()
        )));
    }
    if p.student_dim() != h_student.state_dim() || p.teacher_dim() != h_teacher.state_dim() {
        return Err(Error::shape(
            "loss_state",
            p.matrix().shape_str(),
            format!("{}x{}", h_student.state_dim(), h_teacher.state_dim()),
        ));
    }
    if h_student.is_empty() {
        return Ok(0.0);
    }
    let n = h_student.state_dim() as f64;
    let mut total = 0.0;
    for (hs, ht) in h_student.states().zip(h_teacher.states()) {
        let proj = p.apply(ht)?;
        total += hs.iter().zip(&proj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    }
    Ok(total / h_student.len() as f64)
}

/// Unnormalized squared distance `‖Y_t − Y_s‖²`.
pub fn loss_feat(y_teacher: &FeatureMap, y_student: &FeatureMap) -> Result<f64> {
    if y_teacher.dims() != y_student.dims() {
        return Err(Error::shape("loss_feat", y_teacher.dims_str(), y_student.dims_str()));
    }
    Ok(y_teacher
        .data()
        .iter()
        .zip(y_student.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

pub fn loss_total(task: f64, svd: f64, state: f64, feat: f64, w: &DistillWeights) -> Result<f64> {
    let parts = [task, svd, state, feat];
    if parts.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::arg(format!("loss components must be non-negative, got {parts:?}")));
    }
    Ok(w.lambda1 * task + w.lambda2 * svd + w.lambda3 * state + w.lambda4 * feat)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(states: &[&[f64]]) -> StateTrajectory {
        let n = states[0].len();
        let flat: Vec<f64> = states.iter().flat_map(|s| s.iter().copied()).collect();
        StateTrajectory::new(n, flat, vec![0.0; states.len()]).unwrap()
    }

    #[test]
    fn default_weights() {
        let w = DistillWeights::default();
        assert_eq!(w.as_array(), [1.0, 0.5, 0.1, 1.5]);
        assert!((loss_total(1.0, 1.0, 1.0, 1.0, &w).unwrap() - 3.1).abs() < 1e-15);
        assert_eq!(loss_total(0.0, 0.0, 0.0, 0.0, &w).unwrap(), 0.0);
        assert_eq!(loss_total(3.0, 2.0, 7.0, 1.0, &DistillWeights::zero()).unwrap(), 0.0);
        assert!(loss_total(-1.0, 0.0, 0.0, 0.0, &w).is_err());
        assert!(DistillWeights::new(1.0, -0.5, 0.0, 0.0).is_err());
    }

    #[test]
    fn total_is_linear_per_component() {
        let w = DistillWeights::default();
        let base = [0.3, 1.2, 0.7, 2.5];
        let f0 = loss_total(base[0], base[1], base[2], base[3], &w).unwrap();
        for (i, lam) in w.as_array().iter().enumerate() {
            let mut p = base;
            p[i] += 0.25;
            let f1 = loss_total(p[0], p[1], p[2], p[3], &w).unwrap();
            assert!((f1 - f0 - 0.25 * lam).abs() < 1e-14);
        }
    }

    #[test]
    fn svd_loss_cases() {
        let mut rng = Rng::new(5);
        let a = rng.normal_matrix(5, 5, 1.0);
        let t = DistillTargets::from_teacher(&a, 3).unwrap();
        let student = crate::lowrank::init_from_teacher(&a, 3).unwrap();
        assert!(loss_svd(student.u(), student.v(), &t).unwrap() <= 1e-20);

        let e = rng.normal_matrix(5, 3, 1.0);
        let e = e.scale(1.0 / e.frobenius_norm());
        let u = t.u_target().add(&e).unwrap();
        assert!((loss_svd(&u, t.v_target(), &t).unwrap() - 1.0).abs() < 1e-12);
        assert!(loss_svd(&Matrix::zeros(5, 2), t.v_target(), &t).is_err());
    }

    #[test]
    fn svd_loss_row_permutation_invariant() {
        let mut rng = Rng::new(6);
        let m: Vec<Matrix> = (0..4).map(|_| rng.normal_matrix(4, 2, 1.0)).collect();
        let perm = [2, 0, 3, 1];
        let permute = |a: &Matrix| {
            let rows: Vec<Vec<f64>> = perm.iter().map(|&i| a.row(i).to_vec()).collect();
            Matrix::from_rows(&rows)
        };
        let t = DistillTargets::new(m[2].clone(), m[3].clone()).unwrap();
        let tp = DistillTargets::new(permute(&m[2]), permute(&m[3])).unwrap();
        let l = loss_svd(&m[0], &m[1], &t).unwrap();
        let lp = loss_svd(&permute(&m[0]), &permute(&m[1]), &tp).unwrap();
        assert!((l - lp).abs() < 1e-12);
    }

    #[test]
    fn state_loss_cases() {
        let id = Projection::new(Matrix::identity(2));
        let a = traj(&[&[1.0, 2.0], &[3.0, -1.0]]);
        assert_eq!(loss_state(&a, &a, &id).unwrap(), 0.0);

        let hs = traj(&[&[1.0, 0.0]]);
        let ht = traj(&[&[0.0, 0.0]]);
        assert_eq!(loss_state(&hs, &ht, &id).unwrap(), 0.5);

        let b = traj(&[&[0.5, 2.0], &[3.0, 0.0]]);
        let aa = traj(&[&[1.0, 2.0], &[3.0, -1.0], &[1.0, 2.0], &[3.0, -1.0]]);
        let bb = traj(&[&[0.5, 2.0], &[3.0, 0.0], &[0.5, 2.0], &[3.0, 0.0]]);
        let l1 = loss_state(&a, &b, &id).unwrap();
        assert!((loss_state(&aa, &bb, &id).unwrap() - l1).abs() < 1e-15);

        assert!(loss_state(&a, &hs, &id).is_err());
    }

    #[test]
    fn state_loss_projects_teacher() {
        let hs = traj(&[&[1.0]]);
        let ht = traj(&[&[2.0, 5.0, -1.0]]);
        let p = Projection::new(Matrix::from_rows(&[[0.5, 0.0, 0.0]]));
        assert_eq!(loss_state(&hs, &ht, &p).unwrap(), 0.0);
        assert!(loss_state(&ht, &hs, &p).is_err());
    }

    #[test]
    fn feat_loss_cases() {
        let a = FeatureMap::random(3, 2, 2, 1.0, &mut Rng::new(7));
        assert_eq!(loss_feat(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.data_mut()[4] += 2.0;
        assert!((loss_feat(&a, &b).unwrap() - 4.0).abs() < 1e-12);
        assert!(loss_feat(&a, &FeatureMap::zeros(2, 3, 2)).is_err());
    }

    #[test]
    fn feat_loss_relaxed_triangle() {
        let mut rng = Rng::new(8);
        for _ in 0..200 {
            let [a, b, c] = [0, 1, 2].map(|_| FeatureMap::random(2, 3, 2, 1.0, &mut rng));
            let lhs = loss_feat(&a, &c).unwrap();
            let rhs = 2.0 * (loss_feat(&a, &b).unwrap() + loss_feat(&b, &c).unwrap());
            assert!(lhs <= rhs + 1e-12);
        }
    }

    #[test]
    fn projection_init() {
        let mut rng = Rng::new(9);
        assert_eq!(Projection::init(4, 4, &mut rng).matrix(), &Matrix::identity(4));
        let p = Projection::init(2, 3, &mut rng);
        assert_eq!(p.matrix().shape(), (2, 3));
        assert!((p.matrix()[(0, 0)] - 1.0).abs() < 0.1);
        assert!(p.matrix()[(0, 1)] != 0.0);
    }
}
