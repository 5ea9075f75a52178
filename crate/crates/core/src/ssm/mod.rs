//! Continuous-time state space models, zero-order-hold discretization and
//! the sequential 1-D recurrence.
//!
//! A model maps a scalar input sequence to a scalar output through an
//! `N`-dimensional hidden state:
//!
//! ```text
//! h'(t) = A h(t) + B x(t)        h_k = Ā h_{k-1} + B̄ x_k
//! y(t)  = C h(t)                 y_k = C h_k
//! ```
//!
//! Only the step size Δ is input dependent ([`SelectiveDelta`]); `B` and `C`
//! stay fixed.

mod scan;

pub(crate) use scan::scan_into;

pub use scan::{
    scan_1d, scan_1d_selective, scan_with, FullTransition, NoCount, OpCounter, StateTrajectory,
    Transition,
};

use crate::error::{Error, Result};
use crate::numlin::{dot, mat_exp, Matrix, Rng};

/// Continuous system `(A, B, C)` with `A: N x N`, `B: N x 1`, `C: 1 x N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousSsm {
    a: Matrix,
    b: Matrix,
    c: Matrix,
}

impl ContinuousSsm {
    pub fn new(a: Matrix, b: Matrix, c: Matrix) -> Result<Self> {
        let n = a.rows();
        if !a.is_square() {
            return Err(Error::shape("ContinuousSsm::new", a.shape_str(), "square A"));
        }
        if b.shape() != (n, 1) {
            return Err(Error::shape("ContinuousSsm::new", b.shape_str(), format!("B of {n}x1")));
        }
        if c.shape() != (1, n) {
            return Err(Error::shape("ContinuousSsm::new", c.shape_str(), format!("C of 1x{n}")));
        }
        Ok(Self { a, b, c })
    }

    /// Stable random teacher: `A = -diag(1..=N)/N + S` where `S` is a
    /// skew-symmetric perturbation with entries of scale 0.05. The symmetric
    /// part of `A` stays negative definite, so trajectories decay for any
    /// noise draw.
    pub fn teacher_init(n: usize, rng: &mut Rng) -> Self {
        const NOISE: f64 = 0.05;
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = -((i + 1) as f64) / n as f64;
            for j in i + 1..n {
                let e = NOISE * rng.normal();
                a[(i, j)] = e;
                a[(j, i)] = -e;
            }
        }
        let b = rng.normal_matrix(n, 1, 1.0);
        let c = rng.normal_matrix(1, n, 1.0 / (n as f64).sqrt());
        Self { a, b, c }
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }
}

/// Discretized system `(Ā, B̄, C)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSsm {
    a_bar: Matrix,
    b_bar: Matrix,
    c: Matrix,
}

impl DiscreteSsm {
    pub fn new(a_bar: Matrix, b_bar: Matrix, c: Matrix) -> Result<Self> {
        // same shape contract as the continuous system
        let checked = ContinuousSsm::new(a_bar, b_bar, c)?;
        Ok(Self {
            a_bar: checked.a,
            b_bar: checked.b,
            c: checked.c,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a_bar.rows()
    }

    pub fn a_bar(&self) -> &Matrix {
        &self.a_bar
    }

    pub fn b_bar(&self) -> &Matrix {
        &self.b_bar
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }
}

/// Zero-order-hold discretization with step `delta`.
///
/// Both factors come from one exponential of the augmented matrix
/// `Δ [[A, B], [0, 0]]`: its top-left block is `exp(ΔA)` and its top-right
/// column is `(∫_0^Δ exp(sA) ds) B`, which equals
/// `(ΔA)^{-1} (exp(ΔA) - I) ΔB` whenever `A` is invertible and stays
/// well-defined when it is not.
pub fn discretize_zoh(ssm: &ContinuousSsm, delta: f64) -> Result<DiscreteSsm> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::arg(format!("discretization step must be positive, got {delta}")));
    }
    let n = ssm.state_dim();
    let mut aug = Matrix::zeros(n + 1, n + 1);
    for i in 0..n {
        for j in 0..n {
            aug[(i, j)] = delta * ssm.a[(i, j)];
        }
        aug[(i, n)] = delta * ssm.b[(i, 0)];
    }
    let e = mat_exp(&aug)?;
    Ok(DiscreteSsm {
        a_bar: e.block(0, 0, n, n),
        b_bar: e.block(0, n, n, 1),
        c: ssm.c.clone(),
    })
}

/// Input-dependent step size `Δ(x) = softplus(w · x + bias)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectiveDelta {
    w: Matrix,
    bias: f64,
}

impl SelectiveDelta {
    pub fn new(w: Matrix, bias: f64) -> Result<Self> {
        if w.rows() != 1 {
            return Err(Error::shape("SelectiveDelta::new", w.shape_str(), "1 x D_in"));
        }
        if !bias.is_finite() {
            return Err(Error::arg("selective bias must be finite"));
        }
        Ok(Self { w, bias })
    }

    /// Input-independent Δ with value `softplus(bias)`.
    pub fn constant(input_dim: usize, bias: f64) -> Self {
        Self::new(Matrix::zeros(1, input_dim), bias).expect("valid constant delta")
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        selective_delta(self, x)
    }
}

pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Strictly positive step for token `x`; underflow is clamped to the
/// smallest positive normal.
pub fn selective_delta(sd: &SelectiveDelta, x: &[f64]) -> f64 {
    assert_eq!(x.len(), sd.input_dim(), "token length must match the delta weight");
    softplus(dot(sd.w.data(), x) + sd.bias).max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numlin::mat_mul;

    fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    /// `(ΔA)^{-1}(exp(ΔA) - I)ΔB` via Gaussian elimination with partial
    /// pivoting.
    fn direct_b_bar(a: &Matrix, b: &Matrix, delta: f64) -> Matrix {
        let n = a.rows();
        let da = a.scale(delta);
        let rhs = mat_mul(&mat_exp(&da).unwrap().sub(&Matrix::identity(n)).unwrap(), &b.scale(delta)).unwrap();
        let mut m = da.clone();
        let mut x = rhs.col(0);
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| m[(i, k)].abs().total_cmp(&m[(j, k)].abs())).unwrap();
            for j in 0..n {
                let t = m[(k, j)];
                m[(k, j)] = m[(p, j)];
                m[(p, j)] = t;
            }
            x.swap(k, p);
            for i in k + 1..n {
                let f = m[(i, k)] / m[(k, k)];
                for j in k..n {
                    m[(i, j)] -= f * m[(k, j)];
                }
                x[i] -= f * x[k];
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..n {
                s -= m[(k, j)] * x[j];
            }
            x[k] = s / m[(k, k)];
        }
        Matrix::column(&x)
    }

    #[test]
    fn near_zero_a_limit() {
        let mut rng = Rng::new(9);
        let a = rng.normal_matrix(3, 3, 1.0);
        let a = a.scale(1e-8 / a.frobenius_norm());
        let b = rng.normal_matrix(3, 1, 1.0);
        let c = rng.normal_matrix(1, 3, 1.0);
        let ssm = ContinuousSsm::new(a, b.clone(), c).unwrap();
        let d = discretize_zoh(&ssm, 0.5).unwrap();
        assert!(max_abs_diff(d.a_bar(), &Matrix::identity(3)) < 1e-6);
        assert!(max_abs_diff(d.b_bar(), &b.scale(0.5)) < 1e-6);
    }

    #[test]
    fn scalar_closed_form() {
        let ssm = ContinuousSsm::new(
            Matrix::from_rows(&[[1.0]]),
            Matrix::from_rows(&[[1.0]]),
            Matrix::from_rows(&[[1.0]]),
        )
        .unwrap();
        let d = discretize_zoh(&ssm, std::f64::consts::LN_2).unwrap();
        assert!((d.a_bar()[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((d.b_bar()[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn augmented_matches_direct_formula() {
        let mut rng = Rng::new(10);
        for _ in 0..10 {
            let ssm = ContinuousSsm::teacher_init(4, &mut rng);
            let delta = rng.uniform(0.1, 1.5);
            let d = discretize_zoh(&ssm, delta).unwrap();
            let want = direct_b_bar(ssm.a(), ssm.b(), delta);
            assert!(max_abs_diff(d.b_bar(), &want) < 1e-9);
            assert!(max_abs_diff(d.a_bar(), &mat_exp(&ssm.a().scale(delta)).unwrap()) < 1e-12);
        }
    }

    #[test]
    fn singular_a_is_fine() {
        let ssm = ContinuousSsm::new(Matrix::zeros(2, 2), Matrix::column(&[1.0, 2.0]), Matrix::zeros(1, 2)).unwrap();
        let d = discretize_zoh(&ssm, 0.25).unwrap();
        assert_eq!(d.a_bar(), &Matrix::identity(2));
        assert!(max_abs_diff(d.b_bar(), &Matrix::column(&[0.25, 0.5])) < 1e-15);
    }

    #[test]
    fn half_steps_compose() {
        let mut rng = Rng::new(12);
        for _ in 0..10 {
            let ssm = ContinuousSsm::teacher_init(5, &mut rng);
            let delta = rng.uniform(0.05, 2.0);
            let full = discretize_zoh(&ssm, delta).unwrap();
            let half = discretize_zoh(&ssm, delta / 2.0).unwrap();
            let sq = mat_mul(half.a_bar(), half.a_bar()).unwrap();
            assert!(max_abs_diff(&sq, full.a_bar()) < 1e-10);
        }
    }

    #[test]
    fn rejects_non_positive_step() {
        let ssm = ContinuousSsm::teacher_init(2, &mut Rng::new(0));
        assert!(matches!(discretize_zoh(&ssm, 0.0), Err(Error::Argument(_))));
        assert!(matches!(discretize_zoh(&ssm, -1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn shape_checks() {
        assert!(ContinuousSsm::new(Matrix::zeros(2, 2), Matrix::zeros(3, 1), Matrix::zeros(1, 2)).is_err());
        assert!(ContinuousSsm::new(Matrix::zeros(2, 3), Matrix::zeros(2, 1), Matrix::zeros(1, 2)).is_err());
        assert!(ContinuousSsm::new(Matrix::zeros(2, 2), Matrix::zeros(2, 1), Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn teacher_diagonal_is_negative() {
        let mut rng = Rng::new(1);
        for n in [1, 4, 16, 64] {
            let t = ContinuousSsm::teacher_init(n, &mut rng);
            assert!((0..n).all(|i| t.a()[(i, i)] < 0.0));
        }
    }

    #[test]
    fn delta_values() {
        let zero = SelectiveDelta::constant(3, 0.0);
        assert!((zero.eval(&[1.0, -2.0, 3.0]) - std::f64::consts::LN_2).abs() < 1e-15);
        let big = SelectiveDelta::constant(2, 20.0);
        assert!((big.eval(&[0.0, 0.0]) - 20.0).abs() < 1e-6);
        let far = SelectiveDelta::constant(1, -1e4);
        assert!(far.eval(&[0.0]) > 0.0);
    }

    #[test]
    fn delta_positive_sweep() {
        let mut rng = Rng::new(77);
        let sd = SelectiveDelta::new(rng.normal_matrix(1, 4, 3.0), rng.normal()).unwrap();
        for _ in 0..1000 {
            let x = rng.normal_vec(4, 10.0);
            assert!(sd.eval(&x) > 0.0);
        }
    }
}
