//! Factorized state transition `Ā ≈ U Vᵀ` with `U, V ∈ R^{N x r}`.
//!
//! The product is never formed during a scan: each step projects the state
//! down with `Vᵀ` (r·N multiply-adds) and back up with `U` (N·r), so the
//! transition costs `2Nr` instead of `N²`. That is only cheaper when
//! `r < N/2`; see [`saves_parameters`].
//!
//! The discrete transition is factorized directly. Factorizing the continuous
//! `A` would not help, since `exp(Δ U Vᵀ)` is generally full rank.

use crate::error::{Error, Result};
use crate::numlin::{dot, mat_mul, svd, truncate_svd, Matrix};
use crate::ssm::{scan_with, NoCount, OpCounter, StateTrajectory, Transition};

#[derive(Clone, Debug, PartialEq)]
pub struct LowRankTransition {
    u: Matrix,
    v: Matrix,
    // Vᵀ kept row-major so the down-projection reads contiguous rows
    vt: Matrix,
}

impl LowRankTransition {
    pub fn new(u: Matrix, v: Matrix) -> Result<Self> {
        if u.shape() != v.shape() {
            return Err(Error::shape("LowRankTransition::new", u.shape_str(), v.shape_str()));
        }
        let (n, r) = u.shape();
        if r > n {
            return Err(Error::arg(format!("rank {r} exceeds state dimension {n}")));
        }
        let vt = v.transpose();
        Ok(Self { u, v, vt })
    }

    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    pub fn state_dim(&self) -> usize {
        self.u.rows()
    }

    pub fn u(&self) -> &Matrix {
        &self.u
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    /// `U Vᵀ` as a dense matrix. Only for checks and analysis.
    pub fn materialize(&self) -> Matrix {
        mat_mul(&self.u, &self.vt).expect("conformable factors")
    }

    pub fn param_count(&self) -> usize {
        2 * self.state_dim() * self.rank()
    }
}

impl Transition for LowRankTransition {
    fn state_dim(&self) -> usize {
        self.u.rows()
    }

    fn scratch_len(&self) -> usize {
        self.u.cols()
    }

    #[inline]
    fn apply<C: OpCounter>(&self, h: &[f64], out: &mut [f64], z: &mut [f64], ops: &mut C) {
        let n = h.len();
        let r = z.len();
        for (zk, vrow) in z.iter_mut().zip(self.vt.data().chunks_exact(n)) {
            *zk = dot(vrow, h);
        }
        for (o, urow) in out.iter_mut().zip(self.u.data().chunks_exact(r)) {
            *o = dot(urow, z);
        }
        ops.add((2 * n * r) as u64);
    }
}

/// Compression setting: `rank = max(1, round(ratio * N))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankConfig {
    ratio: f64,
    state_dim: usize,
}

impl RankConfig {
    pub fn new(ratio: f64, state_dim: usize) -> Result<Self> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::arg(format!("rank ratio must be in (0, 1], got {ratio}")));
        }
        if state_dim == 0 {
            return Err(Error::arg("state dimension must be positive"));
        }
        Ok(Self { ratio, state_dim })
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn rank(&self) -> usize {
        rank_for_ratio(self.ratio, self.state_dim)
    }
}

pub fn rank_for_ratio(ratio: f64, state_dim: usize) -> usize {
    ((ratio * state_dim as f64).round() as usize).clamp(1, state_dim)
}

/// Transition parameters `(full, low) = (n², 2nr)`.
pub fn transition_param_count(n: usize, r: usize) -> (usize, usize) {
    (n * n, 2 * n * r)
}

/// True when the factorized form stores fewer numbers than the dense one,
/// i.e. `r < n/2`.
pub fn saves_parameters(n: usize, r: usize) -> bool {
    let (full, low) = transition_param_count(n, r);
    low < full
}

/// Rank-`r` SVD truncation of the teacher's discrete transition, with the
/// singular values split evenly between the factors.
pub fn init_from_teacher(a_bar_teacher: &Matrix, r: usize) -> Result<LowRankTransition> {
    if !a_bar_teacher.is_square() {
        return Err(Error::shape("init_from_teacher", a_bar_teacher.shape_str(), "square transition"));
    }
    let n = a_bar_teacher.rows();
    if r == 0 || r > n {
        return Err(Error::arg(format!("rank {r} outside 1..={n}")));
    }
    let s = svd(a_bar_teacher)?;
    let (u, v) = truncate_svd(&s, r)?;
    LowRankTransition::new(u, v)
}

fn check_io(t: &LowRankTransition, b_bar: &Matrix, c: &Matrix) -> Result<()> {
    let n = t.state_dim();
    if b_bar.shape() != (n, 1) {
        return Err(Error::shape("lowrank_scan", b_bar.shape_str(), format!("B̄ of {n}x1")));
    }
    if c.shape() != (1, n) {
        return Err(Error::shape("lowrank_scan", c.shape_str(), format!("C of 1x{n}")));
    }
    Ok(())
}

/// Student recurrence `h_t = U (Vᵀ h_{t-1}) + B̄ x_t`, `y_t = C h_t`.
pub fn lowrank_scan(
    t: &LowRankTransition,
    b_bar: &Matrix,
    c: &Matrix,
    x: &[f64],
    h0: Option<&[f64]>,
) -> Result<StateTrajectory> {
    check_io(t, b_bar, c)?;
    Ok(scan_with(t, b_bar.data(), c.data(), x, h0, &mut NoCount))
}

/// [`lowrank_scan`] that also returns the number of multiply-adds executed.
pub fn lowrank_scan_counted(
    t: &LowRankTransition,
    b_bar: &Matrix,
    c: &Matrix,
    x: &[f64],
    h0: Option<&[f64]>,
) -> Result<(StateTrajectory, u64)> {
    check_io(t, b_bar, c)?;
    let mut macs = 0u64;
    let tr = scan_with(t, b_bar.data(), c.data(), x, h0, &mut macs);
    Ok((tr, macs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numlin::Rng;
    use crate::ssm::{discretize_zoh, scan_1d, ContinuousSsm, DiscreteSsm};

    fn teacher(n: usize, rng: &mut Rng) -> DiscreteSsm {
        discretize_zoh(&ContinuousSsm::teacher_init(n, rng), 0.7).unwrap()
    }

    #[test]
    fn full_rank_init_is_lossless() {
        let mut rng = Rng::new(1);
        let d = teacher(6, &mut rng);
        let t = init_from_teacher(d.a_bar(), 6).unwrap();
        assert!(t.materialize().sub(d.a_bar()).unwrap().frobenius_norm() < 1e-8);
        let x = rng.normal_vec(20, 1.0);
        let low = lowrank_scan(&t, d.b_bar(), d.c(), &x, None).unwrap();
        let full = scan_1d(&d, &x, None);
        for (a, b) in low.flat_states().iter().zip(full.flat_states()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn diagonal_rank_one() {
        let t = init_from_teacher(&Matrix::diag(&[4.0, 1.0]), 1).unwrap();
        assert!(t.materialize().sub(&Matrix::diag(&[4.0, 0.0])).unwrap().frobenius_norm() < 1e-14);
    }

    #[test]
    fn init_error_is_singular_tail() {
        let mut rng = Rng::new(2);
        let a = rng.normal_matrix(7, 7, 1.0);
        let s = svd(&a).unwrap();
        for r in 1..=7 {
            let t = init_from_teacher(&a, r).unwrap();
            let err = a.sub(&t.materialize()).unwrap().frobenius_norm();
            let tail = s.sigma[r..].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((err - tail).abs() < 1e-8);
        }
    }

    #[test]
    fn init_rank_out_of_range() {
        assert!(matches!(init_from_teacher(&Matrix::identity(3), 0), Err(Error::Argument(_))));
        assert!(matches!(init_from_teacher(&Matrix::identity(3), 4), Err(Error::Argument(_))));
        assert!(init_from_teacher(&Matrix::zeros(2, 3), 1).is_err());
    }

    #[test]
    fn zero_factor_is_memoryless() {
        let mut rng = Rng::new(3);
        let b = rng.normal_matrix(4, 1, 1.0);
        let c = rng.normal_matrix(1, 4, 1.0);
        let cb = dot(c.data(), b.data());
        let x = rng.normal_vec(10, 1.0);
        for t in [
            LowRankTransition::new(Matrix::zeros(4, 2), rng.normal_matrix(4, 2, 1.0)).unwrap(),
            LowRankTransition::new(rng.normal_matrix(4, 2, 1.0), Matrix::zeros(4, 2)).unwrap(),
        ] {
            let tr = lowrank_scan(&t, &b, &c, &x, None).unwrap();
            for (y, xk) in tr.outputs().iter().zip(&x) {
                assert!((y - cb * xk).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn matches_materialized_scan() {
        let mut rng = Rng::new(4);
        let t = LowRankTransition::new(rng.normal_matrix(8, 3, 0.3), rng.normal_matrix(8, 3, 0.3)).unwrap();
        let d = DiscreteSsm::new(t.materialize(), rng.normal_matrix(8, 1, 1.0), rng.normal_matrix(1, 8, 1.0)).unwrap();
        let x = rng.normal_vec(16, 1.0);
        let low = lowrank_scan(&t, d.b_bar(), d.c(), &x, None).unwrap();
        let full = scan_1d(&d, &x, None);
        for (a, b) in low.flat_states().iter().zip(full.flat_states()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn instrumented_cost() {
        let mut rng = Rng::new(5);
        for (n, r, l) in [(8, 3, 16), (16, 4, 5), (5, 5, 1)] {
            let t = LowRankTransition::new(rng.normal_matrix(n, r, 0.1), rng.normal_matrix(n, r, 0.1)).unwrap();
            let b = rng.normal_matrix(n, 1, 1.0);
            let c = rng.normal_matrix(1, n, 1.0);
            let (_, macs) = lowrank_scan_counted(&t, &b, &c, &rng.normal_vec(l, 1.0), None).unwrap();
            assert_eq!(macs, (l * (2 * n * r + n + n)) as u64);
        }
    }

    #[test]
    fn param_counts() {
        assert_eq!(transition_param_count(16, 4), (256, 128));
        assert_eq!(transition_param_count(64, 16), (4096, 2048));
        let (full, low) = transition_param_count(10, 10);
        assert_eq!(low, 200);
        assert!(low >= full);
        assert!(saves_parameters(16, 7));
        assert!(!saves_parameters(16, 8));
    }

    #[test]
    fn rank_config() {
        assert_eq!(RankConfig::new(0.5, 16).unwrap().rank(), 8);
        assert_eq!(RankConfig::new(0.01, 16).unwrap().rank(), 1);
        assert_eq!(RankConfig::new(1.0, 16).unwrap().rank(), 16);
        assert_eq!(RankConfig::new(0.65, 128).unwrap().rank(), 83);
        assert!(RankConfig::new(0.0, 16).is_err());
        assert!(RankConfig::new(1.5, 16).is_err());
        assert!(RankConfig::new(f64::NAN, 16).is_err());
    }

    #[test]
    fn monotone_fidelity() {
        let mut rng = Rng::new(6);
        let d = teacher(10, &mut rng);
        let errs: Vec<f64> = (1..=10)
            .map(|r| {
                let t = init_from_teacher(d.a_bar(), r).unwrap();
                d.a_bar().sub(&t.materialize()).unwrap().frobenius_norm()
            })
            .collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn scan_shape_errors() {
        let t = LowRankTransition::new(Matrix::zeros(3, 1), Matrix::zeros(3, 1)).unwrap();
        assert!(lowrank_scan(&t, &Matrix::zeros(2, 1), &Matrix::zeros(1, 3), &[1.0], None).is_err());
        assert!(lowrank_scan(&t, &Matrix::zeros(3, 1), &Matrix::zeros(3, 1), &[1.0], None).is_err());
        assert!(LowRankTransition::new(Matrix::zeros(3, 2), Matrix::zeros(3, 1)).is_err());
        assert!(LowRankTransition::new(Matrix::zeros(2, 3), Matrix::zeros(2, 3)).is_err());
    }
}
