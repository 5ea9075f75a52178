//! One-sided (Hestenes) Jacobi SVD.
//!
//! Column pairs of a working copy of `A` are rotated until every pair is
//! orthogonal to `JACOBI_TOL` in cosine. The column norms are then the
//! singular values, the normalized columns are the left singular vectors and
//! the accumulated rotations are the right singular vectors. Wide inputs are
//! handled through the transpose.

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

pub const JACOBI_TOL: f64 = 1e-12;
pub const MAX_SWEEPS: usize = 100;

/// `a = u * diag(sigma) * vt`, with `u` (m x m) and `vt` (n x n) orthogonal
/// and `sigma` non-negative, descending, of length `min(m, n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    /// `u * diag(sigma) * vt` restricted to the leading `k` triplets.
    pub fn reconstruct_rank(&self, k: usize) -> Matrix {
        let m = self.u.rows();
        let n = self.vt.cols();
        let mut out = Matrix::zeros(m, n);
        for (t, s) in self.sigma.iter().enumerate().take(k) {
            for i in 0..m {
                let ui = self.u[(i, t)] * s;
                if ui == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += ui * self.vt[(t, j)];
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Matrix {
        self.reconstruct_rank(self.sigma.len())
    }
}

pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if !a.is_finite() {
        return Err(Error::arg("svd input must be finite"));
    }
    let mut out = if a.rows() >= a.cols() {
        svd_tall(a)?
    } else {
        let t = svd_tall(&a.transpose())?;
        SvdResult {
            u: t.vt.transpose(),
            sigma: t.sigma,
            vt: t.u.transpose(),
        }
    };
    fix_signs(&mut out);
    Ok(out)
}

/// Leading `r` scaled factors: `(U_r sqrt(S_r), V_r sqrt(S_r))`, so that
/// `U_r V_r^T` is the best rank-`r` approximation in Frobenius norm.
pub fn truncate_svd(s: &SvdResult, r: usize) -> Result<(Matrix, Matrix)> {
    let k = s.sigma.len();
    if r == 0 || r > k {
        return Err(Error::arg(format!("truncation rank {r} outside 1..={k}")));
    }
    let m = s.u.rows();
    let n = s.vt.cols();
    let mut ur = Matrix::zeros(m, r);
    let mut vr = Matrix::zeros(n, r);
    for j in 0..r {
        let w = s.sigma[j].sqrt();
        for i in 0..m {
            ur[(i, j)] = s.u[(i, j)] * w;
        }
        for i in 0..n {
            vr[(i, j)] = s.vt[(j, i)] * w;
        }
    }
    Ok((ur, vr))
}

fn svd_tall(a: &Matrix) -> Result<SvdResult> {
    let (m, n) = a.shape();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = n < 2;
    let mut residual = 0.0;
    let mut sweeps = 0;
    while !converged && sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        residual = 0.0;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                let scale = alpha.sqrt() * beta.sqrt();
                if gamma == 0.0 || scale == 0.0 {
                    continue;
                }
                let off = gamma.abs() / scale;
                residual = f64::max(residual, off);
                if off <= JACOBI_TOL {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::Convergence {
            op: "svd",
            residual,
            sweeps,
        });
    }

    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal values keep column order
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let floor = sigma.first().copied().unwrap_or(0.0) * (m as f64) * f64::EPSILON;

    let mut ucols: Vec<Option<Vec<f64>>> = order
        .iter()
        .map(|&j| {
            let s = norms[j];
            (s > floor && s > 0.0).then(|| cols[j].iter().map(|v| v / s).collect())
        })
        .collect();
    ucols.resize(m, None);
    let ucols = complete_basis(m, ucols);

    let mut u = Matrix::zeros(m, m);
    for (j, col) in ucols.iter().enumerate() {
        for i in 0..m {
            u[(i, j)] = col[i];
        }
    }
    let mut vt = Matrix::zeros(n, n);
    for (row, &j) in order.iter().enumerate() {
        for i in 0..n {
            vt[(row, i)] = vcols[j][i];
        }
    }
    Ok(SvdResult { u, sigma, vt })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills the `None` slots with unit vectors orthogonal to every other column,
/// choosing at each step the coordinate axis with the largest residual.
fn complete_basis(m: usize, mut cols: Vec<Option<Vec<f64>>>) -> Vec<Vec<f64>> {
    for slot in 0..cols.len() {
        if cols[slot].is_some() {
            continue;
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for axis in 0..m {
            let mut cand = vec![0.0; m];
            cand[axis] = 1.0;
            for _ in 0..2 {
                for existing in cols.iter().flatten() {
                    let proj = dot(existing, &cand);
                    for (c, e) in cand.iter_mut().zip(existing) {
                        *c -= proj * e;
                    }
                }
            }
            let norm = dot(&cand, &cand).sqrt();
            if best.as_ref().is_none_or(|(b, _)| norm > *b) {
                best = Some((norm, cand));
            }
        }
        let (norm, cand) = best.expect("m > 0");
        cols[slot] = Some(cand.into_iter().map(|v| v / norm).collect());
    }
    cols.into_iter().map(|c| c.expect("filled")).collect()
}

/// Makes the largest-magnitude entry of each column of `u` non-negative
/// (first index wins ties) and flips the paired row of `vt`.
fn fix_signs(s: &mut SvdResult) {
    let m = s.u.rows();
    let k = s.sigma.len();
    for j in 0..m {
        let mut best = 0;
        let mut best_abs = -1.0;
        for i in 0..m {
            let v = s.u[(i, j)].abs();
            if v > best_abs {
                best_abs = v;
                best = i;
            }
        }
        if s.u[(best, j)] < 0.0 {
            for i in 0..m {
                s.u[(i, j)] = -s.u[(i, j)];
            }
            if j < k {
                for i in 0..s.vt.cols() {
                    s.vt[(j, i)] = -s.vt[(j, i)];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numlin::{mat_mul, Rng};

    fn orthogonality_error(q: &Matrix) -> f64 {
        let qtq = mat_mul(&q.transpose(), q).unwrap();
        qtq.sub(&Matrix::identity(q.cols())).unwrap().frobenius_norm()
    }

    fn check_invariants(a: &Matrix, s: &SvdResult) {
        assert!(orthogonality_error(&s.u) < 1e-10);
        assert!(orthogonality_error(&s.vt.transpose()) < 1e-10);
        let err = a.sub(&s.reconstruct()).unwrap().frobenius_norm();
        assert!(err <= 1e-8 * a.frobenius_norm().max(1.0), "{err}");
        for w in s.sigma.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert!(s.sigma.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn diagonal_input() {
        let s = svd(&Matrix::diag(&[3.0, 2.0, 1.0])).unwrap();
        assert_eq!(s.sigma, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn identity_input() {
        let s = svd(&Matrix::identity(4)).unwrap();
        assert_eq!(s.sigma, vec![1.0; 4]);
    }

    #[test]
    fn random_square_reconstructs() {
        let mut rng = Rng::new(1);
        let a = rng.normal_matrix(5, 5, 1.0);
        let s = svd(&a).unwrap();
        check_invariants(&a, &s);
        assert!(a.sub(&s.reconstruct()).unwrap().frobenius_norm() < 1e-8);
    }

    #[test]
    fn rectangular_and_rank_deficient() {
        let mut rng = Rng::new(2);
        for (m, n) in [(6, 3), (3, 6), (1, 4), (4, 1), (7, 7)] {
            let a = rng.normal_matrix(m, n, 1.0);
            check_invariants(&a, &svd(&a).unwrap());
        }
        let x = rng.normal_matrix(6, 2, 1.0);
        let y = rng.normal_matrix(2, 5, 1.0);
        let low = mat_mul(&x, &y).unwrap();
        let s = svd(&low).unwrap();
        check_invariants(&low, &s);
        assert!(s.sigma[2] < 1e-12 * s.sigma[0]);
        check_invariants(&Matrix::zeros(3, 3), &svd(&Matrix::zeros(3, 3)).unwrap());
    }

    #[test]
    fn sign_convention_and_determinism() {
        let mut rng = Rng::new(3);
        let a = rng.normal_matrix(6, 6, 1.0);
        let s1 = svd(&a).unwrap();
        let s2 = svd(&a).unwrap();
        assert_eq!(s1, s2);
        for j in 0..6 {
            let col = s1.u.col(j);
            let (idx, _) = col
                .iter()
                .enumerate()
                .fold((0, -1.0), |(bi, bv), (i, v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) });
            assert!(col[idx] >= 0.0);
        }
        // flipping the sign of the input must not change u's convention
        let neg = svd(&a.scale(-1.0)).unwrap();
        assert_eq!(neg.u, s1.u);
    }

    #[test]
    fn truncation_of_diagonal() {
        let s = svd(&Matrix::diag(&[3.0, 2.0, 1.0])).unwrap();
        let (ur, vr) = truncate_svd(&s, 2).unwrap();
        let approx = mat_mul(&ur, &vr.transpose()).unwrap();
        let err = Matrix::diag(&[3.0, 2.0, 1.0]).sub(&approx).unwrap();
        assert!(approx.sub(&Matrix::diag(&[3.0, 2.0, 0.0])).unwrap().frobenius_norm() < 1e-14);
        assert!((err.frobenius_norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn truncation_error_matches_tail() {
        let mut rng = Rng::new(4);
        for _ in 0..20 {
            let a = rng.normal_matrix(6, 6, 1.0);
            let s = svd(&a).unwrap();
            for r in 1..=6 {
                let (ur, vr) = truncate_svd(&s, r).unwrap();
                let err = a.sub(&mat_mul(&ur, &vr.transpose()).unwrap()).unwrap().frobenius_norm();
                let tail = s.sigma[r..].iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((err - tail).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn truncation_rank_out_of_range() {
        let s = svd(&Matrix::identity(3)).unwrap();
        assert!(matches!(truncate_svd(&s, 0), Err(Error::Argument(_))));
        assert!(matches!(truncate_svd(&s, 4), Err(Error::Argument(_))));
    }

    #[test]
    fn rejects_non_finite() {
        let mut a = Matrix::identity(2);
        a[(0, 1)] = f64::INFINITY;
        assert!(svd(&a).is_err());
    }
}
