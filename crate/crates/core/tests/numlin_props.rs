use lowrank_ss2d::numlin::{frobenius_norm, mat_exp, mat_mul, svd, truncate_svd, Matrix, Rng};
use proptest::prelude::*;

fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    frobenius_norm(&a.sub(b).unwrap()) / frobenius_norm(b).max(1e-300)
}

fn seeded_matrix(seed: u64, rows: usize, cols: usize) -> Matrix {
    Rng::new(seed).normal_matrix(rows, cols, 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_is_associative(seed in any::<u64>(), m in 1usize..7, k in 1usize..7, l in 1usize..7, n in 1usize..7) {
        let mut rng = Rng::new(seed);
        let a = rng.normal_matrix(m, k, 1.0);
        let b = rng.normal_matrix(k, l, 1.0);
        let c = rng.normal_matrix(l, n, 1.0);
        let left = mat_mul(&mat_mul(&a, &b).unwrap(), &c).unwrap();
        let right = mat_mul(&a, &mat_mul(&b, &c).unwrap()).unwrap();
        prop_assert!(rel_err(&left, &right) < 1e-10);
    }

    #[test]
    fn exp_of_commuting_diagonals(d1 in prop::collection::vec(-3.0f64..3.0, 1..6), seed in any::<u64>()) {
        let d2: Vec<f64> = Rng::new(seed).normal_vec(d1.len(), 1.0);
        let a = Matrix::diag(&d1);
        let b = Matrix::diag(&d2);
        let lhs = mat_exp(&a.add(&b).unwrap()).unwrap();
        let rhs = mat_mul(&mat_exp(&a).unwrap(), &mat_exp(&b).unwrap()).unwrap();
        prop_assert!(rel_err(&lhs, &rhs) < 1e-10);
    }

    #[test]
    fn exp_of_polynomial_commutes(seed in any::<u64>(), n in 1usize..6) {
        // A and A² commute even when A is dense
        let a = seeded_matrix(seed, n, n).scale(0.5);
        let a2 = mat_mul(&a, &a).unwrap().scale(0.3);
        let lhs = mat_exp(&a.add(&a2).unwrap()).unwrap();
        let rhs = mat_mul(&mat_exp(&a).unwrap(), &mat_exp(&a2).unwrap()).unwrap();
        prop_assert!(rel_err(&lhs, &rhs) < 1e-10);
    }

    #[test]
    fn svd_invariants(seed in any::<u64>(), m in 1usize..9, n in 1usize..9) {
        let a = seeded_matrix(seed, m, n);
        let s = svd(&a).unwrap();
        prop_assert_eq!(s.u.shape(), (m, m));
        prop_assert_eq!(s.vt.shape(), (n, n));
        prop_assert_eq!(s.sigma.len(), m.min(n));
        let utu = mat_mul(&s.u.transpose(), &s.u).unwrap();
        let vvt = mat_mul(&s.vt, &s.vt.transpose()).unwrap();
        prop_assert!(frobenius_norm(&utu.sub(&Matrix::identity(m)).unwrap()) < 1e-10);
        prop_assert!(frobenius_norm(&vvt.sub(&Matrix::identity(n)).unwrap()) < 1e-10);
        prop_assert!(rel_err(&s.reconstruct(), &a) < 1e-8);
        for w in s.sigma.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        prop_assert!(s.sigma.iter().all(|&v| v >= 0.0));
        // sign convention
        for j in 0..m {
            let col = s.u.col(j);
            let mut best = 0;
            for i in 1..m {
                if col[i].abs() > col[best].abs() {
                    best = i;
                }
            }
            prop_assert!(col[best] >= 0.0);
        }
    }

    #[test]
    fn svd_is_bit_deterministic(seed in any::<u64>(), n in 1usize..8) {
        let a = seeded_matrix(seed, n, n);
        let s1 = svd(&a).unwrap();
        let s2 = svd(&a.clone()).unwrap();
        prop_assert_eq!(s1, s2);
    }

    #[test]
    fn truncation_error_is_sigma_tail(seed in any::<u64>(), n in 2usize..9, r_frac in 0.0f64..1.0) {
        let a = seeded_matrix(seed, n, n);
        let r = 1 + ((n - 1) as f64 * r_frac) as usize;
        let s = svd(&a).unwrap();
        let (u, v) = truncate_svd(&s, r).unwrap();
        let err = frobenius_norm(&a.sub(&mat_mul(&u, &v.transpose()).unwrap()).unwrap());
        let tail: f64 = s.sigma[r..].iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((err - tail).abs() < 1e-8);
    }

    #[test]
    fn rng_streams_reproduce(seed in any::<u64>(), id in any::<u64>()) {
        let a = Rng::new(seed).split(id).normal_vec(16, 1.0);
        let mut parent = Rng::new(seed);
        parent.normal_vec(5, 1.0);
        let b = parent.split(id).normal_vec(16, 1.0);
        prop_assert_eq!(a, b);
    }
}

#[test]
fn eckart_young_on_random_competitors() {
    let mut rng = Rng::new(2024);
    for trial in 0..1000 {
        let a = rng.normal_matrix(8, 8, 1.0);
        let r = 1 + trial % 7;
        let (u, v) = truncate_svd(&svd(&a).unwrap(), r).unwrap();
        let best = frobenius_norm(&a.sub(&mat_mul(&u, &v.transpose()).unwrap()).unwrap());
        let ur = rng.normal_matrix(8, r, 1.0);
        let vr = rng.normal_matrix(8, r, 1.0);
        let other = frobenius_norm(&a.sub(&mat_mul(&ur, &vr.transpose()).unwrap()).unwrap());
        assert!(best <= other, "trial {trial}: {best} > {other}");
    }
}

#[test]
fn serialization_round_trips() {
    let mut rng = Rng::new(77);
    for _ in 0..50 {
        let (r, c) = (1 + rng.below(9), 1 + rng.below(9));
        let m = rng.normal_matrix(r, c, 10.0);
        let back = Matrix::read_from(&mut m.to_bytes().as_slice()).unwrap();
        assert_eq!(back, m);
        assert!(back.data().iter().zip(m.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
