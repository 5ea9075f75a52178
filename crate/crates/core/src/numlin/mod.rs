//! Dense linear-algebra substrate: matrices, the matrix exponential, SVD,
//! norms and seeded randomness.

mod expm;
mod matrix;
mod rng;
mod svd;

pub use expm::mat_exp;
pub use matrix::{dot, frobenius_norm, mat_mul, mse, Matrix};
pub(crate) use matrix::{read_exact, read_f64s, read_u64};
pub use rng::Rng;
pub use svd::{svd, truncate_svd, SvdResult, JACOBI_TOL, MAX_SWEEPS};
