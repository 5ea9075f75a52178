//! Low-rank 2D selective state space models.
//!
//! The crate covers the whole numerical path of a compressed SS2D block:
//!
//! * [`numlin`]: dense matrices, matrix exponential, Jacobi SVD, seeded RNG.
//! * [`ssm`]: continuous SSMs, zero-order-hold discretization, 1-D scans.
//! * [`lowrank`]: the factorized transition `U V^T` and its SVD initialization.
//! * [`ss2d`]: feature maps, pixel fusion, four-direction scanning.
//! * [`distill`]: structure-aware distillation losses, gradients and training.
//! * [`detect`]: a minimal detection head plus IoU / AP / mAP50 metrics.

pub mod detect;
pub mod distill;
pub mod error;
pub mod lowrank;
pub mod numlin;
pub mod ss2d;
pub mod ssm;

pub use error::{Error, Result};
