//! Mini-batch stochastic mirror descent for block-structured linear
//! systems `A_i x = y_i`, `i = 1, …, p`, together with the equivalent
//! randomized dual block gradient method.
//!
//! The crate provides:
//!
//! * [`operators`] — block linear operators (dense or sparse rows) with
//!   adjoints and cached spectral-norm estimates;
//! * [`mirror`] — strongly convex regularizers with closed-form mirror
//!   solves, conjugates and Bregman distances;
//! * [`stepsize`] — constant, adaptive and discrepancy-gated step rules;
//! * [`engine`] — the stochastic mirror descent iteration with uniform
//!   mini-batch and cyclic samplers, stopping rules, and per-iteration
//!   traces;
//! * [`dual`] — the randomized dual block gradient method and the
//!   primal/dual equivalence harness;
//! * [`noise`] — the multiplicative noise model and batch noise-level
//!   identities.
//!
//! All solver math is generic over the floating scalar ([`Scalar`]); the
//! aliases below fix `f64`, the working precision of the shipped
//! experiments.

pub mod block;
pub mod dual;
pub mod engine;
pub mod error;
pub mod mirror;
pub mod noise;
pub mod operators;
pub mod scalar;
pub mod stepsize;

pub use block::{BatchIndexSet, BlockVec};
pub use error::{Result, SolverError};
pub use scalar::Scalar;

/// `f64` instantiations used by the experiment layer.
pub type BlockVec64 = block::BlockVec<f64>;
pub type MatrixOperator64 = operators::MatrixBlockOperator<f64>;
pub type MirrorMap64 = mirror::MirrorMap<f64>;
pub type StepRule64 = stepsize::StepRule<f64>;
pub type StepTable64 = stepsize::StepTable<f64>;
pub type NoiseSpec64 = noise::NoiseSpec<f64>;

/// `f32` instantiations, for callers that trade precision for footprint.
pub type BlockVec32 = block::BlockVec<f32>;
pub type MatrixOperator32 = operators::MatrixBlockOperator<f32>;
pub type MirrorMap32 = mirror::MirrorMap<f32>;
pub type StepRule32 = stepsize::StepRule<f32>;
