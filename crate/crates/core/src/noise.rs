//! Data corruption and noise-level bookkeeping.
//!
//! Noisy data follow the multiplicative model
//! `y_i^δ = y_i + δ_rel |y_i| ε_i` with per-block noise levels
//! `δ_i = δ_rel ‖y_i‖` and total level `δ = sqrt(Σ δ_i²)`. For the uniform
//! model `ε_i` is uniform on `[−1, 1]`, so `‖y_i^δ − y_i‖ ≤ δ_i` holds
//! surely; for the Gaussian model `ε_i` is standard normal and the bound
//! only holds in distribution. Rule `S3` and the discrepancy stop consume
//! the reported `δ_i`, so Gaussian noise should be paired with rules
//! `S1`/`S2` (callers are expected to warn otherwise).

use rand::distr::uniform::SampleUniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::block::BlockVec;
use crate::error::{Result, SolverError};
use crate::scalar::{norm, Scalar};

/// Noise distribution of `ε_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseModel {
    Gaussian,
    Uniform,
}

/// Relative noise specification.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec<F> {
    pub model: NoiseModel,
    pub delta_rel: F,
    pub seed: u64,
}

/// Corrupted data with its per-block levels and total level.
#[derive(Debug, Clone)]
pub struct CorruptedData<F> {
    pub data: BlockVec<F>,
    /// `δ_i = δ_rel ‖y_i‖` per block.
    pub levels: Vec<F>,
    /// `δ = sqrt(Σ δ_i²)`.
    pub total: F,
}

/// Applies the noise model to exact data blocks.
///
/// Components are corrupted as `y_ij + δ_rel |y_ij| ε_ij`; for single-entry
/// blocks this is exactly the scalar model. Blocks with `y_i = 0` stay
/// exact and report `δ_i = 0`.
pub fn corrupt<F>(y: &BlockVec<F>, spec: &NoiseSpec<F>) -> Result<CorruptedData<F>>
where
    F: Scalar + SampleUniform,
    StandardNormal: Distribution<F>,
{
    if !(spec.delta_rel >= F::zero()) {
        return Err(SolverError::invalid("delta_rel must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = y.clone();
    let p = y.num_blocks();
    let mut levels = Vec::with_capacity(p);
    for i in 0..p {
        let block = out.block_mut(i);
        for v in block.iter_mut() {
            // draw unconditionally to keep the stream aligned across data
            let eps: F = match spec.model {
                NoiseModel::Gaussian => StandardNormal.sample(&mut rng),
                NoiseModel::Uniform => rng.random_range(F::cast(-1.0)..=F::cast(1.0)),
            };
            *v = *v + spec.delta_rel * v.abs() * eps;
        }
        levels.push(spec.delta_rel * norm(y.block(i)));
    }
    let total = levels.iter().map(|d| *d * *d).sum::<F>().sqrt();
    Ok(CorruptedData {
        data: out,
        levels,
        total,
    })
}

/// Expected squared batch noise `E[δ_I²] = (b/p) δ²` under uniform subset
/// sampling. Generic over the scalar so exact (rational) arithmetic can be
/// checked against full subset enumeration.
pub fn expected_batch_noise<T>(levels: &[T], b: usize) -> T
where
    T: num_traits::Num + num_traits::FromPrimitive + Clone + std::iter::Sum<T>,
{
    let p = levels.len();
    assert!(b >= 1 && b <= p, "batch size {b} out of range for p={p}");
    let sum_sq: T = levels.iter().map(|d| d.clone() * d.clone()).sum();
    sum_sq * T::from_usize(b).unwrap() / T::from_usize(p).unwrap()
}
