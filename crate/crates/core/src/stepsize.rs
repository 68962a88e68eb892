//! Step-size rules for the stochastic mirror descent iteration.
//!
//! Three rules are provided:
//!
//! * `S1` — a step that depends only on the drawn batch: a constant `t`, or a
//!   per-block table for batch size 1, subject to `0 < t_I < 4σ/‖A_I‖²`;
//! * `S2` — the adaptive ratio `min{ μ₀‖r‖² / ‖A_I^* r‖², μ̃₁ }` with
//!   `0 < μ₀ < 4σ`, where `r` is the batch residual;
//! * `S3` — the `S2` value gated by the discrepancy principle: the step is 0
//!   unless `‖r‖ > τ δ_I`, where `δ_I² = Σ_{i∈I} δ_i²` aggregates the
//!   per-block noise levels of the drawn batch.

use crate::block::BatchIndexSet;
use crate::error::{Result, SolverError};
use crate::operators::BlockOperator;
use crate::scalar::{norm_sq, Scalar};

/// Norm-estimation knobs used when validating step tables.
pub const NORM_TOL: f64 = 1e-4;
pub const NORM_MAX_ITERS: usize = 1000;

/// Step table for rule `S1`.
#[derive(Debug, Clone)]
pub enum StepTable<F> {
    /// One `t` for every batch.
    Constant(F),
    /// `t_i` per singleton block; only valid for batch size 1.
    PerBlock(Vec<F>),
}

impl<F: Scalar> StepTable<F> {
    /// The Landweber-Kaczmarz style table `t_i = μ₀ / ‖A_i‖²` built from the
    /// operator's (inflated) singleton norm estimates; satisfies the `S1`
    /// bound whenever `0 < μ₀ < 4σ`.
    pub fn per_block_scaled<Op: BlockOperator<F> + ?Sized>(op: &Op, mu0: F) -> Result<Self> {
        if !(mu0 > F::zero()) {
            return Err(SolverError::invalid("mu0 must be > 0"));
        }
        let tol = F::cast(NORM_TOL);
        let mut table = Vec::with_capacity(op.num_blocks());
        for i in 0..op.num_blocks() {
            let est = op.estimate_norm(&BatchIndexSet::singleton(i), tol, NORM_MAX_ITERS)?;
            if est.value == F::zero() {
                return Err(SolverError::invalid(format!(
                    "block {i} has zero norm; per-block step is undefined"
                )));
            }
            table.push(mu0 / (est.value * est.value));
        }
        Ok(StepTable::PerBlock(table))
    }

    pub fn step_for(&self, set: &BatchIndexSet) -> Result<F> {
        match self {
            StepTable::Constant(t) => Ok(*t),
            StepTable::PerBlock(ts) => match set.sole() {
                Some(i) => ts.get(i).copied().ok_or_else(|| {
                    SolverError::invalid(format!("step table has no entry for block {i}"))
                }),
                None => Err(SolverError::invalid(
                    "per-block step table requires batch size 1",
                )),
            },
        }
    }
}

/// A tagged step-size rule.
#[derive(Debug, Clone)]
pub enum StepRule<F> {
    S1(StepTable<F>),
    S2 { mu0: F, mu1_cap: F },
    S3 { mu0: F, mu1_cap: F, tau: F },
}

impl<F: Scalar> StepRule<F> {
    /// Default cap `μ̃₁ = 10⁶ / min_i ‖A_i‖²`, large enough to be inert for
    /// the problems at hand while keeping the descent-lemma hypothesis.
    pub fn default_mu1_cap<Op: BlockOperator<F> + ?Sized>(op: &Op) -> Result<F> {
        let tol = F::cast(NORM_TOL);
        let mut min_sq = F::infinity();
        for i in 0..op.num_blocks() {
            let est = op.estimate_norm(&BatchIndexSet::singleton(i), tol, NORM_MAX_ITERS)?;
            let sq = est.value * est.value;
            if sq > F::zero() {
                min_sq = min_sq.min(sq);
            }
        }
        if !min_sq.is_finite() {
            return Err(SolverError::invalid(
                "cannot derive default mu1 cap: all blocks have zero norm",
            ));
        }
        Ok(F::cast(1e6) / min_sq)
    }

    /// True when the rule needs per-block noise levels (the discrepancy gate).
    pub fn needs_noise_levels(&self) -> bool {
        matches!(self, StepRule::S3 { .. })
    }

    pub fn tau(&self) -> Option<F> {
        match self {
            StepRule::S3 { tau, .. } => Some(*tau),
            _ => None,
        }
    }

    pub fn mu1_cap(&self) -> Option<F> {
        match self {
            StepRule::S2 { mu1_cap, .. } | StepRule::S3 { mu1_cap, .. } => Some(*mu1_cap),
            StepRule::S1(_) => None,
        }
    }

    /// Validates rule parameters against the operator and the map's modulus
    /// of convexity. For `S1` the bound `t_I < 4σ/‖A_I‖²` is checked against
    /// norm estimates: per block when `b = 1`, and via the upper bound
    /// `min(‖A‖², Σ of the b largest ‖A_i‖²)` on `max_I ‖A_I‖²` otherwise.
    pub fn validate<Op: BlockOperator<F> + ?Sized>(
        &self,
        op: &Op,
        sigma: F,
        batch_size: usize,
    ) -> Result<()> {
        let four_sigma = F::cast(4.0) * sigma;
        match self {
            StepRule::S2 { mu0, mu1_cap } => {
                if !(*mu0 > F::zero()) || !(*mu0 < four_sigma) {
                    return Err(SolverError::invalid(format!(
                        "S2 requires 0 < mu0 < 4σ = {four_sigma}, got {mu0}"
                    )));
                }
                if !(*mu1_cap > F::zero()) {
                    return Err(SolverError::invalid("S2 requires mu1 cap > 0"));
                }
                Ok(())
            }
            StepRule::S3 { mu0, mu1_cap, tau } => {
                if !(*mu0 > F::zero()) || !(*mu0 < four_sigma) {
                    return Err(SolverError::invalid(format!(
                        "S3 requires 0 < mu0 < 4σ = {four_sigma}, got {mu0}"
                    )));
                }
                if !(*mu1_cap > F::zero()) {
                    return Err(SolverError::invalid("S3 requires mu1 cap > 0"));
                }
                if !(*tau >= F::one()) {
                    return Err(SolverError::invalid("S3 requires tau >= 1"));
                }
                Ok(())
            }
            StepRule::S1(table) => {
                let tol = F::cast(NORM_TOL);
                match table {
                    StepTable::PerBlock(ts) => {
                        if batch_size != 1 {
                            return Err(SolverError::invalid(
                                "per-block step table requires batch size 1",
                            ));
                        }
                        if ts.len() != op.num_blocks() {
                            return Err(SolverError::DimensionMismatch {
                                what: "step table length",
                                expected: op.num_blocks(),
                                got: ts.len(),
                            });
                        }
                        for (i, &t) in ts.iter().enumerate() {
                            let est = op.estimate_norm(
                                &BatchIndexSet::singleton(i),
                                tol,
                                NORM_MAX_ITERS,
                            )?;
                            let bound = if est.value > F::zero() {
                                four_sigma / (est.value * est.value)
                            } else {
                                F::infinity()
                            };
                            if !(t > F::zero()) || !(t < bound) {
                                return Err(SolverError::invalid(format!(
                                    "S1 table entry t_{i} = {t} violates 0 < t < 4σ/‖A_i‖² = {bound}"
                                )));
                            }
                        }
                        Ok(())
                    }
                    StepTable::Constant(t) => {
                        let bound_sq = max_batch_norm_sq_bound(op, batch_size)?;
                        let bound = if bound_sq > F::zero() {
                            four_sigma / bound_sq
                        } else {
                            F::infinity()
                        };
                        if !(*t > F::zero()) || !(*t < bound) {
                            return Err(SolverError::invalid(format!(
                                "S1 constant step t = {t} violates 0 < t < 4σ/max_I‖A_I‖² = {bound}"
                            )));
                        }
                        Ok(())
                    }
                }
            }
        }
    }

    /// Computes the step for the drawn batch from the batch residual
    /// `r = A_I x − y_I^δ`, its adjoint image `A_I^* r`, and the batch noise
    /// level `δ_I` (ignored by `S1`/`S2`).
    ///
    /// Conventions: a zero residual yields step 0 (the update is a no-op
    /// either way); a nonzero residual with zero adjoint image yields the
    /// cap `μ̃₁` (the ratio is `+∞`).
    pub fn compute_step(
        &self,
        residual: &[F],
        adjoint_residual: &[F],
        set: &BatchIndexSet,
        delta_batch: F,
    ) -> Result<F> {
        match self {
            StepRule::S1(table) => table.step_for(set),
            StepRule::S2 { mu0, mu1_cap } => {
                Ok(adaptive_step(residual, adjoint_residual, *mu0, *mu1_cap))
            }
            StepRule::S3 { mu0, mu1_cap, tau } => {
                let rn_sq = norm_sq(residual);
                if rn_sq == F::zero() {
                    return Ok(F::zero());
                }
                if rn_sq.sqrt() > *tau * delta_batch {
                    Ok(adaptive_step(residual, adjoint_residual, *mu0, *mu1_cap))
                } else {
                    Ok(F::zero())
                }
            }
        }
    }
}

fn adaptive_step<F: Scalar>(residual: &[F], adjoint_residual: &[F], mu0: F, mu1_cap: F) -> F {
    let rn_sq = norm_sq(residual);
    if rn_sq == F::zero() {
        return F::zero();
    }
    let an_sq = norm_sq(adjoint_residual);
    if an_sq == F::zero() {
        return mu1_cap;
    }
    (mu0 * rn_sq / an_sq).min(mu1_cap)
}

/// Upper bound on `max_{|I|=b} ‖A_I‖²`: the smaller of the full-operator
/// norm squared and the sum of the `b` largest singleton norms squared.
fn max_batch_norm_sq_bound<F: Scalar, Op: BlockOperator<F> + ?Sized>(
    op: &Op,
    batch_size: usize,
) -> Result<F> {
    let tol = F::cast(NORM_TOL);
    let p = op.num_blocks();
    if batch_size == 1 {
        let mut max_sq = F::zero();
        for i in 0..p {
            let est = op.estimate_norm(&BatchIndexSet::singleton(i), tol, NORM_MAX_ITERS)?;
            max_sq = max_sq.max(est.value * est.value);
        }
        return Ok(max_sq);
    }
    let full = op.estimate_norm(&BatchIndexSet::full(p), tol, NORM_MAX_ITERS)?;
    let full_sq = full.value * full.value;
    if batch_size == p {
        return Ok(full_sq);
    }
    let mut singles_sq: Vec<F> = Vec::with_capacity(p);
    for i in 0..p {
        let est = op.estimate_norm(&BatchIndexSet::singleton(i), tol, NORM_MAX_ITERS)?;
        singles_sq.push(est.value * est.value);
    }
    singles_sq.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let top_sum: F = singles_sq.into_iter().take(batch_size).sum();
    Ok(full_sq.min(top_sum))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::MatrixBlockOperator;

    fn set1() -> BatchIndexSet {
        BatchIndexSet::singleton(0)
    }

    #[test]
    fn s2_hand_value() {
        // mu0=1, cap=10, r=(2), A*r=(0,4) -> min(1·4/16, 10) = 0.25
        let rule = StepRule::S2 {
            mu0: 1.0,
            mu1_cap: 10.0,
        };
        let t = rule
            .compute_step(&[2.0], &[0.0, 4.0], &set1(), 0.0)
            .unwrap();
        assert_eq!(t, 0.25);
    }

    #[test]
    fn s3_gate_closed() {
        // tau=1, delta_I=3, r=(2): ‖r‖ ≤ τδ_I so the step is 0
        let rule = StepRule::S3 {
            mu0: 1.0,
            mu1_cap: 10.0,
            tau: 1.0,
        };
        let t = rule
            .compute_step(&[2.0], &[0.0, 4.0], &set1(), 3.0)
            .unwrap();
        assert_eq!(t, 0.0);
    }

    #[test]
    fn s3_gate_open_matches_s2() {
        // tau=1, delta_I=1, r=(2): gate open, same formula as S2
        let rule = StepRule::S3 {
            mu0: 1.0,
            mu1_cap: 10.0,
            tau: 1.0,
        };
        let t = rule
            .compute_step(&[2.0], &[0.0, 4.0], &set1(), 1.0)
            .unwrap();
        assert_eq!(t, 0.25);
    }

    #[test]
    fn s1_constant_for_every_batch() {
        let rule = StepRule::S1(StepTable::Constant(0.1));
        for set in [set1(), BatchIndexSet::new(vec![0, 1, 2], 4).unwrap()] {
            assert_eq!(rule.compute_step(&[1.0], &[1.0], &set, 0.0).unwrap(), 0.1);
        }
    }

    #[test]
    fn degenerate_residuals() {
        let rule = StepRule::S2 {
            mu0: 1.0,
            mu1_cap: 7.0,
        };
        // zero residual -> 0
        assert_eq!(
            rule.compute_step(&[0.0], &[0.0, 0.0], &set1(), 0.0).unwrap(),
            0.0
        );
        // nonzero residual, zero adjoint image -> cap
        assert_eq!(
            rule.compute_step(&[1.0], &[0.0, 0.0], &set1(), 0.0).unwrap(),
            7.0
        );
    }

    #[test]
    fn step_respects_lemma_hypothesis() {
        // every returned step satisfies t ≤ min{μ0‖r‖²/‖A*r‖², μ̃1} when r ≠ 0
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for rule in [
            StepRule::S2 {
                mu0: 1.5,
                mu1_cap: 3.0,
            },
            StepRule::S3 {
                mu0: 1.5,
                mu1_cap: 3.0,
                tau: 1.0,
            },
        ] {
            for _ in 0..500 {
                let r: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let g: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
                let t = rule.compute_step(&r, &g, &set1(), 0.0).unwrap();
                let rn = norm_sq(&r);
                let gn = norm_sq(&g);
                if rn > 0.0 && gn > 0.0 {
                    assert!(t <= (1.5 * rn / gn).min(3.0) + f64::EPSILON);
                }
                assert!(t >= 0.0);
            }
        }
    }

    #[test]
    fn validation_catches_bad_parameters() {
        let op =
            MatrixBlockOperator::from_dense_rows(2, vec![vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let sigma = 0.5;
        // mu0 must stay below 4σ = 2
        assert!(StepRule::S2 { mu0: 2.0, mu1_cap: 1.0 }
            .validate(&op, sigma, 1)
            .is_err());
        assert!(StepRule::S2 { mu0: 1.9, mu1_cap: 1.0 }
            .validate(&op, sigma, 1)
            .is_ok());
        // tau >= 1
        assert!(StepRule::S3 { mu0: 0.5, mu1_cap: 1.0, tau: 0.5 }
            .validate(&op, sigma, 1)
            .is_err());
        // S1 constant: block 1 has norm 2 so the bound is 4σ/4 = 0.5
        assert!(StepRule::S1(StepTable::Constant(0.49))
            .validate(&op, sigma, 1)
            .is_ok());
        assert!(StepRule::S1(StepTable::Constant(0.51))
            .validate(&op, sigma, 1)
            .is_err());
        // per-block table with b > 1 is rejected
        assert!(StepRule::S1(StepTable::PerBlock(vec![0.1, 0.1]))
            .validate(&op, sigma, 2)
            .is_err());
    }

    #[test]
    fn per_block_scaled_table() {
        let op =
            MatrixBlockOperator::from_dense_rows(2, vec![vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let table = StepTable::per_block_scaled(&op, 1.0f64).unwrap();
        let rule = StepRule::S1(table);
        rule.validate(&op, 0.5, 1).unwrap();
        let t0 = rule.compute_step(&[0.0], &[0.0, 0.0], &set1(), 0.0).unwrap();
        let t1 = rule
            .compute_step(&[0.0], &[0.0, 0.0], &BatchIndexSet::singleton(1), 0.0)
            .unwrap();
        // t_i = mu0 / ((1+tol)·‖A_i‖)²
        assert!((t0 - 1.0).abs() < 1e-3);
        assert!((t1 - 0.25).abs() < 1e-3);
        assert!(t0 < 2.0 && t1 < 0.5);
    }

    #[test]
    fn default_cap_is_large() {
        let op =
            MatrixBlockOperator::from_dense_rows(2, vec![vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let cap: f64 = StepRule::default_mu1_cap(&op).unwrap();
        assert!(cap > 1e5);
    }
}
