//! The mini-batch randomized dual block gradient method and the
//! primal/dual equivalence harness.
//!
//! Applying randomized block gradient descent to the Fenchel dual
//! `d_{y^δ}(λ) = R*(A^* λ) − ⟨λ, y^δ⟩` gives the iteration
//!
//! ```text
//! x_n = ∇R*(A^* λ_n),
//! λ_{n+1, I_n} = λ_{n, I_n} − t_{I_n} (A_{I_n} x_n − y_{I_n}^δ),
//! ```
//!
//! with all other block components unchanged and `λ_0 = 0`. Under a
//! batch-constant step table this produces the same primal iterates as the
//! mirror descent engine through the identity `ξ_n = A^* λ_n`; the harness
//! below runs both on a shared batch sequence and reports the maximum
//! deviation. The dual engine exists for verification and the rate study;
//! production solving uses the primal engine.

use crate::block::{BatchIndexSet, BlockVec};
use crate::error::{Result, SolverError};
use crate::mirror::MirrorMap;
use crate::operators::BlockOperator;
use crate::scalar::{dot, norm_inf, Scalar};
use crate::stepsize::{StepRule, StepTable};

/// Dual iterate: one data-space vector per block plus a counter.
///
/// `λ` is all zeros at `n = 0`; blocks never drawn stay exactly zero.
#[derive(Debug, Clone)]
pub struct DualState<F> {
    pub lambda: BlockVec<F>,
    pub n: u64,
}

/// The randomized dual block gradient engine (rule `S1` regime only).
pub struct DualEngine<'a, F: Scalar, Op: BlockOperator<F> + ?Sized> {
    op: &'a Op,
    map: &'a MirrorMap<F>,
    table: StepTable<F>,
    data: &'a BlockVec<F>,
}

impl<'a, F: Scalar, Op: BlockOperator<F> + ?Sized> DualEngine<'a, F, Op> {
    /// Builds the engine; `batch_size` fixes the regime the step table must
    /// be valid for (a constant `t` is required when `b > 1`).
    pub fn new(
        op: &'a Op,
        map: &'a MirrorMap<F>,
        table: StepTable<F>,
        batch_size: usize,
        data: &'a BlockVec<F>,
    ) -> Result<Self> {
        if map.dim() != op.input_dim() {
            return Err(SolverError::DimensionMismatch {
                what: "mirror map vs operator input",
                expected: op.input_dim(),
                got: map.dim(),
            });
        }
        if batch_size > 1 && matches!(table, StepTable::PerBlock(_)) {
            return Err(SolverError::invalid(
                "dual block gradient with b > 1 requires a constant step",
            ));
        }
        StepRule::S1(table.clone()).validate(op, map.sigma(), batch_size)?;
        Ok(DualEngine {
            op,
            map,
            table,
            data,
        })
    }

    /// All-zero dual state.
    pub fn initial_state(&self) -> DualState<F> {
        DualState {
            lambda: BlockVec::zeros(&self.op.block_dims()),
            n: 0,
        }
    }

    /// Assembles `ξ = A^* λ` over all blocks.
    pub fn dual_to_primal_dual(&self, st: &DualState<F>, out: &mut [F]) -> Result<()> {
        self.op.adjoint_full_into(&st.lambda, out)
    }

    /// One iteration on a prescribed batch: refreshes `x = ∇R*(A^*λ)` and
    /// updates only the drawn block components of `λ`.
    pub fn step_with_batch(&self, st: &mut DualState<F>, set: &BatchIndexSet) -> Result<()> {
        let t = self.table.step_for(set)?;
        let mut xi = vec![F::zero(); self.op.input_dim()];
        self.op.adjoint_full_into(&st.lambda, &mut xi)?;
        let x = self.map.mirror_solve(&xi)?;
        for &i in set.indices() {
            let d = self.op.block_dim(i);
            let mut r = vec![F::zero(); d];
            self.op.apply_block_into(i, &x, &mut r);
            for (rv, &yv) in r.iter_mut().zip(self.data.block(i).iter()) {
                *rv -= yv;
            }
            for (l, rv) in st.lambda.block_mut(i).iter_mut().zip(r.iter()) {
                *l = *l - t * *rv;
            }
        }
        st.n += 1;
        Ok(())
    }

    /// Dual objective `d_y(λ) = R*(A^*λ) − Σ_i ⟨λ_i, y_i⟩` against the data
    /// blocks `y` (pass exact data for `d_y`, noisy data for `d_{y^δ}`).
    pub fn dual_objective(&self, st: &DualState<F>, y: &BlockVec<F>) -> Result<F> {
        let mut xi = vec![F::zero(); self.op.input_dim()];
        self.op.adjoint_full_into(&st.lambda, &mut xi)?;
        let conj = self.map.conjugate_value(&xi)?;
        let mut pair = F::zero();
        for i in 0..self.op.num_blocks() {
            pair = pair + dot(st.lambda.block(i), y.block(i));
        }
        Ok(conj - pair)
    }
}

/// Result of the primal/dual equivalence run.
#[derive(Debug, Clone, Copy)]
pub struct EquivalenceReport<F> {
    /// `max_n ‖ξ_n − A^* λ_n‖_∞` over the shared path.
    pub max_deviation: F,
    /// `max_n ‖ξ_n‖_∞`, the natural scale of the comparison.
    pub max_xi_inf: F,
    pub iterations: usize,
}

impl<F: Scalar> EquivalenceReport<F> {
    /// Deviation relative to the largest dual iterate.
    pub fn relative(&self) -> F {
        if self.max_xi_inf > F::zero() {
            self.max_deviation / self.max_xi_inf
        } else {
            self.max_deviation
        }
    }
}

/// Runs the mirror descent iteration (rule `S1`) and the dual block
/// gradient iteration on the identical batch sequence and measures
/// `max_n ‖ξ_n − A^* λ_n‖_∞`.
pub fn check_equivalence<F: Scalar, Op: BlockOperator<F> + ?Sized>(
    op: &Op,
    map: &MirrorMap<F>,
    table: StepTable<F>,
    shared_path: &[BatchIndexSet],
    data: &BlockVec<F>,
) -> Result<EquivalenceReport<F>> {
    let batch_size = shared_path.first().map(|s| s.len()).unwrap_or(1);
    let dual = DualEngine::new(op, map, table.clone(), batch_size, data)?;
    let mut dual_state = dual.initial_state();

    let m = op.input_dim();
    let mut xi = vec![F::zero(); m];
    let mut xi_from_dual = vec![F::zero(); m];
    let mut max_dev = F::zero();
    let mut max_xi = F::zero();

    for set in shared_path {
        // primal step (Algorithm 3.1 with rule S1)
        let t = table.step_for(set)?;
        let x = map.mirror_solve(&xi)?;
        let mut r = op.apply(set, &x)?;
        let mut off = 0;
        for &i in set.indices() {
            let y_i = data.block(i);
            for (rv, &yv) in r[off..off + y_i.len()].iter_mut().zip(y_i.iter()) {
                *rv -= yv;
            }
            off += y_i.len();
        }
        let g = op.adjoint_apply(set, &r)?;
        for (xiv, gv) in xi.iter_mut().zip(g.iter()) {
            *xiv = *xiv - t * *gv;
        }

        // dual step on the same batch
        dual.step_with_batch(&mut dual_state, set)?;

        dual.dual_to_primal_dual(&dual_state, &mut xi_from_dual)?;
        let dev = xi
            .iter()
            .zip(xi_from_dual.iter())
            .fold(F::zero(), |acc, (a, b)| acc.max((*a - *b).abs()));
        max_dev = max_dev.max(dev);
        max_xi = max_xi.max(norm_inf(&xi));
    }

    Ok(EquivalenceReport {
        max_deviation: max_dev,
        max_xi_inf: max_xi,
        iterations: shared_path.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Sampler;
    use crate::operators::MatrixBlockOperator;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_op(seed: u64, p: usize, m: usize) -> (MatrixBlockOperator<f64>, BlockVec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let op = MatrixBlockOperator::from_dense_rows(m, rows).unwrap();
        let truth: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = op.apply_full(&truth).unwrap();
        (op, y)
    }

    fn safe_constant_step(op: &MatrixBlockOperator<f64>, sigma: f64) -> f64 {
        let full = op
            .estimate_norm(&BatchIndexSet::full(op.num_blocks()), 1e-6, 2000)
            .unwrap();
        0.9 * 4.0 * sigma / (full.value * full.value)
    }

    fn record_path(p: usize, b: usize, iters: usize, seed: u64) -> Vec<BatchIndexSet> {
        let sampler = Sampler::UniformBatch { b };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scratch = Vec::new();
        (0..iters)
            .map(|n| sampler.sample(p, n as u64, &mut rng, &mut scratch).unwrap())
            .collect()
    }

    #[test]
    fn one_step_hand_computation() {
        // p=1, quadratic map, A=(1,0), y=(2), t=0.5:
        // λ_1 = 0 − 0.5(0−2) = (1); x_1 = A^T λ_1 = (1,0)
        let op = MatrixBlockOperator::from_dense_rows(2, vec![vec![1.0, 0.0]]).unwrap();
        let map = MirrorMap::quadratic(2);
        let y = BlockVec::from_blocks(vec![vec![2.0]]);
        let dual = DualEngine::new(&op, &map, StepTable::Constant(0.5), 1, &y).unwrap();
        let mut st = dual.initial_state();
        dual.step_with_batch(&mut st, &BatchIndexSet::singleton(0))
            .unwrap();
        assert_eq!(st.lambda.block(0), &[1.0]);
        let mut xi = vec![0.0; 2];
        dual.dual_to_primal_dual(&st, &mut xi).unwrap();
        assert_eq!(xi, vec![1.0, 0.0]);
    }

    #[test]
    fn zero_residual_leaves_lambda_unchanged() {
        let op = MatrixBlockOperator::from_dense_rows(2, vec![vec![1.0, 0.0]]).unwrap();
        let map = MirrorMap::quadratic(2);
        let y = BlockVec::from_blocks(vec![vec![0.0]]);
        let dual = DualEngine::new(&op, &map, StepTable::Constant(0.5), 1, &y).unwrap();
        let mut st = dual.initial_state();
        dual.step_with_batch(&mut st, &BatchIndexSet::singleton(0))
            .unwrap();
        assert_eq!(st.lambda.block(0), &[0.0]);
    }

    #[test]
    fn undrawn_blocks_stay_exactly_zero() {
        let (op, y) = random_op(4, 6, 5);
        let map = MirrorMap::quadratic(5);
        let t = safe_constant_step(&op, 0.5);
        let dual = DualEngine::new(&op, &map, StepTable::Constant(t), 2, &y).unwrap();
        let mut st = dual.initial_state();
        // only draw blocks {0, 2}
        for _ in 0..20 {
            dual.step_with_batch(&mut st, &BatchIndexSet::new(vec![0, 2], 6).unwrap())
                .unwrap();
        }
        for i in [1usize, 3, 4, 5] {
            assert!(st.lambda.block(i).iter().all(|v| *v == 0.0));
        }
        assert!(st.lambda.block(0).iter().any(|v| *v != 0.0));
    }

    #[test]
    fn dual_objective_closed_form_for_quadratic() {
        // quadratic map: d(λ) = ½‖A^Tλ‖² − ⟨λ, y⟩
        let (op, y) = random_op(9, 5, 4);
        let map = MirrorMap::quadratic(4);
        let t = safe_constant_step(&op, 0.5);
        let dual = DualEngine::new(&op, &map, StepTable::Constant(t), 1, &y).unwrap();
        let mut st = dual.initial_state();
        // λ = 0 → d = −R(x̂_0) = 0 for the quadratic map
        assert_eq!(dual.dual_objective(&st, &y).unwrap(), 0.0);
        let path = record_path(5, 1, 40, 2);
        for set in &path {
            dual.step_with_batch(&mut st, set).unwrap();
        }
        let d = dual.dual_objective(&st, &y).unwrap();
        let mut xi = vec![0.0; 4];
        dual.dual_to_primal_dual(&st, &mut xi).unwrap();
        let direct = 0.5 * xi.iter().map(|v| v * v).sum::<f64>()
            - (0..5)
                .map(|i| dot(st.lambda.block(i), y.block(i)))
                .sum::<f64>();
        assert!((d - direct).abs() < 1e-12 * (1.0 + d.abs()));
    }

    #[test]
    fn dual_objective_mean_decreases_on_exact_data() {
        // ensemble-mean descent of d_y along the iteration with exact data
        let (op, y) = random_op(31, 8, 6);
        let map = MirrorMap::quadratic(6);
        let t = safe_constant_step(&op, 0.5);
        let paths = 40;
        let iters = 30;
        let mut means = vec![0.0f64; iters + 1];
        for k in 0..paths {
            let dual = DualEngine::new(&op, &map, StepTable::Constant(t), 1, &y).unwrap();
            let mut st = dual.initial_state();
            let path = record_path(8, 1, iters, 1000 + k);
            means[0] += dual.dual_objective(&st, &y).unwrap();
            for (j, set) in path.iter().enumerate() {
                dual.step_with_batch(&mut st, set).unwrap();
                means[j + 1] += dual.dual_objective(&st, &y).unwrap();
            }
        }
        for v in means.iter_mut() {
            *v /= paths as f64;
        }
        for w in means.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "mean dual objective rose: {w:?}");
        }
    }

    #[test]
    fn single_step_equivalence_is_tight() {
        let (op, y) = random_op(14, 6, 8);
        let map = MirrorMap::quadratic(8);
        let t = safe_constant_step(&op, 0.5);
        let path = record_path(6, 2, 1, 5);
        let report = check_equivalence(&op, &map, StepTable::Constant(t), &path, &y).unwrap();
        assert!(report.max_xi_inf > 0.0);
        assert!(report.max_deviation <= 1e-14 * report.max_xi_inf.max(1.0));
    }

    #[test]
    fn equivalence_over_long_paths() {
        for (map, b, seed) in [
            (MirrorMap::quadratic(30), 3usize, 71u64),
            (MirrorMap::elastic_net(30, 0.05).unwrap(), 1, 72),
        ] {
            let (op, y) = random_op(seed, 20, 30);
            let t = safe_constant_step(&op, map.sigma());
            let path = record_path(20, b, 200, seed + 1);
            let report = check_equivalence(&op, &map, StepTable::Constant(t), &path, &y).unwrap();
            assert_eq!(report.iterations, 200);
            assert!(
                report.max_deviation <= 1e-10 * report.max_xi_inf,
                "deviation {} vs scale {}",
                report.max_deviation,
                report.max_xi_inf
            );
        }
    }

    #[test]
    fn per_block_table_allowed_only_for_singletons() {
        let (op, y) = random_op(3, 4, 5);
        let map = MirrorMap::quadratic(5);
        let table = StepTable::per_block_scaled(&op, 1.0f64).unwrap();
        assert!(DualEngine::new(&op, &map, table.clone(), 2, &y).is_err());
        assert!(DualEngine::new(&op, &map, table, 1, &y).is_ok());
    }
}
