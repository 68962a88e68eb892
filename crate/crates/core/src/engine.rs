//! The mini-batch stochastic mirror descent engine.
//!
//! One iteration holds the state `(ξ_n, x_n)` with `x_n = ∇R*(ξ_n)`, draws a
//! batch `I_n`, computes the batch residual `r = A_{I_n} x_n − y_{I_n}^δ`, a
//! step size `t_n` from the configured rule, and updates
//! `ξ_{n+1} = ξ_n − t_n A_{I_n}^* r`. The initial dual variable is `ξ_0 = 0`.
//!
//! An engine instance is immutable and may be shared across threads; each
//! run owns its [`IterateState`] and scratch buffers, so distinct runs over
//! the same engine proceed independently. A single run is strictly
//! sequential.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::block::{BatchIndexSet, BlockVec};
use crate::error::{Result, SolverError};
use crate::mirror::MirrorMap;
use crate::operators::BlockOperator;
use crate::scalar::{norm, Scalar};
use crate::stepsize::StepRule;

/// Batch selection scheme.
#[derive(Debug, Clone)]
pub enum Sampler {
    /// Draws a size-`b` subset uniformly over all `C(p, b)` subsets via
    /// partial Fisher–Yates, then sorts it.
    UniformBatch { b: usize },
    /// The deterministic Kaczmarz sweep `i_n = n mod p` (batch size 1).
    Cyclic,
}

impl Sampler {
    pub fn batch_size(&self) -> usize {
        match self {
            Sampler::UniformBatch { b } => *b,
            Sampler::Cyclic => 1,
        }
    }

    /// Draws the batch for iteration `n`. `scratch` persists across calls to
    /// avoid reallocation; its content does not affect the draw.
    pub fn sample(
        &self,
        p: usize,
        n: u64,
        rng: &mut ChaCha8Rng,
        scratch: &mut Vec<usize>,
    ) -> Result<BatchIndexSet> {
        match self {
            Sampler::Cyclic => Ok(BatchIndexSet::singleton((n % p as u64) as usize)),
            Sampler::UniformBatch { b } => {
                let b = *b;
                if b == 0 || b > p {
                    return Err(SolverError::invalid(format!(
                        "batch size {b} out of range for p={p}"
                    )));
                }
                scratch.clear();
                scratch.extend(0..p);
                for j in 0..b {
                    let k = rng.random_range(j..p);
                    scratch.swap(j, k);
                }
                let mut idx = scratch[..b].to_vec();
                idx.sort_unstable();
                BatchIndexSet::new(idx, p)
            }
        }
    }
}

/// Engine iterate: dual variable, primal iterate, counter and RNG.
///
/// The invariant `x == mirror_solve(ξ)` holds after every step; at `n = 0`
/// the dual variable is the zero vector.
#[derive(Debug, Clone)]
pub struct IterateState<F> {
    pub xi: Vec<F>,
    pub x: Vec<F>,
    pub n: u64,
    pub rng: ChaCha8Rng,
}

/// Stopping rules for [`SmdEngine::run`].
#[derive(Debug, Clone)]
pub enum StopSpec<F> {
    /// Run exactly `n` iterations (capped by the budget).
    Fixed(u64),
    /// A-priori rule `n = ceil(c / δ²)` from the total noise level, capped
    /// by the budget; with exact data the budget applies.
    APriori { c: F },
    /// Stop once `‖A_i x − y_i^δ‖ ≤ τ δ_i` for every block, checked once
    /// per sweep (`p/b` iterations). Requires rule `S3`.
    DiscrepancyAll,
}

/// Per-iteration quantities recorded optionally alongside the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricKind {
    /// Squared relative error `‖x − x†‖² / ‖x†‖²` (quadrature-weighted when
    /// the problem carries grid weights).
    RelL2,
    /// Squared (weighted) L¹ error `‖x − x†‖₁²`.
    L1Sq,
    /// Bregman distance `D_R^{ξ_n}(x†, x_n)`.
    Bregman,
    /// Full residual `‖A x − y^δ‖`, throttled to every `full_res_every`-th
    /// iteration.
    Residual,
}

/// Reference solution and the norm data needed for error metrics.
#[derive(Debug, Clone)]
pub struct TruthSpec<F> {
    /// The sought solution on the full primal vector (stacked for product
    /// maps).
    pub x: Vec<F>,
    /// Quadrature weights over the leading `primary_len` components; `None`
    /// means plain Euclidean.
    pub weights: Option<Vec<F>>,
    /// Error metrics are restricted to the leading components (the `x` part
    /// of a stacked `(x, z)` vector); `None` means the full vector.
    pub primary_len: Option<usize>,
}

/// Recording and metric options for a run.
#[derive(Debug, Clone)]
pub struct EngineOptions<F> {
    /// Record every `k`-th iteration (1 = all); the final state is always
    /// recorded.
    pub record_every: usize,
    /// Period of full-residual evaluation; `None` defaults to one sweep
    /// (`p/b`).
    pub full_res_every: Option<usize>,
    /// Which per-iteration quantities to compute.
    pub metrics: Vec<MetricKind>,
    pub truth: Option<TruthSpec<F>>,
}

impl<F: Scalar> Default for EngineOptions<F> {
    fn default() -> Self {
        EngineOptions {
            record_every: 1,
            full_res_every: None,
            metrics: Vec::new(),
            truth: None,
        }
    }
}

/// One trace record. Records at `n < stopped_at` describe iteration `n`:
/// the metrics of the pre-update iterate `x_n` together with the action
/// taken (batch, step, batch residual). The terminal record carries only
/// the metrics of the final iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<F> {
    pub n: u64,
    pub indices: Vec<usize>,
    pub t: Option<F>,
    pub batch_res: Option<F>,
    pub full_res: Option<F>,
    pub rel_err: Option<F>,
    pub bregman: Option<F>,
    pub l1_sq: Option<F>,
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    ReachedTarget,
    DiscrepancySatisfied,
}

/// Per-iteration record of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace<F> {
    pub records: Vec<StepRecord<F>>,
    pub stopped_at: u64,
    pub reason: StopReason,
}

impl<F: Scalar> RunTrace<F> {
    /// Writes the trace as CSV with the mandatory header
    /// `n,indices,t,batch_res,full_res,rel_err,bregman`. Indices are
    /// 0-based and semicolon-joined; floats carry 17 significant digits;
    /// absent values are blank.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "n,indices,t,batch_res,full_res,rel_err,bregman")?;
        let fmt = |v: &Option<F>| match v {
            Some(x) => format!("{:.16e}", x),
            None => String::new(),
        };
        for r in &self.records {
            let idx = r
                .indices
                .iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(";");
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.n,
                idx,
                fmt(&r.t),
                fmt(&r.batch_res),
                fmt(&r.full_res),
                fmt(&r.rel_err),
                fmt(&r.bregman),
            )?;
        }
        Ok(())
    }

    /// Series of a recorded metric as `(n, value)` pairs.
    pub fn series(&self, kind: MetricKind) -> Vec<(u64, F)> {
        self.records
            .iter()
            .filter_map(|r| {
                let v = match kind {
                    MetricKind::RelL2 => r.rel_err,
                    MetricKind::L1Sq => r.l1_sq,
                    MetricKind::Bregman => r.bregman,
                    MetricKind::Residual => r.full_res,
                };
                v.map(|v| (r.n, v))
            })
            .collect()
    }
}

/// Outcome of one engine step.
#[derive(Debug, Clone)]
pub struct StepOutcome<F> {
    pub set: BatchIndexSet,
    pub t: F,
    pub batch_res: F,
}

/// Reusable per-run buffers.
#[derive(Debug, Default)]
pub struct Workspace<F> {
    residual: Vec<F>,
    gradient: Vec<F>,
    perm: Vec<usize>,
    full: Vec<F>,
}

impl<F: Scalar> Workspace<F> {
    pub fn new() -> Self {
        Workspace {
            residual: Vec::new(),
            gradient: Vec::new(),
            perm: Vec::new(),
            full: Vec::new(),
        }
    }
}

/// The stochastic mirror descent engine (read-only once built).
pub struct SmdEngine<'a, F: Scalar, Op: BlockOperator<F> + ?Sized> {
    op: &'a Op,
    map: &'a MirrorMap<F>,
    rule: StepRule<F>,
    sampler: Sampler,
    data: &'a BlockVec<F>,
    noise_levels: Option<Vec<F>>,
    total_noise: F,
    opts: EngineOptions<F>,
    truth_den_l2: F,
}

impl<'a, F: Scalar, Op: BlockOperator<F> + ?Sized> SmdEngine<'a, F, Op> {
    pub fn new(
        op: &'a Op,
        map: &'a MirrorMap<F>,
        rule: StepRule<F>,
        sampler: Sampler,
        data: &'a BlockVec<F>,
        noise_levels: Option<Vec<F>>,
        opts: EngineOptions<F>,
    ) -> Result<Self> {
        let p = op.num_blocks();
        if p == 0 {
            return Err(SolverError::invalid("operator has no blocks"));
        }
        if map.dim() != op.input_dim() {
            return Err(SolverError::DimensionMismatch {
                what: "mirror map vs operator input",
                expected: op.input_dim(),
                got: map.dim(),
            });
        }
        if data.num_blocks() != p {
            return Err(SolverError::DimensionMismatch {
                what: "data blocks",
                expected: p,
                got: data.num_blocks(),
            });
        }
        for i in 0..p {
            if data.block_dim(i) != op.block_dim(i) {
                return Err(SolverError::DimensionMismatch {
                    what: "data block dimension",
                    expected: op.block_dim(i),
                    got: data.block_dim(i),
                });
            }
        }
        let b = sampler.batch_size();
        if b == 0 || b > p {
            return Err(SolverError::invalid(format!(
                "batch size {b} out of range for p={p}"
            )));
        }
        rule.validate(op, map.sigma(), b)?;
        if rule.needs_noise_levels() && noise_levels.is_none() {
            return Err(SolverError::invalid(
                "rule S3 requires per-block noise levels",
            ));
        }
        if let Some(levels) = &noise_levels {
            if levels.len() != p {
                return Err(SolverError::DimensionMismatch {
                    what: "noise levels",
                    expected: p,
                    got: levels.len(),
                });
            }
            if levels.iter().any(|d| *d < F::zero()) {
                return Err(SolverError::invalid("noise levels must be >= 0"));
            }
        }
        if opts.record_every == 0 {
            return Err(SolverError::invalid("record_every must be >= 1"));
        }
        let needs_truth = opts
            .metrics
            .iter()
            .any(|m| matches!(m, MetricKind::RelL2 | MetricKind::L1Sq | MetricKind::Bregman));
        if needs_truth && opts.truth.is_none() {
            return Err(SolverError::invalid(
                "error metrics require a reference solution",
            ));
        }
        let mut truth_den_l2 = F::zero();
        if let Some(truth) = &opts.truth {
            if truth.x.len() != map.dim() {
                return Err(SolverError::DimensionMismatch {
                    what: "truth vector",
                    expected: map.dim(),
                    got: truth.x.len(),
                });
            }
            let prim = truth.primary_len.unwrap_or(truth.x.len());
            if prim > truth.x.len() {
                return Err(SolverError::invalid("primary_len exceeds truth length"));
            }
            if let Some(w) = &truth.weights {
                if w.len() != prim {
                    return Err(SolverError::DimensionMismatch {
                        what: "truth weights",
                        expected: prim,
                        got: w.len(),
                    });
                }
            }
            truth_den_l2 = weighted_sq(&truth.x[..prim], truth.weights.as_deref());
        }
        let total_noise = match &noise_levels {
            Some(levels) => levels.iter().map(|d| *d * *d).sum::<F>().sqrt(),
            None => F::zero(),
        };
        Ok(SmdEngine {
            op,
            map,
            rule,
            sampler,
            data,
            noise_levels,
            total_noise,
            opts,
            truth_den_l2,
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.op.num_blocks()
    }

    pub fn batch_size(&self) -> usize {
        self.sampler.batch_size()
    }

    pub fn total_noise(&self) -> F {
        self.total_noise
    }

    pub fn rule(&self) -> &StepRule<F> {
        &self.rule
    }

    /// Fresh state at `n = 0` with `ξ_0 = 0`.
    pub fn initial_state(&self, seed: u64) -> Result<IterateState<F>> {
        let xi = vec![F::zero(); self.map.dim()];
        let x = self.map.mirror_solve(&xi)?;
        Ok(IterateState {
            xi,
            x,
            n: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Draws a batch and advances the state by one iteration.
    pub fn step(&self, st: &mut IterateState<F>, ws: &mut Workspace<F>) -> Result<StepOutcome<F>> {
        let set = self
            .sampler
            .sample(self.op.num_blocks(), st.n, &mut st.rng, &mut ws.perm)?;
        self.step_with_batch(st, &set, ws)
    }

    /// Advances the state by one iteration on a prescribed batch.
    pub fn step_with_batch(
        &self,
        st: &mut IterateState<F>,
        set: &BatchIndexSet,
        ws: &mut Workspace<F>,
    ) -> Result<StepOutcome<F>> {
        let bd = self.op.batch_dim(set);
        ws.residual.resize(bd, F::zero());
        self.op.apply_into(set, &st.x, &mut ws.residual)?;
        let mut off = 0;
        for &i in set.indices() {
            let y_i = self.data.block(i);
            for (r, &y) in ws.residual[off..off + y_i.len()].iter_mut().zip(y_i) {
                *r -= y;
            }
            off += y_i.len();
        }
        let batch_res = norm(&ws.residual);

        ws.gradient.resize(self.op.input_dim(), F::zero());
        self.op
            .adjoint_apply_into(set, &ws.residual, &mut ws.gradient)?;

        let delta_batch = self.batch_noise_level(set);
        let t = self
            .rule
            .compute_step(&ws.residual, &ws.gradient, set, delta_batch)?;
        if !t.is_finite() {
            return Err(SolverError::NonFinite("step size"));
        }

        if t != F::zero() {
            for (xi, g) in st.xi.iter_mut().zip(ws.gradient.iter()) {
                *xi = *xi - t * *g;
            }
            self.map.mirror_solve_into(&st.xi, &mut st.x)?;
        }
        st.n += 1;

        Ok(StepOutcome {
            set: set.clone(),
            t,
            batch_res,
        })
    }

    /// `δ_I = sqrt(Σ_{i∈I} δ_i²)`.
    pub fn batch_noise_level(&self, set: &BatchIndexSet) -> F {
        match &self.noise_levels {
            Some(levels) => set
                .indices()
                .iter()
                .map(|&i| levels[i] * levels[i])
                .sum::<F>()
                .sqrt(),
            None => F::zero(),
        }
    }

    /// Runs the iteration from a fresh seeded state.
    pub fn run(&self, seed: u64, budget: u64, stop: &StopSpec<F>) -> Result<RunTrace<F>> {
        if budget == 0 {
            return Err(SolverError::invalid("iteration budget must be >= 1"));
        }
        let p = self.op.num_blocks();
        let b = self.sampler.batch_size();
        let sweep = (p / b).max(1) as u64;
        let full_every = self.opts.full_res_every.map(|k| k as u64).unwrap_or(sweep).max(1);

        let n_target = match stop {
            StopSpec::Fixed(n) => (*n).min(budget),
            StopSpec::APriori { c } => {
                if self.total_noise > F::zero() {
                    let raw = (*c / (self.total_noise * self.total_noise)).ceil();
                    let raw = raw.max(F::one());
                    let capped = raw.min(F::cast(budget as f64));
                    capped.to_u64().unwrap_or(budget).min(budget)
                } else {
                    budget
                }
            }
            StopSpec::DiscrepancyAll => {
                if !matches!(self.rule, StepRule::S3 { .. }) {
                    return Err(SolverError::invalid(
                        "discrepancy stopping requires rule S3",
                    ));
                }
                budget
            }
        };

        let mut st = self.initial_state(seed)?;
        let mut ws = Workspace::new();
        let mut records = Vec::new();
        let mut reason = StopReason::ReachedTarget;

        while st.n < n_target {
            let n = st.n;
            if matches!(stop, StopSpec::DiscrepancyAll)
                && n % sweep == 0
                && self.discrepancy_satisfied(&st.x, &mut ws)?
            {
                reason = StopReason::DiscrepancySatisfied;
                break;
            }
            let record_now = n % self.opts.record_every as u64 == 0;
            let mut record = if record_now {
                let mut r = self.metrics_record(n, &st, &mut ws)?;
                if self.opts.metrics.contains(&MetricKind::Residual) && n % full_every == 0 {
                    r.full_res = Some(self.full_residual(&st.x, &mut ws)?);
                }
                Some(r)
            } else {
                None
            };
            let out = self.step(&mut st, &mut ws)?;
            if let Some(rec) = record.as_mut() {
                rec.indices = out.set.indices().to_vec();
                rec.t = Some(out.t);
                rec.batch_res = Some(out.batch_res);
            }
            if let Some(rec) = record {
                records.push(rec);
            }
        }

        // Terminal record: metrics of the final iterate, no action fields.
        let mut last = self.metrics_record(st.n, &st, &mut ws)?;
        if self.opts.metrics.contains(&MetricKind::Residual) {
            last.full_res = Some(self.full_residual(&st.x, &mut ws)?);
        }
        records.push(last);

        Ok(RunTrace {
            records,
            stopped_at: st.n,
            reason,
        })
    }

    fn metrics_record(
        &self,
        n: u64,
        st: &IterateState<F>,
        _ws: &mut Workspace<F>,
    ) -> Result<StepRecord<F>> {
        let mut rec = StepRecord {
            n,
            indices: Vec::new(),
            t: None,
            batch_res: None,
            full_res: None,
            rel_err: None,
            bregman: None,
            l1_sq: None,
        };
        if let Some(truth) = &self.opts.truth {
            let prim = truth.primary_len.unwrap_or(truth.x.len());
            let w = truth.weights.as_deref();
            if self.opts.metrics.contains(&MetricKind::RelL2) {
                let num = weighted_diff_sq(&st.x[..prim], &truth.x[..prim], w);
                rec.rel_err = Some(num / self.truth_den_l2);
            }
            if self.opts.metrics.contains(&MetricKind::L1Sq) {
                let l1 = weighted_diff_l1(&st.x[..prim], &truth.x[..prim], w);
                rec.l1_sq = Some(l1 * l1);
            }
            if self.opts.metrics.contains(&MetricKind::Bregman) {
                rec.bregman = Some(self.map.bregman(&st.xi, &st.x, &truth.x));
            }
        }
        Ok(rec)
    }

    fn full_residual(&self, x: &[F], ws: &mut Workspace<F>) -> Result<F> {
        ws.full.resize(self.data.total_len(), F::zero());
        let set = BatchIndexSet::full(self.op.num_blocks());
        self.op.apply_into(&set, x, &mut ws.full)?;
        for (r, &y) in ws.full.iter_mut().zip(self.data.data().iter()) {
            *r -= y;
        }
        Ok(norm(&ws.full))
    }

    fn discrepancy_satisfied(&self, x: &[F], ws: &mut Workspace<F>) -> Result<bool> {
        let levels = self
            .noise_levels
            .as_ref()
            .ok_or_else(|| SolverError::invalid("discrepancy stop requires noise levels"))?;
        let tau = self
            .rule
            .tau()
            .ok_or_else(|| SolverError::invalid("discrepancy stop requires rule S3"))?;
        ws.full.resize(self.data.total_len(), F::zero());
        let set = BatchIndexSet::full(self.op.num_blocks());
        self.op.apply_into(&set, x, &mut ws.full)?;
        for (r, &y) in ws.full.iter_mut().zip(self.data.data().iter()) {
            *r -= y;
        }
        let mut off = 0;
        for i in 0..self.op.num_blocks() {
            let d = self.op.block_dim(i);
            let res = norm(&ws.full[off..off + d]);
            if res > tau * levels[i] {
                return Ok(false);
            }
            off += d;
        }
        Ok(true)
    }
}

fn weighted_sq<F: Scalar>(v: &[F], w: Option<&[F]>) -> F {
    match w {
        Some(w) => {
            let mut acc = F::zero();
            for (&x, &wi) in v.iter().zip(w.iter()) {
                acc = acc + wi * x * x;
            }
            acc
        }
        None => v.iter().map(|x| *x * *x).sum(),
    }
}

fn weighted_diff_sq<F: Scalar>(a: &[F], b: &[F], w: Option<&[F]>) -> F {
    match w {
        Some(w) => {
            let mut acc = F::zero();
            for ((&x, &y), &wi) in a.iter().zip(b.iter()).zip(w.iter()) {
                let d = x - y;
                acc = acc + wi * d * d;
            }
            acc
        }
        None => {
            let mut acc = F::zero();
            for (&x, &y) in a.iter().zip(b.iter()) {
                let d = x - y;
                acc = acc + d * d;
            }
            acc
        }
    }
}

fn weighted_diff_l1<F: Scalar>(a: &[F], b: &[F], w: Option<&[F]>) -> F {
    match w {
        Some(w) => {
            let mut acc = F::zero();
            for ((&x, &y), &wi) in a.iter().zip(b.iter()).zip(w.iter()) {
                acc = acc + wi * (x - y).abs();
            }
            acc
        }
        None => {
            let mut acc = F::zero();
            for (&x, &y) in a.iter().zip(b.iter()) {
                acc = acc + (x - y).abs();
            }
            acc
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::MatrixBlockOperator;
    use crate::stepsize::StepTable;
    use std::collections::HashMap;

    fn opts_plain() -> EngineOptions<f64> {
        EngineOptions::default()
    }

    #[test]
    fn cyclic_schedule() {
        let s = Sampler::Cyclic;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut scratch = Vec::new();
        let drawn: Vec<usize> = (0..4)
            .map(|n| s.sample(3, n, &mut rng, &mut scratch).unwrap().indices()[0])
            .collect();
        assert_eq!(drawn, vec![0, 1, 2, 0]);
    }

    #[test]
    fn full_batch_is_unique_subset() {
        let s = Sampler::UniformBatch { b: 5 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut scratch = Vec::new();
        for n in 0..10 {
            let set = s.sample(5, n, &mut rng, &mut scratch).unwrap();
            assert_eq!(set.indices(), &[0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn oversized_batch_rejected() {
        let s = Sampler::UniformBatch { b: 6 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut scratch = Vec::new();
        assert!(s.sample(5, 0, &mut rng, &mut scratch).is_err());
    }

    #[test]
    fn uniform_subset_frequencies() {
        // p=4, b=2: each of the 6 subsets with frequency 1/6 ± 0.01
        let s = Sampler::UniformBatch { b: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut scratch = Vec::new();
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        let draws = 60_000;
        for n in 0..draws {
            let set = s.sample(4, n, &mut rng, &mut scratch).unwrap();
            *counts.entry(set.indices().to_vec()).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for (_, c) in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 1.0 / 6.0).abs() < 0.01, "frequency {freq}");
        }
    }

    #[test]
    fn one_step_hand_computation() {
        // quadratic map, p=1, A=(1,0), y=(2), x0=0, S1 t=0.5:
        // ξ_1 = (0,0) − 0.5·1·(0−2)·(1,0) = (1,0), x_1 = (1,0)
        let op = MatrixBlockOperator::from_dense_rows(2, vec![vec![1.0, 0.0]]).unwrap();
        let map = MirrorMap::quadratic(2);
        let data = BlockVec::from_blocks(vec![vec![2.0]]);
        let engine = SmdEngine::new(
            &op,
            &map,
            StepRule::S1(StepTable::Constant(0.5)),
            Sampler::Cyclic,
            &data,
            None,
            opts_plain(),
        )
        .unwrap();
        let mut st = engine.initial_state(0).unwrap();
        let mut ws = Workspace::new();
        let out = engine.step(&mut st, &mut ws).unwrap();
        assert_eq!(out.t, 0.5);
        assert_eq!(st.xi, vec![1.0, 0.0]);
        assert_eq!(st.x, vec![1.0, 0.0]);
        assert_eq!(st.n, 1);
    }

    #[test]
    fn zero_residual_fixed_point() {
        let op = MatrixBlockOperator::from_dense_rows(2, vec![vec![1.0, 0.0]]).unwrap();
        let map = MirrorMap::quadratic(2);
        // y = A x with x = solve(ξ) for ξ = 0 ... use y = 0 so x0 = 0 solves.
        let data = BlockVec::from_blocks(vec![vec![0.0]]);
        let engine = SmdEngine::new(
            &op,
            &map,
            StepRule::S2 { mu0: 1.0, mu1_cap: 10.0 },
            Sampler::Cyclic,
            &data,
            None,
            opts_plain(),
        )
        .unwrap();
        let mut st = engine.initial_state(0).unwrap();
        let xi0 = st.xi.clone();
        let x0 = st.x.clone();
        let mut ws = Workspace::new();
        let out = engine.step(&mut st, &mut ws).unwrap();
        assert_eq!(out.t, 0.0);
        assert_eq!(st.xi, xi0);
        assert_eq!(st.x, x0);
    }

    fn random_problem(
        seed: u64,
        p: usize,
        m: usize,
    ) -> (MatrixBlockOperator<f64>, Vec<f64>, BlockVec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let op = MatrixBlockOperator::from_dense_rows(m, rows).unwrap();
        let truth: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = op.apply_full(&truth).unwrap();
        (op, truth, y)
    }

    #[test]
    fn full_batch_equals_full_gradient_method() {
        // with b=p and S1 scalar t the update equals the full-batch method
        let (op, _truth, y) = random_problem(12, 4, 6);
        let map = MirrorMap::quadratic(6);
        let t = 0.05;
        let engine = SmdEngine::new(
            &op,
            &map,
            StepRule::S1(StepTable::Constant(t)),
            Sampler::UniformBatch { b: 4 },
            &y,
            None,
            opts_plain(),
        )
        .unwrap();
        let mut st = engine.initial_state(3).unwrap();
        let mut ws = Workspace::new();

        // reference: ξ ← ξ − t Σ_i A_i^T (A_i x − y_i)
        let mut xi_ref = vec![0.0f64; 6];
        for _ in 0..25 {
            let x_ref = map.mirror_solve(&xi_ref).unwrap();
            let full = BatchIndexSet::full(4);
            let mut r = op.apply(&full, &x_ref).unwrap();
            for (rv, yv) in r.iter_mut().zip(y.data().iter()) {
                *rv -= *yv;
            }
            let g = op.adjoint_apply(&full, &r).unwrap();
            for (xi, gv) in xi_ref.iter_mut().zip(g.iter()) {
                *xi = *xi - t * *gv;
            }
            engine.step(&mut st, &mut ws).unwrap();
            assert_eq!(st.xi, xi_ref);
        }
    }

    #[test]
    fn state_invariant_after_every_step() {
        let (op, _truth, y) = random_problem(5, 5, 7);
        let map = MirrorMap::elastic_net(7, 0.1).unwrap();
        let engine = SmdEngine::new(
            &op,
            &map,
            StepRule::S2 { mu0: 1.0, mu1_cap: 1e6 },
            Sampler::UniformBatch { b: 2 },
            &y,
            None,
            opts_plain(),
        )
        .unwrap();
        let mut st = engine.initial_state(7).unwrap();
        let mut ws = Workspace::new();
        for _ in 0..50 {
            engine.step(&mut st, &mut ws).unwrap();
            let resolved = map.mirror_solve(&st.xi).unwrap();
            assert_eq!(st.x, resolved);
        }
    }

    #[test]
    fn budget_zero_rejected() {
        let (op, _t, y) = random_problem(1, 3, 4);
        let map = MirrorMap::quadratic(4);
        let engine = SmdEngine::new(
            &op,
            &map,
            StepRule::S2 { mu0: 1.0, mu1_cap: 1e6 },
            Sampler::Cyclic,
            &y,
            None,
            opts_plain(),
        )
        .unwrap();
        assert!(engine.run(0, 0, &StopSpec::Fixed(10)).is_err());
    }

    #[test]
    fn exact_data_descent_s2() {
        // with exact data the Bregman distance to the truth is non-increasing
        let (op, truth, y) = random_problem(21, 8, 10);
        let map = MirrorMap::quadratic(10);
        let opts = EngineOptions {
            record_every: 1,
            full_res_every: None,
            metrics: vec![MetricKind::Bregman],
            truth: Some(TruthSpec {
                x: truth.clone(),
                weights: None,
                primary_len: None,
            }),
        };
        let engine = SmdEngine::new(
            &op,
            &map,
            StepRule::S2 { mu0: 1.0, mu1_cap: 1e6 },
            Sampler::UniformBatch { b: 3 },
            &y,
            None,
            opts,
        )
        .unwrap();
        let trace = engine.run(11, 2000, &StopSpec::Fixed(2000)).unwrap();
        let breg = trace.series(MetricKind::Bregman);
        for w in breg.windows(2) {
            assert!(
                w[1].1 <= w[0].1 + 1e-12,
                "Bregman increased: {} -> {}",
                w[0].1,
                w[1].1
            );
        }
        // and the error actually decreases
        assert!(breg.last().unwrap().1 < 0.5 * breg[0].1);
    }

    #[test]
    fn reproducible_traces() {
        let (op, truth, y) = random_problem(33, 6, 9);
        let map = MirrorMap::quadratic(9);
        let opts = EngineOptions {
            record_every: 1,
            full_res_every: None,
            metrics: vec![MetricKind::RelL2, MetricKind::Bregman, MetricKind::Residual],
            truth: Some(TruthSpec {
                x: truth,
                weights: None,
                primary_len: None,
            }),
        };
        let engine = SmdEngine::new(
            &op,
            &map,
            StepRule::S2 { mu0: 1.5, mu1_cap: 1e6 },
            Sampler::UniformBatch { b: 2 },
            &y,
            None,
            opts,
        )
        .unwrap();
        let a = engine.run(42, 300, &StopSpec::Fixed(300)).unwrap();
        let b = engine.run(42, 300, &StopSpec::Fixed(300)).unwrap();
        assert_eq!(a, b);
        let c = engine.run(43, 300, &StopSpec::Fixed(300)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn a_priori_stop_counts() {
        let (op, _t, y) = random_problem(8, 4, 5);
        let map = MirrorMap::quadratic(5);
        // noise levels chosen so δ² = 0.01
        let levels = vec![0.05, 0.05, 0.05, 0.05];
        let delta_sq: f64 = levels.iter().map(|d| d * d).sum();
        let engine = SmdEngine::new(
            &op,
            &map,
            StepRule::S2 { mu0: 1.0, mu1_cap: 1e6 },
            Sampler::Cyclic,
            &y,
            Some(levels),
            opts_plain(),
        )
        .unwrap();
        let trace = engine
            .run(0, 100_000, &StopSpec::APriori { c: 1.0 })
            .unwrap();
        assert_eq!(trace.stopped_at, (1.0 / delta_sq).ceil() as u64);
        // capped by budget
        let trace = engine.run(0, 10, &StopSpec::APriori { c: 1.0 }).unwrap();
        assert_eq!(trace.stopped_at, 10);
    }

    #[test]
    fn discrepancy_stop_halts() {
        let (op, _t, y) = random_problem(17, 4, 5);
        let map = MirrorMap::quadratic(5);
        // generous noise levels: discrepancy already satisfied at start
        let levels = vec![100.0; 4];
        let engine = SmdEngine::new(
            &op,
            &map,
            StepRule::S3 {
                mu0: 1.0,
                mu1_cap: 1e6,
                tau: 1.0,
            },
            Sampler::Cyclic,
            &y,
            Some(levels),
            opts_plain(),
        )
        .unwrap();
        let trace = engine.run(0, 1000, &StopSpec::DiscrepancyAll).unwrap();
        assert_eq!(trace.stopped_at, 0);
        assert_eq!(trace.reason, StopReason::DiscrepancySatisfied);
    }

    #[test]
    fn trace_csv_shape() {
        let (op, truth, y) = random_problem(3, 3, 4);
        let map = MirrorMap::quadratic(4);
        let opts = EngineOptions {
            record_every: 1,
            full_res_every: Some(2),
            metrics: vec![MetricKind::RelL2, MetricKind::Bregman, MetricKind::Residual],
            truth: Some(TruthSpec {
                x: truth,
                weights: None,
                primary_len: None,
            }),
        };
        let engine = SmdEngine::new(
            &op,
            &map,
            StepRule::S2 { mu0: 1.0, mu1_cap: 1e6 },
            Sampler::Cyclic,
            &y,
            None,
            opts,
        )
        .unwrap();
        let trace = engine.run(1, 5, &StopSpec::Fixed(5)).unwrap();
        assert_eq!(trace.records.len(), 6); // 5 iteration records + terminal
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "n,indices,t,batch_res,full_res,rel_err,bregman"
        );
        assert_eq!(lines.count(), 6);
        // records strictly increasing in n
        for w in trace.records.windows(2) {
            assert!(w[1].n > w[0].n);
        }
        // full_res present every 2nd iteration and at the end
        assert!(trace.records[0].full_res.is_some());
        assert!(trace.records[1].full_res.is_none());
        assert!(trace.records[5].full_res.is_some());
    }
}
