//! Block linear operators with adjoints and spectral-norm estimation.
//!
//! A block operator is the stacked forward map `A = (A_1, …, A_p)` where each
//! `A_i` sends a primal vector of length `m` to a data vector of length `d_i`.
//! For a batch `I` the stacked map `A_I x` concatenates `A_i x` for `i ∈ I`
//! in index order, and the adjoint `A_I^* u = Σ_{i∈I} A_i^T u_i` is taken in
//! the Euclidean inner products.
//!
//! Spectral norms `‖A_I‖` are estimated by power iteration on `A_I^* A_I`
//! from a fixed seeded start vector, deliberately inflated by `(1 + tol)` so
//! that step-size bounds of the form `t < 4σ/‖A_I‖²` stay valid despite
//! estimation error. Estimates are memoized per index set.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::block::{BatchIndexSet, BlockVec};
use crate::error::{Result, SolverError};
use crate::scalar::{dot, norm, Scalar};

/// Seed of the fixed start vector used by every power iteration.
const NORM_SEED: u64 = 0x5eed_0f00;

/// Result of a spectral-norm estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate<F> {
    /// Upper estimate `(1 + tol) ×` converged Rayleigh-quotient root.
    pub value: F,
    /// False when `max_iters` ran out before the tolerance was met; the
    /// value is then the current (stale) estimate.
    pub converged: bool,
}

/// Internally synchronized memo from batch index sets to norm estimates.
#[derive(Debug, Default)]
pub struct NormCache<F> {
    map: Mutex<HashMap<Vec<usize>, NormEstimate<F>>>,
}

impl<F: Scalar> NormCache<F> {
    pub fn new() -> Self {
        NormCache {
            map: Mutex::new(HashMap::new()),
        }
    }

    fn get(&self, key: &[usize]) -> Option<NormEstimate<F>> {
        self.map.lock().unwrap().get(key).copied()
    }

    fn insert(&self, key: Vec<usize>, est: NormEstimate<F>) {
        self.map.lock().unwrap().insert(key, est);
    }
}

/// The stacked forward map with per-block apply/adjoint and norm estimates.
///
/// Implementations are immutable after construction except for the norm
/// cache, which is internally synchronized; all operations may be called
/// from concurrent workers.
pub trait BlockOperator<F: Scalar>: Send + Sync {
    /// Number of blocks `p`.
    fn num_blocks(&self) -> usize;

    /// Primal dimension `m`.
    fn input_dim(&self) -> usize;

    /// Output dimension `d_i` of block `i`.
    fn block_dim(&self, i: usize) -> usize;

    /// `out = A_i x`; `out` has length `d_i`.
    fn apply_block_into(&self, i: usize, x: &[F], out: &mut [F]);

    /// `acc += A_i^T u` with `u` of length `d_i`.
    fn adjoint_block_acc(&self, i: usize, u: &[F], acc: &mut [F]);

    /// The operator's norm memo.
    fn norm_cache(&self) -> &NormCache<F>;

    /// Stacked output dimension `Σ_{i∈I} d_i`.
    fn batch_dim(&self, set: &BatchIndexSet) -> usize {
        set.indices().iter().map(|&i| self.block_dim(i)).sum()
    }

    /// Output dimensions of all blocks.
    fn block_dims(&self) -> Vec<usize> {
        (0..self.num_blocks()).map(|i| self.block_dim(i)).collect()
    }

    fn check_batch(&self, set: &BatchIndexSet) -> Result<()> {
        let p = self.num_blocks();
        match set.indices().last() {
            Some(&last) if last < p => Ok(()),
            _ => Err(SolverError::invalid(format!(
                "batch indices exceed block count p={p}"
            ))),
        }
    }

    /// `out = A_I x`, blocks concatenated in index order.
    fn apply_into(&self, set: &BatchIndexSet, x: &[F], out: &mut [F]) -> Result<()> {
        self.check_batch(set)?;
        if x.len() != self.input_dim() {
            return Err(SolverError::DimensionMismatch {
                what: "apply input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let expected = self.batch_dim(set);
        if out.len() != expected {
            return Err(SolverError::DimensionMismatch {
                what: "apply output",
                expected,
                got: out.len(),
            });
        }
        let mut off = 0;
        for &i in set.indices() {
            let d = self.block_dim(i);
            self.apply_block_into(i, x, &mut out[off..off + d]);
            off += d;
        }
        Ok(())
    }

    /// `A_I x` as a fresh vector.
    fn apply(&self, set: &BatchIndexSet, x: &[F]) -> Result<Vec<F>> {
        let mut out = vec![F::zero(); self.batch_dim(set)];
        self.apply_into(set, x, &mut out)?;
        Ok(out)
    }

    /// `out = A_I^* u = Σ_{i∈I} A_i^T u_i` for a stacked `u`.
    fn adjoint_apply_into(&self, set: &BatchIndexSet, u: &[F], out: &mut [F]) -> Result<()> {
        self.check_batch(set)?;
        let expected = self.batch_dim(set);
        if u.len() != expected {
            return Err(SolverError::DimensionMismatch {
                what: "adjoint input",
                expected,
                got: u.len(),
            });
        }
        if out.len() != self.input_dim() {
            return Err(SolverError::DimensionMismatch {
                what: "adjoint output",
                expected: self.input_dim(),
                got: out.len(),
            });
        }
        out.fill(F::zero());
        let mut off = 0;
        for &i in set.indices() {
            let d = self.block_dim(i);
            self.adjoint_block_acc(i, &u[off..off + d], out);
            off += d;
        }
        Ok(())
    }

    /// `A_I^* u` as a fresh vector.
    fn adjoint_apply(&self, set: &BatchIndexSet, u: &[F]) -> Result<Vec<F>> {
        let mut out = vec![F::zero(); self.input_dim()];
        self.adjoint_apply_into(set, u, &mut out)?;
        Ok(out)
    }

    /// Upper estimate of `‖A_I‖` by power iteration on `A_I^* A_I`.
    ///
    /// Returns `(1 + tol) ×` the converged Rayleigh-quotient root; results
    /// with `converged = true` are cached per index set.
    fn estimate_norm(&self, set: &BatchIndexSet, tol: F, max_iters: usize) -> Result<NormEstimate<F>> {
        if tol <= F::zero() {
            return Err(SolverError::invalid("norm estimation tolerance must be > 0"));
        }
        self.check_batch(set)?;
        if let Some(est) = self.norm_cache().get(set.indices()) {
            return Ok(est);
        }
        let est = power_iteration(self, set, tol, max_iters);
        if est.converged {
            self.norm_cache().insert(set.indices().to_vec(), est);
        }
        Ok(est)
    }

    /// Applies the full operator: `A x` over all `p` blocks.
    fn apply_full(&self, x: &[F]) -> Result<BlockVec<F>> {
        let dims = self.block_dims();
        let mut out = BlockVec::zeros(&dims);
        for i in 0..self.num_blocks() {
            self.apply_block_into(i, x, out.block_mut(i));
        }
        Ok(out)
    }

    /// Assembles `A^* λ = Σ_i A_i^T λ_i` over all blocks.
    fn adjoint_full_into(&self, lambda: &BlockVec<F>, out: &mut [F]) -> Result<()> {
        if lambda.num_blocks() != self.num_blocks() {
            return Err(SolverError::DimensionMismatch {
                what: "adjoint_full blocks",
                expected: self.num_blocks(),
                got: lambda.num_blocks(),
            });
        }
        if out.len() != self.input_dim() {
            return Err(SolverError::DimensionMismatch {
                what: "adjoint_full output",
                expected: self.input_dim(),
                got: out.len(),
            });
        }
        out.fill(F::zero());
        for i in 0..self.num_blocks() {
            self.adjoint_block_acc(i, lambda.block(i), out);
        }
        Ok(())
    }
}

fn power_iteration<F: Scalar, Op: BlockOperator<F> + ?Sized>(
    op: &Op,
    set: &BatchIndexSet,
    tol: F,
    max_iters: usize,
) -> NormEstimate<F> {
    let m = op.input_dim();
    let bd = op.batch_dim(set);
    if m == 0 || bd == 0 {
        return NormEstimate {
            value: F::zero(),
            converged: true,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(NORM_SEED);
    let mut v: Vec<F> = (0..m)
        .map(|_| F::cast(rng.random_range(-1.0..1.0)))
        .collect();
    let nv = norm(&v);
    if nv == F::zero() {
        v[0] = F::one();
    } else {
        for x in v.iter_mut() {
            *x = *x / nv;
        }
    }

    let mut u = vec![F::zero(); bd];
    let mut w = vec![F::zero(); m];
    let mut sigma = F::zero();
    let mut converged = false;
    let half = F::cast(0.5);
    let quarter = F::cast(0.25);
    let mut rho_prev = F::zero();
    let mut incr_prev = F::zero();
    let mut ok_streak = 0usize;
    for iter in 0..max_iters {
        op.apply_into(set, &v, &mut u).expect("dims validated");
        op.adjoint_apply_into(set, &u, &mut w).expect("dims validated");
        // Rayleigh quotient of A^*A at the unit vector v.
        let rho = dot(&v, &w).max(F::zero());
        sigma = rho.sqrt();
        let wn = norm(&w);
        if wn == F::zero() {
            // v is annihilated; the operator is zero on the reachable space.
            converged = true;
            break;
        }
        // Eigen-residual test: once ‖A^*A v − ρ v‖ ≤ ½ tol ρ, the top
        // eigenvalue exceeds ρ by at most √2 · ½ tol ρ, so the (1+tol)
        // inflation below yields a genuine upper estimate.
        let mut resid_sq = F::zero();
        for (&wi, &vi) in w.iter().zip(v.iter()) {
            let d = wi - rho * vi;
            resid_sq = resid_sq + d * d;
        }
        if resid_sq.sqrt() <= half * tol * rho {
            converged = true;
            break;
        }
        // Aitken test for clustered spectra: the Rayleigh increments decay
        // geometrically, so the remaining gap is ≈ d·q/(1−q). Two
        // consecutive small estimates guard against premature mode mixing.
        if iter > 0 {
            let incr = (rho - rho_prev).max(F::zero());
            let small = if incr == F::zero() {
                true
            } else if incr_prev > F::zero() && incr < incr_prev {
                let q = incr / incr_prev;
                incr * q / (F::one() - q) <= quarter * tol * rho
            } else {
                false
            };
            ok_streak = if small { ok_streak + 1 } else { 0 };
            if ok_streak >= 2 {
                converged = true;
                break;
            }
            incr_prev = incr;
        }
        rho_prev = rho;
        for (vi, wi) in v.iter_mut().zip(w.iter()) {
            *vi = *wi / wn;
        }
    }
    NormEstimate {
        value: (F::one() + tol) * sigma,
        converged,
    }
}

/// Row storage backing [`MatrixBlockOperator`].
#[derive(Debug, Clone)]
pub enum RowStorage<F> {
    /// Row-major dense rows, `n_rows × m`.
    Dense { rows: Vec<F> },
    /// Compressed sparse rows.
    Sparse {
        row_ptr: Vec<usize>,
        cols: Vec<u32>,
        vals: Vec<F>,
    },
}

/// A block operator stored as explicit matrix rows, dense or sparse.
///
/// Dense storage fits the integral-equation problems; sparse row triples fit
/// tomography projectors where rows are ~0.3% dense.
#[derive(Debug)]
pub struct MatrixBlockOperator<F> {
    input_dim: usize,
    /// Block boundaries in row space, length `p + 1`.
    block_ptr: Vec<usize>,
    storage: RowStorage<F>,
    norms: NormCache<F>,
}

impl<F: Scalar> MatrixBlockOperator<F> {
    /// Dense operator with one row per block (`d_i = 1`).
    pub fn from_dense_rows(input_dim: usize, rows: Vec<Vec<F>>) -> Result<Self> {
        let dims = vec![1usize; rows.len()];
        Self::from_dense_blocks(input_dim, &dims, rows)
    }

    /// Dense operator with explicit block dimensions; `rows` are all rows in
    /// block order and must satisfy `Σ d_i = rows.len()`.
    pub fn from_dense_blocks(
        input_dim: usize,
        block_dims: &[usize],
        rows: Vec<Vec<F>>,
    ) -> Result<Self> {
        let total: usize = block_dims.iter().sum();
        if total != rows.len() {
            return Err(SolverError::DimensionMismatch {
                what: "dense rows vs block dims",
                expected: total,
                got: rows.len(),
            });
        }
        if block_dims.iter().any(|&d| d == 0) {
            return Err(SolverError::invalid("zero-dimensional block"));
        }
        let mut flat = Vec::with_capacity(total * input_dim);
        for r in &rows {
            if r.len() != input_dim {
                return Err(SolverError::DimensionMismatch {
                    what: "dense row length",
                    expected: input_dim,
                    got: r.len(),
                });
            }
            flat.extend_from_slice(r);
        }
        Ok(MatrixBlockOperator {
            input_dim,
            block_ptr: block_ptr_from_dims(block_dims),
            storage: RowStorage::Dense { rows: flat },
            norms: NormCache::new(),
        })
    }

    /// Sparse operator with one row per block, rows given as `(col, val)`
    /// pairs. Column indices must be in range; rows may be empty here (the
    /// problem builders drop all-zero rows before construction).
    pub fn from_sparse_rows(input_dim: usize, rows: Vec<Vec<(u32, F)>>) -> Result<Self> {
        let p = rows.len();
        let mut row_ptr = Vec::with_capacity(p + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for r in &rows {
            for &(c, v) in r {
                if c as usize >= input_dim {
                    return Err(SolverError::invalid(format!(
                        "sparse column {c} out of range for m={input_dim}"
                    )));
                }
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        let dims = vec![1usize; p];
        Ok(MatrixBlockOperator {
            input_dim,
            block_ptr: block_ptr_from_dims(&dims),
            storage: RowStorage::Sparse { row_ptr, cols, vals },
            norms: NormCache::new(),
        })
    }

    pub fn storage(&self) -> &RowStorage<F> {
        &self.storage
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, RowStorage::Dense { .. })
    }

    /// Number of stored rows (`Σ d_i`).
    pub fn num_rows(&self) -> usize {
        *self.block_ptr.last().unwrap()
    }

    /// Dense row as a slice; panics on sparse storage.
    pub fn dense_row(&self, r: usize) -> &[F] {
        match &self.storage {
            RowStorage::Dense { rows } => &rows[r * self.input_dim..(r + 1) * self.input_dim],
            RowStorage::Sparse { .. } => panic!("dense_row on sparse storage"),
        }
    }

    fn row_apply(&self, r: usize, x: &[F]) -> F {
        match &self.storage {
            RowStorage::Dense { rows } => {
                dot(&rows[r * self.input_dim..(r + 1) * self.input_dim], x)
            }
            RowStorage::Sparse { row_ptr, cols, vals } => {
                let mut acc = F::zero();
                for k in row_ptr[r]..row_ptr[r + 1] {
                    acc = acc + vals[k] * x[cols[k] as usize];
                }
                acc
            }
        }
    }

    fn row_adjoint_acc(&self, r: usize, c: F, acc: &mut [F]) {
        match &self.storage {
            RowStorage::Dense { rows } => {
                let row = &rows[r * self.input_dim..(r + 1) * self.input_dim];
                for (a, &v) in acc.iter_mut().zip(row.iter()) {
                    *a += v * c;
                }
            }
            RowStorage::Sparse { row_ptr, cols, vals } => {
                for k in row_ptr[r]..row_ptr[r + 1] {
                    acc[cols[k] as usize] += vals[k] * c;
                }
            }
        }
    }
}

fn block_ptr_from_dims(dims: &[usize]) -> Vec<usize> {
    let mut ptr = Vec::with_capacity(dims.len() + 1);
    let mut acc = 0usize;
    ptr.push(0);
    for &d in dims {
        acc += d;
        ptr.push(acc);
    }
    ptr
}

impl<F: Scalar> BlockOperator<F> for MatrixBlockOperator<F> {
    fn num_blocks(&self) -> usize {
        self.block_ptr.len() - 1
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn block_dim(&self, i: usize) -> usize {
        self.block_ptr[i + 1] - self.block_ptr[i]
    }

    fn apply_block_into(&self, i: usize, x: &[F], out: &mut [F]) {
        let (r0, r1) = (self.block_ptr[i], self.block_ptr[i + 1]);
        for (k, r) in (r0..r1).enumerate() {
            out[k] = self.row_apply(r, x);
        }
    }

    fn adjoint_block_acc(&self, i: usize, u: &[F], acc: &mut [F]) {
        let (r0, r1) = (self.block_ptr[i], self.block_ptr[i + 1]);
        for (k, r) in (r0..r1).enumerate() {
            self.row_adjoint_acc(r, u[k], acc);
        }
    }

    fn norm_cache(&self) -> &NormCache<F> {
        &self.norms
    }
}

pub mod io {
    //! Binary container for matrix block operators (`f64` payload).
    //!
    //! Layout, all integers little-endian:
    //!
    //! ```text
    //! magic      8 bytes   b"SMDBLK01"
    //! kind       u8        0 = dense, 1 = sparse
    //! p          u64       block count
    //! m          u64       input dimension
    //! block_dims p × u64
    //! dense payload:  (Σ d_i) rows × m f64, row-major
    //! sparse payload: per row: u64 nnz, then nnz × (u32 col, f64 val)
    //! ```

    use std::io::{Read, Write};

    use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

    use super::{BlockOperator, MatrixBlockOperator, RowStorage};
    use crate::error::{Result, SolverError};

    pub const MAGIC: &[u8; 8] = b"SMDBLK01";

    pub fn write_operator<W: Write>(op: &MatrixBlockOperator<f64>, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        let kind = if op.is_dense() { 0u8 } else { 1u8 };
        w.write_u8(kind)?;
        w.write_u64::<LittleEndian>(op.num_blocks() as u64)?;
        w.write_u64::<LittleEndian>(op.input_dim() as u64)?;
        for i in 0..op.num_blocks() {
            w.write_u64::<LittleEndian>(op.block_dim(i) as u64)?;
        }
        match &op.storage {
            RowStorage::Dense { rows } => {
                for v in rows {
                    w.write_f64::<LittleEndian>(*v)?;
                }
            }
            RowStorage::Sparse { row_ptr, cols, vals } => {
                for r in 0..row_ptr.len() - 1 {
                    let (k0, k1) = (row_ptr[r], row_ptr[r + 1]);
                    w.write_u64::<LittleEndian>((k1 - k0) as u64)?;
                    for k in k0..k1 {
                        w.write_u32::<LittleEndian>(cols[k])?;
                        w.write_f64::<LittleEndian>(vals[k])?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_operator<R: Read>(r: &mut R) -> Result<MatrixBlockOperator<f64>> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(SolverError::Format("bad magic".into()));
        }
        let kind = r.read_u8()?;
        let p = r.read_u64::<LittleEndian>()? as usize;
        let m = r.read_u64::<LittleEndian>()? as usize;
        let mut dims = Vec::with_capacity(p);
        for _ in 0..p {
            dims.push(r.read_u64::<LittleEndian>()? as usize);
        }
        let n_rows: usize = dims.iter().sum();
        match kind {
            0 => {
                let mut rows = Vec::with_capacity(n_rows);
                for _ in 0..n_rows {
                    let mut row = Vec::with_capacity(m);
                    for _ in 0..m {
                        row.push(r.read_f64::<LittleEndian>()?);
                    }
                    rows.push(row);
                }
                MatrixBlockOperator::from_dense_blocks(m, &dims, rows)
            }
            1 => {
                if dims.iter().any(|&d| d != 1) {
                    return Err(SolverError::Format(
                        "sparse container requires single-row blocks".into(),
                    ));
                }
                let mut rows = Vec::with_capacity(n_rows);
                for _ in 0..n_rows {
                    let nnz = r.read_u64::<LittleEndian>()? as usize;
                    let mut row = Vec::with_capacity(nnz);
                    for _ in 0..nnz {
                        let c = r.read_u32::<LittleEndian>()?;
                        let v = r.read_f64::<LittleEndian>()?;
                        row.push((c, v));
                    }
                    rows.push(row);
                }
                MatrixBlockOperator::from_sparse_rows(m, rows)
            }
            k => Err(SolverError::Format(format!("unknown storage kind {k}"))),
        }
    }
}
