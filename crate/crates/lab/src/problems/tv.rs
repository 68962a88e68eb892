//! The augmented system for piecewise-constant reconstruction.
//!
//! Recovering a piecewise-constant signal under the penalty
//! `β‖Dx‖₁ + ½‖Dx‖² + ½‖x‖²` couples the mirror solve across components.
//! Introducing `z := Dx` decouples it: the problem becomes a block system
//! over the stacked primal vector `(x, z)` with composite blocks
//!
//! ```text
//! B_i = [ A_i  0 ]        B_i (x, z) = ( A_i x, Dx − z )
//!       [  D  −I ]
//! ```
//!
//! and the separable penalty `½‖x‖² + β‖z‖₁ + ½‖z‖²`, i.e. the product of a
//! quadratic map on `x` and an elastic-net map on `z`. `D` is the forward
//! difference operator with `m − 1` rows.
//!
//! The generic mirror descent engine on these blocks reproduces the
//! specialized three-line scheme (soft-threshold `z`, gradient step on `x`,
//! dual step on `η`) bit for bit; the accumulation order in
//! [`TvBlockOperator::adjoint_block_acc`] is part of that contract.

use smd_core::mirror::MirrorMap;
use smd_core::operators::{BlockOperator, NormCache};
use smd_core::scalar::dot;
use smd_core::{BlockVec64, MirrorMap64, Result, SolverError};

use super::integral::IntegralProblem;

/// Composite block operator `B_i = [[A_i, 0], [D, −I]]` over `(x, z)`.
///
/// The base rows `A_i` are dense length-`m` rows; `D` and `−I` are applied
/// structurally, so storage stays `O(p·m)`.
#[derive(Debug)]
pub struct TvBlockOperator {
    /// Dense base rows, `p × m` row-major.
    base_rows: Vec<f64>,
    p: usize,
    m: usize,
    norms: NormCache<f64>,
}

impl TvBlockOperator {
    pub fn new(m: usize, base_rows: Vec<Vec<f64>>) -> Result<Self> {
        if m < 2 {
            return Err(SolverError::invalid("TV operator needs m >= 2"));
        }
        let p = base_rows.len();
        let mut flat = Vec::with_capacity(p * m);
        for r in &base_rows {
            if r.len() != m {
                return Err(SolverError::DimensionMismatch {
                    what: "TV base row",
                    expected: m,
                    got: r.len(),
                });
            }
            flat.extend_from_slice(r);
        }
        Ok(TvBlockOperator {
            base_rows: flat,
            p,
            m,
            norms: NormCache::new(),
        })
    }

    pub fn base_dim(&self) -> usize {
        self.m
    }

    pub fn base_row(&self, i: usize) -> &[f64] {
        &self.base_rows[i * self.m..(i + 1) * self.m]
    }
}

impl BlockOperator<f64> for TvBlockOperator {
    fn num_blocks(&self) -> usize {
        self.p
    }

    /// Stacked primal dimension `m + (m − 1)`.
    fn input_dim(&self) -> usize {
        2 * self.m - 1
    }

    /// Every block outputs `(A_i x, Dx − z)` of dimension `1 + (m − 1)`.
    fn block_dim(&self, _i: usize) -> usize {
        self.m
    }

    fn apply_block_into(&self, i: usize, xz: &[f64], out: &mut [f64]) {
        let m = self.m;
        let (x, z) = xz.split_at(m);
        out[0] = dot(self.base_row(i), x);
        for j in 0..m - 1 {
            out[1 + j] = (x[j + 1] - x[j]) - z[j];
        }
    }

    fn adjoint_block_acc(&self, i: usize, u: &[f64], acc: &mut [f64]) {
        let m = self.m;
        let row = self.base_row(i);
        let c = u[0];
        // x-part: A_i^T u₀ first, then the D rows in order
        for k in 0..m {
            acc[k] += row[k] * c;
        }
        for j in 0..m - 1 {
            let s = u[1 + j];
            acc[j] -= s;
            acc[j + 1] += s;
        }
        // z-part of the adjoint: −I
        for j in 0..m - 1 {
            acc[m + j] -= u[1 + j];
        }
    }

    fn norm_cache(&self) -> &NormCache<f64> {
        &self.norms
    }
}

/// The assembled augmented problem.
#[derive(Debug)]
pub struct TvProblem {
    pub beta: f64,
    pub op: TvBlockOperator,
    /// Stacked truth `(x†, Dx†)`.
    pub truth: Vec<f64>,
    /// Product mirror map: quadratic on `x`, elastic net on `z`.
    pub map: MirrorMap64,
    /// Exact augmented data blocks `(y_i, 0)`.
    pub data: BlockVec64,
    /// Exact base data `y_i` (noise applies here; the zero part is exact).
    pub base_data: BlockVec64,
    /// Quadrature weights of the base grid (for error metrics on `x`).
    pub grid_weights: Vec<f64>,
}

/// Builds the augmented system from an assembled integral problem; the base
/// problem supplies the operator rows, grid and truth.
pub fn build_tv(base: &IntegralProblem, beta: f64) -> Result<TvProblem> {
    if !(beta > 0.0) {
        return Err(SolverError::invalid("TV beta must be > 0"));
    }
    let m = base.grid.len();
    let rows: Vec<Vec<f64>> = (0..m).map(|i| base.op.dense_row(i).to_vec()).collect();
    let op = TvBlockOperator::new(m, rows)?;
    let mut truth = Vec::with_capacity(2 * m - 1);
    truth.extend_from_slice(&base.truth);
    for j in 0..m - 1 {
        truth.push(base.truth[j + 1] - base.truth[j]);
    }
    let map = MirrorMap::product(vec![
        MirrorMap::quadratic(m),
        MirrorMap::elastic_net(m - 1, beta)?,
    ])?;
    let base_data = base.data.clone();
    let data = augment_tv_data(&base_data, m)?;
    Ok(TvProblem {
        beta,
        op,
        truth,
        map,
        data,
        base_data,
        grid_weights: base.weights.clone(),
    })
}

/// Stacks base data blocks `y_i` into augmented blocks `(y_i, 0_{m−1})`.
pub fn augment_tv_data(base: &BlockVec64, m: usize) -> Result<BlockVec64> {
    let p = base.num_blocks();
    let mut blocks = Vec::with_capacity(p);
    for i in 0..p {
        if base.block_dim(i) != 1 {
            return Err(SolverError::invalid("TV base data must be scalar blocks"));
        }
        let mut b = vec![0.0; m];
        b[0] = base.block(i)[0];
        blocks.push(b);
    }
    Ok(BlockVec64::from_blocks(blocks))
}

/// The documented stand-in piecewise-constant truth: three plateaus on
/// `[0, 1]`, zero background.
pub fn piecewise_constant_truth(t: f64) -> f64 {
    if (0.10..=0.30).contains(&t) {
        1.0
    } else if (0.45..=0.60).contains(&t) {
        2.0
    } else if (0.75..=0.90).contains(&t) {
        0.5
    } else {
        0.0
    }
}
