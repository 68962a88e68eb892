//! Benchmark problem generators and the unified problem instance.
//!
//! Problems are addressable by name: `sgd_conv`, `ct`, `entropy`, `sparse`
//! and `tv`, each with overridable size parameters. A built instance
//! bundles the operator, the truth signal, exact data, grid weights for
//! error metrics, and problem-specific noise handling (the augmented `tv`
//! system corrupts only the base data; its zero rows stay exact).

pub mod integral;
pub mod tomography;
pub mod tv;

use serde::{Deserialize, Serialize};

use smd_core::noise::{self, CorruptedData, NoiseSpec};
use smd_core::operators::{BlockOperator, NormCache};
use smd_core::{BlockVec64, MatrixOperator64, Result, SolverError};

use integral::{build_integral, build_integral_custom, IntegralKind};
use tomography::build_tomography;
use tv::{augment_tv_data, build_tv, piecewise_constant_truth, TvBlockOperator};

/// Size overrides for the named problems; unset fields take the paper-scale
/// defaults of the problem.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemParams {
    /// Sample count for the integral problems (default 1000).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    /// Tomography grid side (default 256).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Tomography angle count (default 90).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_angles: Option<usize>,
    /// Tomography rays per angle (default 367).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_rays: Option<usize>,
    /// TV coupling weight β (default 400).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

/// Either a plain matrix operator or the structured TV composite.
#[derive(Debug)]
pub enum ProblemOperator {
    Matrix(MatrixOperator64),
    Tv(TvBlockOperator),
}

impl BlockOperator<f64> for ProblemOperator {
    fn num_blocks(&self) -> usize {
        match self {
            ProblemOperator::Matrix(op) => op.num_blocks(),
            ProblemOperator::Tv(op) => op.num_blocks(),
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            ProblemOperator::Matrix(op) => op.input_dim(),
            ProblemOperator::Tv(op) => op.input_dim(),
        }
    }

    fn block_dim(&self, i: usize) -> usize {
        match self {
            ProblemOperator::Matrix(op) => op.block_dim(i),
            ProblemOperator::Tv(op) => op.block_dim(i),
        }
    }

    fn apply_block_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        match self {
            ProblemOperator::Matrix(op) => op.apply_block_into(i, x, out),
            ProblemOperator::Tv(op) => op.apply_block_into(i, x, out),
        }
    }

    fn adjoint_block_acc(&self, i: usize, u: &[f64], acc: &mut [f64]) {
        match self {
            ProblemOperator::Matrix(op) => op.adjoint_block_acc(i, u, acc),
            ProblemOperator::Tv(op) => op.adjoint_block_acc(i, u, acc),
        }
    }

    fn norm_cache(&self) -> &NormCache<f64> {
        match self {
            ProblemOperator::Matrix(op) => op.norm_cache(),
            ProblemOperator::Tv(op) => op.norm_cache(),
        }
    }
}

/// A fully assembled benchmark problem.
#[derive(Debug)]
pub struct ProblemInstance {
    pub id: String,
    pub op: ProblemOperator,
    /// Truth on the full primal vector (stacked `(x†, Dx†)` for `tv`).
    pub truth: Vec<f64>,
    /// Exact data blocks (augmented for `tv`).
    pub exact_data: BlockVec64,
    /// Quadrature weights for error metrics; `None` for plain Euclidean
    /// problems (tomography).
    pub grid_weights: Option<Vec<f64>>,
    /// Error metrics are restricted to the leading components.
    pub primary_len: usize,
    /// TV coupling weight, when applicable.
    pub tv_beta: Option<f64>,
    /// Exact base data of the `tv` problem (noise applies here).
    tv_base_data: Option<BlockVec64>,
}

impl ProblemInstance {
    /// Applies the noise model. For `tv` the base data are corrupted and
    /// re-augmented, so the structural zero blocks stay exact and the
    /// per-block levels are the base levels.
    pub fn corrupt(&self, spec: &NoiseSpec<f64>) -> Result<CorruptedData<f64>> {
        match &self.tv_base_data {
            None => noise::corrupt(&self.exact_data, spec),
            Some(base) => {
                let corrupted = noise::corrupt(base, spec)?;
                let m = (self.op.input_dim() + 1) / 2;
                Ok(CorruptedData {
                    data: augment_tv_data(&corrupted.data, m)?,
                    levels: corrupted.levels,
                    total: corrupted.total,
                })
            }
        }
    }

    pub fn is_tv(&self) -> bool {
        self.tv_base_data.is_some()
    }
}

/// Builds a named problem with the given size overrides.
pub fn build_problem(id: &str, params: &ProblemParams) -> Result<ProblemInstance> {
    match id {
        "sgd_conv" | "entropy" | "sparse" => {
            let p = params.p.unwrap_or(1000);
            let kind = match id {
                "sgd_conv" => IntegralKind::Convolution61,
                "entropy" => IntegralKind::Gauss0064,
                _ => IntegralKind::PowerKernel,
            };
            let problem = build_integral(kind, p)?;
            Ok(ProblemInstance {
                id: id.to_string(),
                primary_len: p,
                op: ProblemOperator::Matrix(problem.op),
                truth: problem.truth,
                exact_data: problem.data,
                grid_weights: Some(problem.weights),
                tv_beta: None,
                tv_base_data: None,
            })
        }
        "ct" => {
            let n = params.n.unwrap_or(256);
            let n_angles = params.n_angles.unwrap_or(90);
            let n_rays = params.n_rays.unwrap_or(367);
            let problem = build_tomography(n, n_angles, n_rays)?;
            Ok(ProblemInstance {
                id: id.to_string(),
                primary_len: n * n,
                op: ProblemOperator::Matrix(problem.op),
                truth: problem.phantom,
                exact_data: problem.data,
                grid_weights: None,
                tv_beta: None,
                tv_base_data: None,
            })
        }
        "tv" => {
            let p = params.p.unwrap_or(1000);
            let beta = params.beta.unwrap_or(400.0);
            let base = build_integral_custom(
                (0.0, 1.0),
                p,
                |s, t| 4.0 * (-(s - t) * (s - t) / 0.0064).exp(),
                piecewise_constant_truth,
            )?;
            let problem = build_tv(&base, beta)?;
            Ok(ProblemInstance {
                id: id.to_string(),
                primary_len: p,
                op: ProblemOperator::Tv(problem.op),
                truth: problem.truth,
                exact_data: problem.data,
                grid_weights: Some(problem.grid_weights),
                tv_beta: Some(beta),
                tv_base_data: Some(problem.base_data),
            })
        }
        other => Err(SolverError::invalid(format!("unknown problem `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use smd_core::noise::NoiseModel;

    #[test]
    fn build_by_name_with_overrides() {
        let params = ProblemParams {
            p: Some(50),
            ..Default::default()
        };
        for id in ["sgd_conv", "entropy", "sparse"] {
            let problem = build_problem(id, &params).unwrap();
            assert_eq!(problem.op.num_blocks(), 50);
            assert_eq!(problem.primary_len, 50);
            assert!(problem.grid_weights.is_some());
        }
        assert!(build_problem("nope", &params).is_err());
    }

    #[test]
    fn tv_instance_shape() {
        let params = ProblemParams {
            p: Some(40),
            beta: Some(10.0),
            ..Default::default()
        };
        let problem = build_problem("tv", &params).unwrap();
        assert!(problem.is_tv());
        assert_eq!(problem.op.input_dim(), 79);
        assert_eq!(problem.primary_len, 40);
        assert_eq!(problem.truth.len(), 79);
    }

    #[test]
    fn tv_noise_touches_only_base_entries() {
        let params = ProblemParams {
            p: Some(30),
            beta: Some(10.0),
            ..Default::default()
        };
        let problem = build_problem("tv", &params).unwrap();
        let corrupted = problem
            .corrupt(&NoiseSpec {
                model: NoiseModel::Uniform,
                delta_rel: 0.2,
                seed: 3,
            })
            .unwrap();
        assert_eq!(corrupted.levels.len(), 30);
        for i in 0..30 {
            let block = corrupted.data.block(i);
            // zero part of the augmented data stays exact
            assert!(block[1..].iter().all(|v| *v == 0.0));
            let diff = (block[0] - problem.exact_data.block(i)[0]).abs();
            assert!(diff <= corrupted.levels[i] + 1e-15);
        }
    }

    #[test]
    fn ct_desk_scale() {
        let params = ProblemParams {
            n: Some(16),
            n_angles: Some(8),
            n_rays: Some(24),
            ..Default::default()
        };
        let problem = build_problem("ct", &params).unwrap();
        assert_eq!(problem.op.input_dim(), 256);
        assert!(problem.op.num_blocks() <= 8 * 24);
        assert!(problem.grid_weights.is_none());
    }
}
