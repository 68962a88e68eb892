//! First-kind integral equations discretized by the trapezoidal rule.
//!
//! The forward map `(Ax)(s) = ∫_a^b k(s, t) x(t) dt` is sampled at `p`
//! equispaced points `s_i = a + (i−1)(b−a)/(p−1)` and discretized on the
//! same `p`-node grid, so operator rows are kernel values times trapezoid
//! weights (`h` at interior nodes, `h/2` at the endpoints). Exact data are
//! `y_i = ⟨row_i, x†⟩` for the benchmark truth signal of each kernel.

use smd_core::operators::BlockOperator;
use smd_core::{BlockVec64, MatrixOperator64, Result, SolverError};

/// The benchmark kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegralKind {
    /// `[−6, 6]`, convolution kernel `φ(s−t)` with
    /// `φ(u) = (1 + cos(πu/3)) χ_{|u|<3}`; smooth oscillatory truth.
    Convolution61,
    /// `[0, 1]`, Gaussian kernel `4 e^{−(s−t)²/0.0064}`; the truth is a
    /// two-bump density normalized to unit integral.
    Gauss0064,
    /// `[0, 1]`, kernel `(0.1² + (s−t)²)^{−3/2}`; sparse indicator truth.
    PowerKernel,
}

impl IntegralKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "convolution_61" => Ok(IntegralKind::Convolution61),
            "gauss_0064" => Ok(IntegralKind::Gauss0064),
            "power_kernel" => Ok(IntegralKind::PowerKernel),
            other => Err(SolverError::invalid(format!(
                "unknown integral kernel `{other}`"
            ))),
        }
    }
}

/// A discretized integral-equation problem.
#[derive(Debug, Clone)]
pub struct IntegralProblem {
    pub interval: (f64, f64),
    /// The `p` grid nodes (also the sample points `s_i`).
    pub grid: Vec<f64>,
    /// Trapezoid quadrature weights over the grid.
    pub weights: Vec<f64>,
    pub op: MatrixOperator64,
    /// Truth signal sampled on the grid.
    pub truth: Vec<f64>,
    /// Exact data `y_i = ⟨row_i, x†⟩`, one scalar block per sample point.
    pub data: BlockVec64,
}

/// Builds one of the named benchmark problems at resolution `p`.
pub fn build_integral(kind: IntegralKind, p: usize) -> Result<IntegralProblem> {
    match kind {
        IntegralKind::Convolution61 => {
            let phi = |u: f64| {
                if u.abs() < 3.0 {
                    1.0 + (std::f64::consts::PI * u / 3.0).cos()
                } else {
                    0.0
                }
            };
            build_integral_custom((-6.0, 6.0), p, |s, t| phi(s - t), |t| {
                (std::f64::consts::PI * t / 12.0).sin()
                    + (std::f64::consts::PI * t / 3.0).sin()
                    + t * t * (1.0 - t) / 200.0
            })
        }
        IntegralKind::Gauss0064 => {
            let mut problem = build_integral_custom(
                (0.0, 1.0),
                p,
                |s, t| 4.0 * (-(s - t) * (s - t) / 0.0064).exp(),
                |t| (-60.0 * (t - 0.3) * (t - 0.3)).exp() + 0.3 * (-40.0 * (t - 0.8) * (t - 0.8)).exp(),
            )?;
            // normalize the truth to unit quadrature mass and rebuild data
            let mass: f64 = problem
                .weights
                .iter()
                .zip(problem.truth.iter())
                .map(|(w, x)| w * x)
                .sum();
            for x in problem.truth.iter_mut() {
                *x /= mass;
            }
            problem.data = problem.op.apply_full(&problem.truth)?;
            Ok(problem)
        }
        IntegralKind::PowerKernel => build_integral_custom(
            (0.0, 1.0),
            p,
            |s, t| {
                let d = s - t;
                (0.01 + d * d).powf(-1.5)
            },
            |t| {
                let chi = |lo: f64, hi: f64| if t >= lo && t <= hi { 1.0 } else { 0.0 };
                chi(0.19, 0.22) - chi(0.50, 0.52) + 0.5 * chi(0.78, 0.80)
            },
        ),
    }
}

/// Assembles an integral problem from an arbitrary kernel and truth signal
/// (the named builders and several tests go through this hook).
pub fn build_integral_custom(
    interval: (f64, f64),
    p: usize,
    kernel: impl Fn(f64, f64) -> f64,
    truth: impl Fn(f64) -> f64,
) -> Result<IntegralProblem> {
    if p < 2 {
        return Err(SolverError::invalid("integral problem needs p >= 2"));
    }
    let (a, b) = interval;
    if !(b > a) {
        return Err(SolverError::invalid("interval must satisfy a < b"));
    }
    let h = (b - a) / (p - 1) as f64;
    let grid: Vec<f64> = (0..p).map(|i| a + i as f64 * h).collect();
    let weights: Vec<f64> = (0..p)
        .map(|j| if j == 0 || j == p - 1 { 0.5 * h } else { h })
        .collect();
    let rows: Vec<Vec<f64>> = grid
        .iter()
        .map(|&s| {
            grid.iter()
                .zip(weights.iter())
                .map(|(&t, &w)| kernel(s, t) * w)
                .collect()
        })
        .collect();
    let op = MatrixOperator64::from_dense_rows(p, rows)?;
    let truth_vec: Vec<f64> = grid.iter().map(|&t| truth(t)).collect();
    let data = op.apply_full(&truth_vec)?;
    Ok(IntegralProblem {
        interval,
        grid,
        weights,
        op,
        truth: truth_vec,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use smd_core::scalar::dot;

    #[test]
    fn constant_kernel_row_sums() {
        // k ≡ 1: every row sums to (b − a) up to round-off
        let problem = build_integral_custom((-6.0, 6.0), 100, |_, _| 1.0, |t| t).unwrap();
        for i in 0..100 {
            let sum: f64 = problem.op.dense_row(i).iter().sum();
            assert!((sum - 12.0).abs() < 1e-12 * 12.0);
        }
    }

    #[test]
    fn hand_quadrature_rows() {
        // convolution kernel at p=5: rows match hand-computed kernel×weight
        let problem = build_integral(IntegralKind::Convolution61, 5).unwrap();
        let h = 3.0; // (6 − (−6)) / 4
        let phi = |u: f64| {
            if u.abs() < 3.0 {
                1.0 + (std::f64::consts::PI * u / 3.0).cos()
            } else {
                0.0
            }
        };
        for i in 0..5 {
            let s = -6.0 + i as f64 * h;
            for j in 0..5 {
                let t = -6.0 + j as f64 * h;
                let w = if j == 0 || j == 4 { 0.5 * h } else { h };
                let expected = phi(s - t) * w;
                let got = problem.op.dense_row(i)[j];
                assert!(
                    (got - expected).abs() <= 1e-15 * expected.abs().max(1.0),
                    "row {i} col {j}: {got} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn gauss_rows_peak_on_diagonal() {
        let problem = build_integral(IntegralKind::Gauss0064, 200).unwrap();
        for i in 1..199 {
            let row = problem.op.dense_row(i);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, i, "row {i} peaks at {argmax}");
        }
    }

    #[test]
    fn gauss_truth_is_normalized() {
        let problem = build_integral(IntegralKind::Gauss0064, 500).unwrap();
        let mass = dot(&problem.weights, &problem.truth);
        assert!((mass - 1.0).abs() < 1e-12);
        assert!(problem.truth.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn data_is_row_dot_truth() {
        let problem = build_integral(IntegralKind::PowerKernel, 50).unwrap();
        for i in 0..50 {
            let expected = dot(problem.op.dense_row(i), &problem.truth);
            assert_eq!(problem.data.block(i), &[expected]);
        }
    }

    #[test]
    fn sparse_truth_support() {
        let problem = build_integral(IntegralKind::PowerKernel, 1000).unwrap();
        let nonzero = problem.truth.iter().filter(|v| **v != 0.0).count();
        assert!(nonzero > 0 && nonzero < 100, "support size {nonzero}");
    }

    #[test]
    fn too_small_grid_rejected() {
        assert!(build_integral(IntegralKind::Gauss0064, 1).is_err());
    }
}
