//! Mirror maps: strongly convex regularizers with closed-form mirror solves.
//!
//! A mirror map bundles a proper, lower semi-continuous, strongly convex
//! functional `R` with modulus `σ`, the mirror solve
//! `ξ ↦ argmin_x { R(x) − ⟨ξ, x⟩ } = ∇R*(ξ)`, conjugate values and Bregman
//! distances. Four closed-form maps are provided:
//!
//! * `Quadratic` — `R(x) = ½‖x‖²`, solve is the identity;
//! * `NonnegQuadratic` — `R(x) = ½‖x‖² + ι_{x≥0}`, solve is `max(ξ, 0)`;
//! * `EntropySimplex` — discretized negative Boltzmann–Shannon entropy
//!   restricted to the quadrature-weighted probability simplex, solve is the
//!   weighted softmax `e^ξ / ⟨w, e^ξ⟩`;
//! * `ElasticNet` — `R(x) = β‖x‖₁ + ½‖x‖²`, solve is soft thresholding;
//!
//! plus `Product`, the direct sum of maps over a partitioned primal vector.
//!
//! The entropy map lives on a quadrature grid: integrals become weighted
//! sums, so its duality pairing is `⟨ξ, x⟩_w = Σ_j w_j ξ_j x_j` and its norm
//! pair is (weighted L¹, sup). All other maps use plain Euclidean pairing.

use crate::error::{Result, SolverError};
use crate::scalar::{dot, norm, norm_inf, Scalar};

/// Negative round-off in a Bregman distance below this magnitude is clamped
/// to zero; nonnegativity is a theorem.
const BREGMAN_CLAMP: f64 = 1e-12;

/// Tolerance on `⟨w, x⟩ = 1` when evaluating the entropy indicator.
const SIMPLEX_TOL: f64 = 1e-9;

/// A strongly convex regularizer with closed-form mirror solve.
#[derive(Debug, Clone)]
pub enum MirrorMap<F> {
    Quadratic { dim: usize },
    NonnegQuadratic { dim: usize },
    EntropySimplex { weights: Vec<F> },
    ElasticNet { dim: usize, beta: F },
    Product { parts: Vec<MirrorMap<F>> },
}

/// Soft-threshold in branch form. The branch form avoids signed zeros so
/// reference implementations can reproduce it bit for bit.
#[inline]
pub fn soft_threshold<F: Scalar>(v: F, beta: F) -> F {
    if v > beta {
        v - beta
    } else if v < -beta {
        v + beta
    } else {
        F::zero()
    }
}

impl<F: Scalar> MirrorMap<F> {
    pub fn quadratic(dim: usize) -> Self {
        MirrorMap::Quadratic { dim }
    }

    pub fn nonneg_quadratic(dim: usize) -> Self {
        MirrorMap::NonnegQuadratic { dim }
    }

    /// Entropy map over the weighted simplex `{x > 0 : ⟨w, x⟩ = 1}`.
    pub fn entropy_simplex(weights: Vec<F>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(*w > F::zero())) {
            return Err(SolverError::invalid(
                "entropy quadrature weights must be positive",
            ));
        }
        Ok(MirrorMap::EntropySimplex { weights })
    }

    pub fn elastic_net(dim: usize, beta: F) -> Result<Self> {
        if !(beta >= F::zero()) {
            return Err(SolverError::invalid("elastic net beta must be >= 0"));
        }
        Ok(MirrorMap::ElasticNet { dim, beta })
    }

    pub fn product(parts: Vec<MirrorMap<F>>) -> Result<Self> {
        if parts.is_empty() {
            return Err(SolverError::invalid("product map needs at least one part"));
        }
        Ok(MirrorMap::Product { parts })
    }

    /// Primal dimension.
    pub fn dim(&self) -> usize {
        match self {
            MirrorMap::Quadratic { dim }
            | MirrorMap::NonnegQuadratic { dim }
            | MirrorMap::ElasticNet { dim, .. } => *dim,
            MirrorMap::EntropySimplex { weights } => weights.len(),
            MirrorMap::Product { parts } => parts.iter().map(|p| p.dim()).sum(),
        }
    }

    /// Modulus of strong convexity σ. All base maps have σ = 1/2 (the
    /// entropy value is the L¹ modulus adopted for the discrete analogue);
    /// a product takes the minimum over its parts.
    pub fn sigma(&self) -> F {
        match self {
            MirrorMap::Product { parts } => parts
                .iter()
                .map(|p| p.sigma())
                .fold(F::infinity(), |a, b| a.min(b)),
            _ => F::cast(0.5),
        }
    }

    /// The unique minimizer of `R(x) − ⟨ξ, x⟩`.
    pub fn mirror_solve(&self, xi: &[F]) -> Result<Vec<F>> {
        let mut out = vec![F::zero(); self.dim()];
        self.mirror_solve_into(xi, &mut out)?;
        Ok(out)
    }

    /// In-place mirror solve; `out` has the primal dimension.
    pub fn mirror_solve_into(&self, xi: &[F], out: &mut [F]) -> Result<()> {
        if xi.len() != self.dim() || out.len() != self.dim() {
            return Err(SolverError::DimensionMismatch {
                what: "mirror_solve",
                expected: self.dim(),
                got: xi.len().max(out.len()),
            });
        }
        match self {
            MirrorMap::Quadratic { .. } => out.copy_from_slice(xi),
            MirrorMap::NonnegQuadratic { .. } => {
                for (o, &v) in out.iter_mut().zip(xi.iter()) {
                    *o = v.max(F::zero());
                }
            }
            MirrorMap::ElasticNet { beta, .. } => {
                for (o, &v) in out.iter_mut().zip(xi.iter()) {
                    *o = soft_threshold(v, *beta);
                }
            }
            MirrorMap::EntropySimplex { weights } => {
                if xi.iter().any(|v| !v.is_finite()) {
                    return Err(SolverError::invalid(
                        "entropy mirror solve requires finite dual entries",
                    ));
                }
                // Shift by max(ξ): the normalized exponential is invariant,
                // and overflow is impossible after the shift.
                let shift = xi.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
                let mut z = F::zero();
                for ((o, &v), &w) in out.iter_mut().zip(xi.iter()).zip(weights.iter()) {
                    let e = (v - shift).exp();
                    *o = e;
                    z = z + w * e;
                }
                for o in out.iter_mut() {
                    *o = *o / z;
                }
            }
            MirrorMap::Product { parts } => {
                let mut off = 0;
                for part in parts {
                    let d = part.dim();
                    part.mirror_solve_into(&xi[off..off + d], &mut out[off..off + d])?;
                    off += d;
                }
            }
        }
        Ok(())
    }

    /// Evaluates `R(x)`; `+∞` when `x` violates the map's constraint set.
    pub fn evaluate(&self, x: &[F]) -> F {
        assert_eq!(x.len(), self.dim(), "evaluate: dimension mismatch");
        match self {
            MirrorMap::Quadratic { .. } => F::cast(0.5) * x.iter().map(|v| *v * *v).sum(),
            MirrorMap::NonnegQuadratic { .. } => {
                if x.iter().any(|v| *v < F::zero()) {
                    return F::infinity();
                }
                F::cast(0.5) * x.iter().map(|v| *v * *v).sum()
            }
            MirrorMap::ElasticNet { beta, .. } => {
                let l1: F = x.iter().map(|v| v.abs()).sum();
                let l2: F = x.iter().map(|v| *v * *v).sum();
                *beta * l1 + F::cast(0.5) * l2
            }
            MirrorMap::EntropySimplex { weights } => {
                if x.iter().any(|v| *v < F::zero()) {
                    return F::infinity();
                }
                let mass = dot(weights, x);
                if (mass - F::one()).abs() > F::cast(SIMPLEX_TOL) {
                    return F::infinity();
                }
                let mut acc = F::zero();
                for (&v, &w) in x.iter().zip(weights.iter()) {
                    if v > F::zero() {
                        acc = acc + w * v * v.ln();
                    }
                    // x ln x -> 0 as x -> 0
                }
                acc
            }
            MirrorMap::Product { parts } => {
                let mut off = 0;
                let mut acc = F::zero();
                for part in parts {
                    let d = part.dim();
                    acc = acc + part.evaluate(&x[off..off + d]);
                    off += d;
                }
                acc
            }
        }
    }

    /// Duality pairing `⟨ξ, v⟩` used by this map: plain Euclidean except for
    /// the entropy map, whose pairing carries the quadrature weights.
    pub fn pairing(&self, xi: &[F], v: &[F]) -> F {
        assert_eq!(xi.len(), self.dim(), "pairing: dimension mismatch");
        assert_eq!(v.len(), self.dim(), "pairing: dimension mismatch");
        match self {
            MirrorMap::EntropySimplex { weights } => {
                let mut acc = F::zero();
                for ((&w, &a), &b) in weights.iter().zip(xi.iter()).zip(v.iter()) {
                    acc = acc + w * a * b;
                }
                acc
            }
            MirrorMap::Product { parts } => {
                let mut off = 0;
                let mut acc = F::zero();
                for part in parts {
                    let d = part.dim();
                    acc = acc + part.pairing(&xi[off..off + d], &v[off..off + d]);
                    off += d;
                }
                acc
            }
            _ => dot(xi, v),
        }
    }

    /// Bregman distance `D_R^ξ(x_ref, x) = R(x_ref) − R(x) − ⟨ξ, x_ref − x⟩`
    /// for `ξ ∈ ∂R(x)`, which holds by construction when
    /// `x = mirror_solve(ξ)`. Returns `+∞` when `R(x_ref) = +∞`; tiny
    /// negative round-off (above `−1e−12`) is clamped to zero.
    pub fn bregman(&self, xi: &[F], x: &[F], x_ref: &[F]) -> F {
        let r_ref = self.evaluate(x_ref);
        if r_ref == F::infinity() {
            return F::infinity();
        }
        let r_x = self.evaluate(x);
        let diff: Vec<F> = x_ref.iter().zip(x.iter()).map(|(a, b)| *a - *b).collect();
        let d = r_ref - r_x - self.pairing(xi, &diff);
        if d < F::zero() && d >= -F::cast(BREGMAN_CLAMP) {
            F::zero()
        } else {
            d
        }
    }

    /// Conjugate value `R*(ξ) = ⟨ξ, x̂⟩ − R(x̂)` with `x̂ = mirror_solve(ξ)`.
    pub fn conjugate_value(&self, xi: &[F]) -> Result<F> {
        let x_hat = self.mirror_solve(xi)?;
        Ok(self.pairing(xi, &x_hat) - self.evaluate(&x_hat))
    }

    /// Primal norm under which σ is stated: weighted L¹ for the entropy
    /// map, Euclidean otherwise. Product parts must share the Euclidean
    /// norm, which all non-entropy maps do.
    pub fn primal_norm(&self, v: &[F]) -> F {
        match self {
            MirrorMap::EntropySimplex { weights } => {
                let mut acc = F::zero();
                for (&w, &x) in weights.iter().zip(v.iter()) {
                    acc = acc + w * x.abs();
                }
                acc
            }
            _ => norm(v),
        }
    }

    /// Dual norm paired with [`Self::primal_norm`].
    pub fn dual_norm(&self, v: &[F]) -> F {
        match self {
            MirrorMap::EntropySimplex { .. } => norm_inf(v),
            _ => norm(v),
        }
    }
}
