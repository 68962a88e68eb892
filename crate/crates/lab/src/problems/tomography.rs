//! Desk-scale 2D parallel-beam tomography with an analytic head phantom.
//!
//! Geometry conventions (fixed constants of this projector):
//!
//! * the image is an `n × n` pixel grid with pixel size 1, centered at the
//!   origin, so the square covers `[−n/2, n/2]²`;
//! * pixels are stored row-major with row 0 at the top (`y = n/2`);
//! * projection angles are equispaced in `[1°, 180°]` (a single angle sits
//!   at 90°); at angle θ rays travel along `(−sin θ, cos θ)` and detector
//!   offsets advance along `(cos θ, sin θ)`;
//! * `n_rays` offsets are equispaced across the image diagonal with spacing
//!   `n√2/(n_rays − 1)`, centered on the origin.
//!
//! Row entries are exact ray–pixel intersection lengths from incremental
//! grid traversal; rows that never intersect the image are dropped, so
//! every retained row has at least one nonzero entry.

use smd_core::operators::BlockOperator;
use smd_core::{BlockVec64, MatrixOperator64, Result, SolverError};

/// A parallel-beam tomography problem with exact sinogram data.
#[derive(Debug)]
pub struct TomographyProblem {
    pub n: usize,
    pub n_angles: usize,
    pub n_rays: usize,
    /// Sparse projector over the retained (non-empty) rays.
    pub op: MatrixOperator64,
    /// `(angle index, ray index)` provenance of each retained row.
    pub kept_rays: Vec<(usize, usize)>,
    /// The rasterized phantom, `n·n` values in `[0, 1]`.
    pub phantom: Vec<f64>,
    /// Exact sinogram `y = A · phantom`.
    pub data: BlockVec64,
}

/// Traces all rays, drops empty rows, rasterizes the phantom and forms the
/// exact sinogram.
pub fn build_tomography(n: usize, n_angles: usize, n_rays: usize) -> Result<TomographyProblem> {
    if n < 2 {
        return Err(SolverError::invalid("tomography needs n >= 2"));
    }
    if n_angles == 0 || n_rays == 0 {
        return Err(SolverError::invalid("need at least one angle and one ray"));
    }
    let diag = (n as f64) * std::f64::consts::SQRT_2;
    let spacing = if n_rays > 1 {
        diag / (n_rays - 1) as f64
    } else {
        0.0
    };
    let mut rows: Vec<Vec<(u32, f64)>> = Vec::new();
    let mut kept_rays = Vec::new();
    for ai in 0..n_angles {
        let theta_deg = if n_angles > 1 {
            1.0 + ai as f64 * (180.0 - 1.0) / (n_angles - 1) as f64
        } else {
            90.0
        };
        let theta = theta_deg.to_radians();
        let (sin_t, cos_t) = theta.sin_cos();
        let dir = (-sin_t, cos_t);
        let axis = (cos_t, sin_t);
        for ri in 0..n_rays {
            let offset = (ri as f64 - (n_rays - 1) as f64 / 2.0) * spacing;
            let origin = (offset * axis.0, offset * axis.1);
            let row = trace_ray(n, origin, dir);
            if !row.is_empty() {
                rows.push(row);
                kept_rays.push((ai, ri));
            }
        }
    }
    if rows.is_empty() {
        return Err(SolverError::invalid("no ray intersects the image"));
    }
    let op = MatrixOperator64::from_sparse_rows(n * n, rows)?;
    let phantom = shepp_logan(n);
    let data = op.apply_full(&phantom)?;
    Ok(TomographyProblem {
        n,
        n_angles,
        n_rays,
        op,
        kept_rays,
        phantom,
        data,
    })
}

/// Exact ray–pixel intersection lengths by incremental grid traversal.
///
/// The ray is `origin + s·dir` with `dir` a unit vector; coordinates are
/// centered, the grid occupies `[−n/2, n/2]²`. Returns `(pixel, length)`
/// pairs in traversal order; zero-length grazing contacts are dropped.
fn trace_ray(n: usize, origin: (f64, f64), dir: (f64, f64)) -> Vec<(u32, f64)> {
    let half = n as f64 / 2.0;
    // entry/exit of the bounding square by the slab method
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for (o, d) in [(origin.0, dir.0), (origin.1, dir.1)] {
        if d == 0.0 {
            if o <= -half || o >= half {
                return Vec::new();
            }
        } else {
            let (ta, tb) = ((-half - o) / d, (half - o) / d);
            let (lo, hi) = if ta < tb { (ta, tb) } else { (tb, ta) };
            t0 = t0.max(lo);
            t1 = t1.min(hi);
        }
    }
    if !(t1 > t0) {
        return Vec::new();
    }

    // work in grid coordinates: g = p + half ∈ [0, n], integer boundaries
    let gx = |t: f64| origin.0 + t * dir.0 + half;
    let gy = |t: f64| origin.1 + t * dir.1 + half;

    let clamp_cell = |v: f64| -> isize { (v.floor() as isize).clamp(0, n as isize - 1) };
    let eps = 1e-12;
    let mut t = t0;
    let mut out: Vec<(u32, f64)> = Vec::new();
    // nudge inside to classify the starting cell robustly
    let (mut cx, mut cy) = (
        clamp_cell(gx(t0 + eps * (t1 - t0))),
        clamp_cell(gy(t0 + eps * (t1 - t0))),
    );
    let step_x: isize = if dir.0 > 0.0 { 1 } else { -1 };
    let step_y: isize = if dir.1 > 0.0 { 1 } else { -1 };

    let next_boundary_t = |cell: isize, o: f64, d: f64, step: isize| -> f64 {
        if d == 0.0 {
            f64::INFINITY
        } else {
            let boundary = if step > 0 { cell + 1 } else { cell } as f64;
            (boundary - half - o + half) / d // boundary in grid coords minus origin in grid coords
        }
    };

    while t < t1 - eps {
        let tx = next_boundary_t(cx, origin.0 + half, dir.0, step_x);
        let ty = next_boundary_t(cy, origin.1 + half, dir.1, step_y);
        let t_next = tx.min(ty).min(t1);
        let len = t_next - t;
        if len > eps && (0..n as isize).contains(&cx) && (0..n as isize).contains(&cy) {
            // row 0 at the top: y near n/2 maps to row 0
            let row = n as isize - 1 - cy;
            let idx = (row * n as isize + cx) as u32;
            out.push((idx, len));
        }
        if t_next >= t1 {
            break;
        }
        if tx <= ty {
            cx += step_x;
        }
        if ty <= tx {
            cy += step_y;
        }
        t = t_next;
    }
    out
}

/// Ellipse of the analytic phantom.
struct Ellipse {
    intensity: f64,
    a: f64,
    b: f64,
    x0: f64,
    y0: f64,
    phi_deg: f64,
}

impl Ellipse {
    fn inside(&self, x: f64, y: f64) -> bool {
        let phi = self.phi_deg.to_radians();
        let (s, c) = phi.sin_cos();
        let dx = x - self.x0;
        let dy = y - self.y0;
        let u = (c * dx + s * dy) / self.a;
        let v = (-s * dx + c * dy) / self.b;
        u * u + v * v <= 1.0
    }
}

/// Ellipses on the symmetry axis (`x0 = 0`, axis-aligned).
const CENTER_ELLIPSES: [Ellipse; 6] = [
    Ellipse { intensity: 1.0, a: 0.69, b: 0.92, x0: 0.0, y0: 0.0, phi_deg: 0.0 },
    Ellipse { intensity: -0.8, a: 0.6624, b: 0.874, x0: 0.0, y0: -0.0184, phi_deg: 0.0 },
    Ellipse { intensity: 0.1, a: 0.21, b: 0.25, x0: 0.0, y0: 0.35, phi_deg: 0.0 },
    Ellipse { intensity: 0.1, a: 0.046, b: 0.046, x0: 0.0, y0: 0.1, phi_deg: 0.0 },
    Ellipse { intensity: 0.1, a: 0.046, b: 0.046, x0: 0.0, y0: -0.1, phi_deg: 0.0 },
    Ellipse { intensity: 0.1, a: 0.023, b: 0.023, x0: 0.0, y0: -0.605, phi_deg: 0.0 },
];

/// Right-half ellipses; each contributes together with its mirror image, so
/// the phantom is exactly symmetric about the vertical axis.
const PAIRED_ELLIPSES: [Ellipse; 2] = [
    Ellipse { intensity: -0.2, a: 0.11, b: 0.31, x0: 0.22, y0: 0.0, phi_deg: -18.0 },
    Ellipse { intensity: 0.1, a: 0.023, b: 0.046, x0: 0.06, y0: -0.605, phi_deg: 0.0 },
];

/// Phantom value at a point of `[−1, 1]²`.
pub fn phantom_value(x: f64, y: f64) -> f64 {
    let mut v = 0.0;
    for e in &CENTER_ELLIPSES {
        if e.inside(x, y) {
            v += e.intensity;
        }
    }
    for e in &PAIRED_ELLIPSES {
        if e.inside(x, y) {
            v += e.intensity;
        }
        if e.inside(-x, y) {
            v += e.intensity;
        }
    }
    v.max(0.0)
}

/// Rasterizes the head phantom at `n × n` by pixel-center sampling.
pub fn shepp_logan(n: usize) -> Vec<f64> {
    let mut img = vec![0.0f64; n * n];
    for r in 0..n {
        let y = 1.0 - (r as f64 + 0.5) * 2.0 / n as f64;
        for c in 0..n {
            let x = (c as f64 + 0.5) * 2.0 / n as f64 - 1.0;
            img[r * n + c] = phantom_value(x, y);
        }
    }
    img
}
