//! Second fundamental form by local quadratic regression, and the Riemann and
//! sectional curvature it induces on a submanifold of flat space.
//!
//! With Hessians `h^a` of the normal components of the embedding (expressed in
//! an orthonormal tangent/normal frame at the base point) the curvature tensor is
//!
//! ```text
//! R_iljk = sum_a ( h^a_ik h^a_lj - h^a_ij h^a_lk )
//! ```
//!
//! and the sectional curvature of the coordinate plane `(i, j)` is
//! `K_ij = R(e_i, e_j, e_j, e_i) = sum_a ( h^a_ii h^a_jj - (h^a_ij)^2 )`,
//! positive on a round sphere.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::least_squares;
use crate::patch::Patch;
use crate::tangent::{
    self, build_frame, estimate_dimension, local_coordinates, pca_spectrum, LocalCoordinates,
    Spectrum, DEFAULT_RESIDUAL_TOL, DEFAULT_THETA,
};

/// Number of regression features `1 + d + d(d+1)/2` for intrinsic dimension `d`.
pub fn feature_count(d: usize) -> usize {
    1 + d + d * (d + 1) / 2
}

/// Fitted second-order model of each normal component around the base point.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianStack {
    pub dimension: usize,
    pub offsets: Vec<f64>,
    pub gradients: Vec<DVector<f64>>,
    pub hessians: Vec<DMatrix<f64>>,
    /// Root-mean-square fit residual per normal direction.
    pub residual_rms: Vec<f64>,
    pub design_rank: usize,
    pub rank_deficient: bool,
}

impl HessianStack {
    /// Stack with prescribed Hessians and zero offsets/gradients.
    pub fn from_hessians(dimension: usize, hessians: Vec<DMatrix<f64>>) -> Result<Self> {
        for h in &hessians {
            if h.shape() != (dimension, dimension) {
                return Err(Error::ShapeMismatch(format!(
                    "Hessian is {}x{}, expected {dimension}x{dimension}",
                    h.nrows(),
                    h.ncols()
                )));
            }
            if (h - h.transpose()).amax() > 1e-10 {
                return Err(Error::Parameter("Hessian is not symmetric".into()));
            }
        }
        let r = hessians.len();
        Ok(HessianStack {
            dimension,
            offsets: alloc::vec![0.0; r],
            gradients: alloc::vec![DVector::zeros(dimension); r],
            hessians,
            residual_rms: alloc::vec![0.0; r],
            design_rank: feature_count(dimension),
            rank_deficient: false,
        })
    }

    pub fn normal_rank(&self) -> usize {
        self.hessians.len()
    }
}

/// Least-squares fit `f^a(u) ~ c^a + g^a . u + 1/2 u^T H^a u` for every normal
/// component, with features `[1, u_1..u_d, u_1^2..u_d^2, 2u_1u_2, .., 2u_{d-1}u_d]`.
///
/// Rank-deficient designs get the minimum-norm solution and set `rank_deficient`.
/// `ridge` damps the singular values of the (radius-normalised) design; 0 disables it.
pub fn fit_hessians(coords: &LocalCoordinates, ridge: f64) -> Result<HessianStack> {
    let d = coords.dimension();
    let n = coords.len();
    let p = feature_count(d);
    if d == 0 {
        return Err(Error::Parameter("intrinsic dimension must be at least 1".into()));
    }
    if n < p {
        return Err(Error::InsufficientSamples { needed: p, got: n });
    }
    if !(ridge >= 0.0) {
        return Err(Error::Parameter(format!("ridge must be non-negative, got {ridge}")));
    }

    // Work in units of the patch radius so the design columns are O(1).
    let radius = coords
        .tangent
        .row_iter()
        .map(|r| r.norm())
        .fold(0.0, f64::max);
    let scale = if radius > 0.0 { radius } else { 1.0 };

    let design = DMatrix::from_fn(n, p, |row, col| {
        let u = |i: usize| coords.tangent[(row, i)] / scale;
        feature(d, col, u)
    });
    let (coef, rank) = least_squares(&design, &coords.normal, ridge);

    let r = coords.normal_rank();
    let mut offsets = Vec::with_capacity(r);
    let mut gradients = Vec::with_capacity(r);
    let mut hessians = Vec::with_capacity(r);
    let mut residual_rms = Vec::with_capacity(r);
    let fitted = &design * &coef;
    for a in 0..r {
        let c = coef.column(a);
        offsets.push(c[0]);
        gradients.push(DVector::from_fn(d, |i, _| c[1 + i] / scale));
        let mut h = DMatrix::zeros(d, d);
        for i in 0..d {
            h[(i, i)] = 2.0 * c[1 + d + i] / (scale * scale);
        }
        let mut col = 1 + 2 * d;
        for i in 0..d {
            for j in (i + 1)..d {
                let v = 2.0 * c[col] / (scale * scale);
                h[(i, j)] = v;
                h[(j, i)] = v;
                col += 1;
            }
        }
        hessians.push(h);
        let resid = coords.normal.column(a) - fitted.column(a);
        residual_rms.push(resid.norm() / libm::sqrt(n as f64));
    }

    Ok(HessianStack {
        dimension: d,
        offsets,
        gradients,
        hessians,
        residual_rms,
        design_rank: rank,
        rank_deficient: rank < p,
    })
}

fn feature(d: usize, col: usize, u: impl Fn(usize) -> f64) -> f64 {
    if col == 0 {
        return 1.0;
    }
    if col <= d {
        return u(col - 1);
    }
    if col <= 2 * d {
        let i = col - d - 1;
        return u(i) * u(i);
    }
    let mut k = 2 * d + 1;
    for i in 0..d {
        for j in (i + 1)..d {
            if k == col {
                return 2.0 * u(i) * u(j);
            }
            k += 1;
        }
    }
    unreachable!("feature column {col} out of range for d = {d}")
}

/// Ordered index pairs `(i, l)` with `i < l`, in lexicographic order.
pub fn index_pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d)
        .flat_map(|i| ((i + 1)..d).map(move |l| (i, l)))
        .collect()
}

/// Canonical component count `P(P+1)/2` with `P = d(d-1)/2`.
pub fn canonical_count(d: usize) -> usize {
    let pairs = d * d.saturating_sub(1) / 2;
    pairs * (pairs + 1) / 2
}

/// Riemann tensor stored as one representative `R_iljk` per symmetry orbit:
/// `i < l`, `j < k`, and `rank(i, l) <= rank(j, k)` over [`index_pairs`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RiemannTensor {
    pub dimension: usize,
    pub components: Vec<f64>,
}

impl RiemannTensor {
    /// Canonical index tuples `(i, l, j, k)` in storage order.
    pub fn canonical_indices(d: usize) -> Vec<[usize; 4]> {
        let pairs = index_pairs(d);
        let mut out = Vec::with_capacity(canonical_count(d));
        for (a, &(i, l)) in pairs.iter().enumerate() {
            for &(j, k) in &pairs[a..] {
                out.push([i, l, j, k]);
            }
        }
        out
    }

    fn pair_rank(d: usize, i: usize, l: usize) -> usize {
        // number of pairs starting before row i, plus offset within the row
        i * d - i * (i + 1) / 2 + (l - i - 1)
    }

    /// Any component `R(e_a, e_b, e_c, e_e)`, recovered from canonical storage via
    /// antisymmetry within each index pair and symmetry under pair exchange.
    pub fn get(&self, a: usize, b: usize, c: usize, e: usize) -> f64 {
        let d = self.dimension;
        assert!(a < d && b < d && c < d && e < d, "index out of range");
        if a == b || c == e {
            return 0.0;
        }
        let mut sign = 1.0;
        let (a, b) = if a < b { (a, b) } else { sign = -sign; (b, a) };
        let (c, e) = if c < e { (c, e) } else { sign = -sign; (e, c) };
        let (mut p, mut q) = (Self::pair_rank(d, a, b), Self::pair_rank(d, c, e));
        if p > q {
            core::mem::swap(&mut p, &mut q);
        }
        let pairs = d * (d - 1) / 2;
        // rows 0..p of the upper triangle hold (pairs - r) entries each
        let offset = p * pairs - p * (p.saturating_sub(1)) / 2 + (q - p);
        sign * self.components[offset]
    }
}

/// Evaluates `R_iljk = sum_a (h^a_ik h^a_lj - h^a_ij h^a_lk)` on the canonical index set.
pub fn riemann_tensor(stack: &HessianStack) -> RiemannTensor {
    let d = stack.dimension;
    let components = RiemannTensor::canonical_indices(d)
        .into_iter()
        .map(|[i, l, j, k]| {
            stack
                .hessians
                .iter()
                .map(|h| h[(i, k)] * h[(l, j)] - h[(i, j)] * h[(l, k)])
                .sum()
        })
        .collect();
    RiemannTensor {
        dimension: d,
        components,
    }
}

/// Sectional curvatures of the coordinate planes `(i, j)`, `i < j`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SectionalSet {
    pub dimension: usize,
    pub planes: Vec<(usize, usize)>,
    pub values: Vec<f64>,
}

/// `K_ij = R(e_i, e_j, e_j, e_i)`; the basis is orthonormal so the denominator is 1.
pub fn sectional_curvatures(tensor: &RiemannTensor) -> Result<SectionalSet> {
    let d = tensor.dimension;
    if d < 2 {
        return Err(Error::NoPlanes(d));
    }
    let planes = index_pairs(d);
    let values = planes.iter().map(|&(i, j)| tensor.get(i, j, j, i)).collect();
    Ok(SectionalSet {
        dimension: d,
        planes,
        values,
    })
}

/// Sorts non-increasing, optionally on absolute values first.
pub fn curvature_distribution(values: &[f64], absolute: bool) -> Vec<f64> {
    let mut out: Vec<f64> = if absolute {
        values.iter().map(|v| v.abs()).collect()
    } else {
        values.to_vec()
    };
    out.sort_by(|a, b| b.total_cmp(a));
    out
}

/// Knobs for [`patch_curvature`].
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureOptions {
    pub theta: f64,
    /// Use this intrinsic dimension instead of the PCA estimate.
    pub dimension: Option<usize>,
    pub residual_tol: f64,
    pub ridge: f64,
    /// Sort absolute values instead of signed ones.
    pub absolute: bool,
    /// Rotate the PCA frame until the fitted gradients vanish (see [`align_frame`]).
    pub align_frame: bool,
}

impl Default for CurvatureOptions {
    fn default() -> Self {
        CurvatureOptions {
            theta: DEFAULT_THETA,
            dimension: None,
            residual_tol: DEFAULT_RESIDUAL_TOL,
            ridge: 0.0,
            absolute: false,
            align_frame: false,
        }
    }
}

/// Curvature summary of one patch.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurvatureReport {
    pub dimension: usize,
    pub ambient_dim: usize,
    pub count: usize,
    pub base_index: usize,
    pub normal_rank: usize,
    pub theta: f64,
    pub absolute: bool,
    pub spectrum: Spectrum,
    /// Canonical Riemann components, sorted non-increasing.
    pub riemann_distribution: Vec<f64>,
    /// Coordinate-plane sectional curvatures, sorted non-increasing.
    pub sectional_distribution: Vec<f64>,
    pub max_residual_rms: f64,
    pub rank_deficient: bool,
    #[cfg_attr(feature = "serde", serde(default))]
    pub label: String,
    #[cfg_attr(feature = "serde", serde(default))]
    pub layer: String,
    #[cfg_attr(feature = "serde", serde(default))]
    pub source: String,
}

impl CurvatureReport {
    /// Checks ordering and the canonical lengths for the stated dimension.
    pub fn validate(&self) -> Result<()> {
        let d = self.dimension;
        if self.riemann_distribution.len() != canonical_count(d) {
            return Err(Error::ShapeMismatch(format!(
                "{} Riemann entries for dimension {d}, expected {}",
                self.riemann_distribution.len(),
                canonical_count(d)
            )));
        }
        if self.sectional_distribution.len() != d * d.saturating_sub(1) / 2 {
            return Err(Error::ShapeMismatch(format!(
                "{} sectional entries for dimension {d}",
                self.sectional_distribution.len()
            )));
        }
        for dist in [&self.riemann_distribution, &self.sectional_distribution] {
            if dist.windows(2).any(|w| !(w[0] >= w[1])) {
                return Err(Error::Parameter("distribution is not sorted non-increasing".into()));
            }
        }
        Ok(())
    }
}

/// Everything computed on the way to a [`CurvatureReport`].
#[derive(Debug, Clone)]
pub struct CurvatureAnalysis {
    pub frame: tangent::TangentFrame,
    pub coordinates: LocalCoordinates,
    pub hessians: HessianStack,
    pub riemann: RiemannTensor,
    pub sectional: SectionalSet,
    pub report: CurvatureReport,
}

/// Spectrum, dimension, frame, coordinates, Hessian fit, Riemann tensor,
/// sectional curvatures and sorted distributions for one patch.
pub fn analyze_patch(patch: &Patch, opts: &CurvatureOptions) -> Result<CurvatureAnalysis> {
    let spectrum = pca_spectrum(patch);
    let dimension = match opts.dimension {
        Some(d) => d,
        None => estimate_dimension(&spectrum, opts.theta).map_err(|e| e.at("estimate_dimension"))?,
    };
    let frame = build_frame(patch, dimension, opts.residual_tol).map_err(|e| e.at("build_frame"))?;
    let coordinates = local_coordinates(patch, &frame).map_err(|e| e.at("local_coordinates"))?;
    let hessians = fit_hessians(&coordinates, opts.ridge).map_err(|e| e.at("fit_hessians"))?;
    let (frame, coordinates, hessians) = if opts.align_frame {
        align_frame(patch, frame, hessians, opts.ridge, ALIGN_MAX_ITER).map_err(|e| e.at("align_frame"))?
    } else {
        (frame, coordinates, hessians)
    };
    let riemann = riemann_tensor(&hessians);
    let sectional = sectional_curvatures(&riemann).map_err(|e| e.at("sectional_curvatures"))?;

    let meta = patch.meta();
    let report = CurvatureReport {
        dimension,
        ambient_dim: patch.ambient_dim(),
        count: patch.len(),
        base_index: patch.base_index(),
        normal_rank: frame.normal_rank(),
        theta: opts.theta,
        absolute: opts.absolute,
        spectrum,
        riemann_distribution: curvature_distribution(&riemann.components, opts.absolute),
        sectional_distribution: curvature_distribution(&sectional.values, opts.absolute),
        max_residual_rms: hessians.residual_rms.iter().copied().fold(0.0, f64::max),
        rank_deficient: hessians.rank_deficient,
        label: meta.label.clone(),
        layer: meta.layer.clone(),
        source: meta.source.clone(),
    };
    Ok(CurvatureAnalysis {
        frame,
        coordinates,
        hessians,
        riemann,
        sectional,
        report,
    })
}

const ALIGN_MAX_ITER: usize = 50;
const ALIGN_GRADIENT_TOL: f64 = 1e-13;
const ALIGN_STEPS: [f64; 7] = [1.0, 2.0, 0.5, 3.0, 0.25, 0.125, 0.0625];

fn max_gradient(stack: &HessianStack) -> f64 {
    stack.gradients.iter().map(|g| g.amax()).fold(0.0, f64::max)
}

fn tilted_frame(frame: &tangent::TangentFrame, gradient: &DMatrix<f64>, step: f64) -> Result<tangent::TangentFrame> {
    let (d, r) = (frame.dimension(), frame.normal_rank());
    let tilted = &frame.tangent + &frame.normal * gradient * step;
    let empty = DMatrix::zeros(frame.ambient_dim(), 0);
    let tangent = crate::linalg::orthonormalize_against(&tilted, &empty, 1e-12);
    if tangent.ncols() != d {
        return Err(Error::Degenerate("tangent plane collapsed while aligning".into()));
    }
    let normal = crate::linalg::orthonormalize_against(&frame.normal, &tangent, 1e-12);
    if normal.ncols() != r {
        return Err(Error::Degenerate("normal space collapsed while aligning".into()));
    }
    Ok(tangent::TangentFrame {
        tangent,
        normal,
        ..frame.clone()
    })
}

/// Tilts the tangent plane toward the fitted surface until the linear terms of
/// the normal components vanish at the base point, so that the fitted Hessians
/// are the second fundamental form there. Each step maps `t_i -> t_i + s sum_a g^a_i n_a`,
/// re-orthonormalises and refits; the step length `s` is the best of a few
/// trial lengths, and iteration stops once no trial reduces `max |g|`.
/// The span of tangent and normal bases is preserved.
pub fn align_frame(
    patch: &Patch,
    mut frame: tangent::TangentFrame,
    mut hessians: HessianStack,
    ridge: f64,
    max_iter: usize,
) -> Result<(tangent::TangentFrame, LocalCoordinates, HessianStack)> {
    let (d, r) = (frame.dimension(), frame.normal_rank());
    let mut coords = local_coordinates(patch, &frame)?;
    let mut current = max_gradient(&hessians);
    for _ in 0..max_iter {
        if r == 0 || current < ALIGN_GRADIENT_TOL {
            break;
        }
        let mut gradient = DMatrix::zeros(r, d);
        for (a, g) in hessians.gradients.iter().enumerate() {
            gradient.row_mut(a).copy_from(&g.transpose());
        }
        let mut best: Option<(f64, tangent::TangentFrame, LocalCoordinates, HessianStack)> = None;
        for step in ALIGN_STEPS {
            let candidate = tilted_frame(&frame, &gradient, step)?;
            let c = local_coordinates(patch, &candidate)?;
            let h = fit_hessians(&c, ridge)?;
            let g = max_gradient(&h);
            if g < best.as_ref().map_or(current, |b| b.0) {
                best = Some((g, candidate, c, h));
            }
        }
        match best {
            Some((g, f, c, h)) => {
                current = g;
                frame = f;
                coords = c;
                hessians = h;
            }
            None => break,
        }
    }
    Ok((frame, coords, hessians))
}

pub fn patch_curvature(patch: &Patch, opts: &CurvatureOptions) -> Result<CurvatureReport> {
    analyze_patch(patch, opts).map(|a| a.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn graph_coords(points: &[(f64, f64)], f: impl Fn(f64, f64) -> f64) -> LocalCoordinates {
        let n = points.len();
        LocalCoordinates {
            tangent: DMatrix::from_fn(n, 2, |r, c| if c == 0 { points[r].0 } else { points[r].1 }),
            normal: DMatrix::from_fn(n, 1, |r, _| f(points[r].0, points[r].1)),
        }
    }

    fn grid(step: f64) -> Vec<(f64, f64)> {
        let mut pts = vec![(0.0, 0.0)];
        for i in -4i32..=4 {
            for j in -4i32..=4 {
                if i != 0 || j != 0 {
                    pts.push((i as f64 * step, j as f64 * step));
                }
            }
        }
        pts
    }

    #[test]
    fn paraboloid_hessian() {
        let c = graph_coords(&grid(0.05), |u, v| u * u + v * v);
        let h = fit_hessians(&c, 0.0).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        assert!((&h.hessians[0] - expected).amax() < 1e-6);
        assert!(!h.rank_deficient);
    }

    #[test]
    fn saddle_hessian() {
        let c = graph_coords(&grid(0.05), |u, v| u * v);
        let h = fit_hessians(&c, 0.0).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!((&h.hessians[0] - expected).amax() < 1e-6);
    }

    #[test]
    fn linear_graph_is_flat() {
        let n = 12;
        let coords = LocalCoordinates {
            tangent: DMatrix::from_fn(n, 1, |r, _| r as f64 * 0.1 - 0.5),
            normal: DMatrix::from_fn(n, 1, |r, _| 3.0 * (r as f64 * 0.1 - 0.5)),
        };
        let h = fit_hessians(&coords, 0.0).unwrap();
        assert!(h.hessians[0][(0, 0)].abs() < 1e-9);
        assert!((h.gradients[0][0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn too_few_samples() {
        let c = graph_coords(&[(0.0, 0.0), (0.1, 0.0), (0.0, 0.1)], |u, v| u * v);
        assert_eq!(
            fit_hessians(&c, 0.0).unwrap_err(),
            Error::InsufficientSamples { needed: 6, got: 3 }
        );
    }

    #[test]
    fn collinear_samples_flag_rank_deficiency() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 * 0.1, 0.0)).collect();
        let c = graph_coords(&pts, |u, _| u * u);
        let h = fit_hessians(&c, 0.0).unwrap();
        assert!(h.rank_deficient);
        assert!(h.hessians[0].iter().all(|v| v.is_finite()));
    }

    #[test]
    fn diagonal_hessian_products() {
        let stack =
            HessianStack::from_hessians(2, vec![DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0])])
                .unwrap();
        let r = riemann_tensor(&stack);
        assert_eq!(r.components.len(), 1);
        assert_eq!(r.get(0, 1, 1, 0), 6.0);
        assert_eq!(r.get(0, 1, 0, 1), -6.0);
        let s = sectional_curvatures(&r).unwrap();
        assert_eq!(s.values, vec![6.0]);
    }

    #[test]
    fn flat_and_identity_cases() {
        let zero = HessianStack::from_hessians(3, vec![DMatrix::zeros(3, 3)]).unwrap();
        assert!(riemann_tensor(&zero).components.iter().all(|&v| v == 0.0));
        let id = HessianStack::from_hessians(3, vec![DMatrix::identity(3, 3)]).unwrap();
        let s = sectional_curvatures(&riemann_tensor(&id)).unwrap();
        assert_eq!(curvature_distribution(&s.values, false), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn no_planes_in_one_dimension() {
        let stack = HessianStack::from_hessians(1, vec![DMatrix::identity(1, 1)]).unwrap();
        assert_eq!(sectional_curvatures(&riemann_tensor(&stack)).unwrap_err(), Error::NoPlanes(1));
    }

    #[test]
    fn canonical_counts() {
        assert_eq!(canonical_count(2), 1);
        assert_eq!(canonical_count(3), 6);
        assert_eq!(canonical_count(4), 21);
        for d in 1..7 {
            assert_eq!(RiemannTensor::canonical_indices(d).len(), canonical_count(d));
            for (p, &(i, l)) in index_pairs(d).iter().enumerate() {
                assert_eq!(RiemannTensor::pair_rank(d, i, l), p);
            }
        }
    }

    #[test]
    fn sorting() {
        assert_eq!(curvature_distribution(&[-1.0, 4.0, 2.0], false), vec![4.0, 2.0, -1.0]);
        assert_eq!(curvature_distribution(&[-5.0, 4.0, 2.0], true), vec![5.0, 4.0, 2.0]);
        assert_eq!(curvature_distribution(&[0.0; 3], false), vec![0.0; 3]);
    }
}
