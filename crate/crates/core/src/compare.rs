//! Manifold comparison: Euclidean statistics with affine alignment, and
//! similar ratios between sorted curvature distributions.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::curvature::CurvatureReport;
use crate::error::{Error, Result};
use crate::linalg::{least_squares, numerical_rank, sorted_svd};
use crate::patch::{Patch, PatchMeta};

/// Default relative floor below which `|b_i|` entries are dropped from a ratio.
pub const DEFAULT_EPS_RATIO: f64 = 1e-9;

/// Subtracts the patch mean from every point.
pub fn normalize(patch: &Patch) -> Patch {
    let mean = patch.mean();
    let mut points = patch.points().clone();
    for mut row in points.row_iter_mut() {
        row -= &mean;
    }
    let meta = PatchMeta {
        normalized: true,
        ..patch.meta().clone()
    };
    Patch::new(points, patch.base_index(), meta).expect("centering preserves patch invariants")
}

/// Affine map `y ~ T x + b` between index-aligned point sets.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFit {
    pub transform: DMatrix<f64>,
    pub translation: DVector<f64>,
    /// `sqrt(1/n sum |T x_i + b - y_i|^2)`
    pub rmse: f64,
    pub rank_before: usize,
    pub rank_after: usize,
    /// Fewer points than unknowns per output coordinate (`n < D + 1`).
    pub underdetermined: bool,
}

impl AffineFit {
    pub fn apply(&self, points: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = points * self.transform.transpose();
        let b = self.translation.transpose();
        for mut row in out.row_iter_mut() {
            row += &b;
        }
        out
    }
}

fn check_aligned(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} versus {}x{} (points x dimension)",
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols()
        )));
    }
    Ok(())
}

fn finish_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, transform: DMatrix<f64>, translation: DVector<f64>) -> AffineFit {
    let mut fit = AffineFit {
        transform,
        translation,
        rmse: 0.0,
        rank_before: numerical_rank(x),
        rank_after: 0,
        underdetermined: x.nrows() < x.ncols() + 1,
    };
    let mapped = fit.apply(x);
    fit.rank_after = numerical_rank(&mapped);
    fit.rmse = libm::sqrt((mapped - y).norm_squared() / x.nrows() as f64);
    fit
}

/// Unconstrained least-squares `(T, b)` minimising `sum |T x_i + b - y_i|^2`,
/// minimum-norm when underdetermined.
pub fn fit_affine(x: &Patch, y: &Patch) -> Result<AffineFit> {
    fit_affine_points(x.points(), y.points())
}

pub fn fit_affine_points(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<AffineFit> {
    check_aligned(x, y)?;
    let (n, dim) = x.shape();
    let mut augmented = DMatrix::from_element(n, dim + 1, 1.0);
    augmented.columns_mut(0, dim).copy_from(x);
    let (w, _) = least_squares(&augmented, y, 0.0);
    let transform = w.rows(0, dim).transpose();
    let translation = w.row(dim).transpose();
    Ok(finish_fit(x, y, transform, translation))
}

/// Similarity fit `T = s R` with `R` a proper rotation (orthogonal Procrustes).
pub fn fit_procrustes(x: &Patch, y: &Patch) -> Result<AffineFit> {
    fit_procrustes_points(x.points(), y.points())
}

pub fn fit_procrustes_points(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<AffineFit> {
    check_aligned(x, y)?;
    let (mx, my) = (x.row_mean(), y.row_mean());
    let mut xc = x.clone();
    let mut yc = y.clone();
    for mut r in xc.row_iter_mut() {
        r -= &mx;
    }
    for mut r in yc.row_iter_mut() {
        r -= &my;
    }
    let cross = yc.transpose() * &xc;
    let svd = sorted_svd(&cross, true, true);
    let (u, v) = (svd.u.unwrap(), svd.v.unwrap());
    let mut signs = DVector::from_element(u.ncols(), 1.0);
    if (&u * v.transpose()).determinant() < 0.0 {
        let last = signs.len() - 1;
        signs[last] = -1.0;
    }
    let rotation = &u * DMatrix::from_diagonal(&signs) * v.transpose();
    let spread = xc.norm_squared();
    let scale = if spread > 0.0 {
        svd.values.iter().zip(signs.iter()).map(|(s, g)| s * g).sum::<f64>() / spread
    } else {
        1.0
    };
    let transform = rotation * scale;
    let translation = my.transpose() - &transform * mx.transpose();
    Ok(finish_fit(x, y, transform, translation))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AlignMethod {
    #[default]
    Affine,
    Procrustes,
}

/// Statistics of two raw, index-aligned patches.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RawStats {
    pub mean_length_a: f64,
    pub mean_length_b: f64,
    /// Mean over `i < j` of `|d^a_ij - d^b_ij|`.
    pub mean_pairwise_difference: f64,
    /// Mean of `|v^a_i - v^b_i|`.
    pub mean_cross_distance: f64,
    pub rank_a: usize,
    pub rank_b: usize,
}

/// Statistics after centring (and optionally reducing) and aligning `a` onto `b`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AlignedStats {
    pub dimension: usize,
    pub method: AlignMethod,
    pub mean_length_a: f64,
    pub mean_length_b: f64,
    pub mean_cross_distance: f64,
    pub rank_a: usize,
    pub rank_transformed: usize,
    pub rmse: f64,
    pub underdetermined: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EuclideanStats {
    pub count: usize,
    pub ambient_dim: usize,
    pub raw: RawStats,
    pub normalized: AlignedStats,
    /// Present when a reduced dimension was requested.
    pub reduced: Option<AlignedStats>,
}

fn mean_row_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.norm()).sum::<f64>() / m.nrows() as f64
}

fn mean_cross(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .zip(b.row_iter())
        .map(|(x, y)| (x - y).norm())
        .sum::<f64>()
        / a.nrows() as f64
}

fn mean_pairwise_difference(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let da = (a.row(i) - a.row(j)).norm();
            let db = (b.row(i) - b.row(j)).norm();
            total += (da - db).abs();
        }
    }
    total / (n * (n - 1) / 2) as f64
}

fn aligned(a: &DMatrix<f64>, b: &DMatrix<f64>, method: AlignMethod) -> Result<AlignedStats> {
    let fit = match method {
        AlignMethod::Affine => fit_affine_points(a, b)?,
        AlignMethod::Procrustes => fit_procrustes_points(a, b)?,
    };
    Ok(AlignedStats {
        dimension: a.ncols(),
        method,
        mean_length_a: mean_row_norm(a),
        mean_length_b: mean_row_norm(b),
        mean_cross_distance: mean_cross(a, b),
        rank_a: fit.rank_before,
        rank_transformed: fit.rank_after,
        rmse: fit.rmse,
        underdetermined: fit.underdetermined,
    })
}

/// Centred coordinates in the patch's own top-`d` principal directions.
pub fn reduce(patch: &Patch, d: usize) -> Result<DMatrix<f64>> {
    let centered = normalize(patch);
    let available = (patch.len() - 1).min(patch.ambient_dim());
    if d == 0 || d > available {
        return Err(Error::RankExceeded {
            requested: d,
            available,
        });
    }
    let svd = sorted_svd(centered.points(), false, true);
    let basis = svd.v.unwrap().columns(0, d).into_owned();
    Ok(centered.points() * basis)
}

/// Raw statistics, plus alignment of the centred patches and, with
/// `reduce_to = Some(d)`, of their `d`-dimensional PCA reductions.
pub fn euclidean_stats(
    a: &Patch,
    b: &Patch,
    reduce_to: Option<usize>,
    method: AlignMethod,
) -> Result<EuclideanStats> {
    check_aligned(a.points(), b.points())?;
    let (pa, pb) = (a.points(), b.points());
    let raw = RawStats {
        mean_length_a: mean_row_norm(pa),
        mean_length_b: mean_row_norm(pb),
        mean_pairwise_difference: mean_pairwise_difference(pa, pb),
        mean_cross_distance: mean_cross(pa, pb),
        rank_a: numerical_rank(pa),
        rank_b: numerical_rank(pb),
    };
    let (na, nb) = (normalize(a), normalize(b));
    let normalized = aligned(na.points(), nb.points(), method)?;
    let reduced = match reduce_to {
        Some(d) => Some(aligned(&reduce(a, d)?, &reduce(b, d)?, method)?),
        None => None,
    };
    Ok(EuclideanStats {
        count: a.len(),
        ambient_dim: a.ambient_dim(),
        raw,
        normalized,
        reduced,
    })
}

/// Ratio curve `r_i = a_i / b_i`, its least-squares line `r = k i + c` over
/// `i = 1..n`, and the similar ratio `r0 = k n / 2 + c`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimilarRatio {
    pub ratios: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub similar_ratio: f64,
    pub n: usize,
    /// Entries dropped because `|b_i| < eps * max |b|`.
    pub filtered: usize,
}

pub fn similar_ratio(a: &[f64], b: &[f64], eps_ratio: f64) -> Result<SimilarRatio> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "distributions have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if !(eps_ratio >= 0.0) {
        return Err(Error::Parameter(format!("eps_ratio must be non-negative, got {eps_ratio}")));
    }
    let peak = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = eps_ratio * peak;
    let ratios: Vec<f64> = a
        .iter()
        .zip(b)
        .filter(|(_, &bi)| bi != 0.0 && bi.abs() >= floor)
        .map(|(ai, bi)| ai / bi)
        .collect();
    let n = ratios.len();
    if n < 2 {
        return Err(Error::DegenerateRatio { surviving: n });
    }
    let nf = n as f64;
    let mean_i = (nf + 1.0) / 2.0;
    let mean_r = ratios.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (idx, r) in ratios.iter().enumerate() {
        let di = (idx + 1) as f64 - mean_i;
        sxy += di * (r - mean_r);
        sxx += di * di;
    }
    let slope = sxy / sxx;
    let intercept = mean_r - slope * mean_i;
    Ok(SimilarRatio {
        filtered: a.len() - n,
        similar_ratio: 0.5 * slope * nf + intercept,
        slope,
        intercept,
        n,
        ratios,
    })
}

/// Fraction of values strictly inside `(lo, hi)`.
pub fn range_percentage(values: &[f64], lo: f64, hi: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("no similar ratios to aggregate"));
    }
    if !(lo < hi) {
        return Err(Error::Parameter(format!("empty range ({lo}, {hi})")));
    }
    let inside = values.iter().filter(|&&v| lo < v && v < hi).count();
    Ok(inside as f64 / values.len() as f64)
}

/// A similar ratio, or why none could be formed.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "status", rename_all = "snake_case"))]
pub enum RatioOutcome {
    Ok(SimilarRatio),
    Degenerate { reason: String },
}

impl RatioOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            RatioOutcome::Ok(r) => Some(r.similar_ratio),
            RatioOutcome::Degenerate { .. } => None,
        }
    }
}

fn outcome(a: &[f64], b: &[f64], eps: f64) -> RatioOutcome {
    match similar_ratio(a, b, eps) {
        Ok(r) => RatioOutcome::Ok(r),
        Err(e) => RatioOutcome::Degenerate {
            reason: format!("{e}"),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ManifoldComparison {
    pub dimension_a: usize,
    pub dimension_b: usize,
    pub dimension_match: bool,
    pub riemann: Option<RatioOutcome>,
    pub sectional: Option<RatioOutcome>,
}

/// Similar ratios of the Riemann and sectional distributions of `a` against `b`.
/// Differing dimensions yield a mismatch record rather than an error.
pub fn compare_manifolds(a: &CurvatureReport, b: &CurvatureReport, eps_ratio: f64) -> ManifoldComparison {
    let matched = a.dimension == b.dimension;
    let (riemann, sectional) = if matched {
        (
            Some(outcome(&a.riemann_distribution, &b.riemann_distribution, eps_ratio)),
            Some(outcome(&a.sectional_distribution, &b.sectional_distribution, eps_ratio)),
        )
    } else {
        (None, None)
    };
    ManifoldComparison {
        dimension_a: a.dimension,
        dimension_b: b.dimension,
        dimension_match: matched,
        riemann,
        sectional,
    }
}
