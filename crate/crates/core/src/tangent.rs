//! Local PCA: covariance spectrum, intrinsic dimension, and the orthonormal
//! tangent/normal frame anchored at a patch's base point.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{orthonormalize_against, sorted_svd};
use crate::patch::Patch;

/// Default cumulative eigenvalue mass used to pick the dimension.
pub const DEFAULT_THETA: f64 = 0.90;
/// Default relative cut-off for residual singular values kept as normal directions.
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-8;

/// Covariance eigenvalues of a mean-centred patch, sorted non-increasing.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub total: f64,
}

impl Spectrum {
    pub fn from_eigenvalues(mut eigenvalues: Vec<f64>) -> Self {
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        let top = eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
        for v in eigenvalues.iter_mut() {
            if *v < 0.0 && *v >= -1e-12 * top {
                *v = 0.0;
            }
        }
        let total = eigenvalues.iter().sum();
        Spectrum { eigenvalues, total }
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn nonzero_count(&self) -> usize {
        self.eigenvalues.iter().filter(|&&v| v > 0.0).count()
    }
}

/// Eigenvalues of `1/(n-1) * sum (x_i - mean)(x_i - mean)^T`, keeping the
/// `min(n - 1, D)` that are not structurally zero.
pub fn pca_spectrum(patch: &Patch) -> Spectrum {
    let centered = centered_points(patch);
    let n = patch.len();
    let keep = (n - 1).min(patch.ambient_dim());
    let svd = sorted_svd(&centered, false, false);
    let scale = 1.0 / (n - 1) as f64;
    let eigenvalues = svd
        .values
        .iter()
        .take(keep)
        .map(|s| s * s * scale)
        .collect();
    Spectrum::from_eigenvalues(eigenvalues)
}

/// Smallest `d` whose leading eigenvalues carry at least `theta` of the total mass.
pub fn estimate_dimension(spectrum: &Spectrum, theta: f64) -> Result<usize> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::Parameter(format!("theta must lie in (0, 1], got {theta}")));
    }
    if !(spectrum.total > 0.0) {
        return Err(Error::Degenerate("covariance has zero total mass".into()));
    }
    let target = theta * spectrum.total;
    let mut cumulative = 0.0;
    for (i, &v) in spectrum.eigenvalues.iter().enumerate() {
        cumulative += v;
        if cumulative >= target {
            return Ok(i + 1);
        }
    }
    Ok(spectrum.nonzero_count())
}

/// Orthonormal frame at the base point: `d` tangent directions and the `r`
/// normal directions actually excited by the data. Bases are stored as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentFrame {
    pub base: DVector<f64>,
    pub tangent: DMatrix<f64>,
    pub normal: DMatrix<f64>,
    /// Singular values of the off-tangent residuals, non-increasing.
    pub residual_singular_values: Vec<f64>,
}

impl TangentFrame {
    pub fn dimension(&self) -> usize {
        self.tangent.ncols()
    }

    pub fn normal_rank(&self) -> usize {
        self.normal.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.base.len()
    }

    /// Largest deviation of the stacked basis Gram matrix from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let (dim, d, r) = (self.ambient_dim(), self.dimension(), self.normal_rank());
        let mut all = DMatrix::zeros(dim, d + r);
        all.columns_mut(0, d).copy_from(&self.tangent);
        all.columns_mut(d, r).copy_from(&self.normal);
        let gram = all.transpose() * &all;
        let mut worst: f64 = 0.0;
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - target).abs());
            }
        }
        worst
    }
}

/// Tangent basis from the top-`d` principal directions; normal basis from the
/// principal directions of the base-relative residuals whose singular values
/// exceed `residual_tol` times the largest one.
pub fn build_frame(patch: &Patch, d: usize, residual_tol: f64) -> Result<TangentFrame> {
    let (n, dim) = (patch.len(), patch.ambient_dim());
    if d == 0 {
        return Err(Error::Parameter("dimension must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&residual_tol) {
        return Err(Error::Parameter(format!(
            "residual tolerance must lie in [0, 1), got {residual_tol}"
        )));
    }
    let available = (n - 1).min(dim);
    if d > available {
        return Err(Error::RankExceeded {
            requested: d,
            available,
        });
    }

    let centered = centered_points(patch);
    let svd = sorted_svd(&centered, false, true);
    let top = svd.values.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let rank = svd
        .values
        .iter()
        .filter(|&&s| s > crate::linalg::rank_tolerance(centered.shape(), top))
        .count();
    if d > rank {
        return Err(Error::RankExceeded {
            requested: d,
            available: rank,
        });
    }

    let relative = patch.relative_to_base();
    let mut tangent = svd.v.unwrap().columns(0, d).into_owned();
    orient_columns(&mut tangent, &relative);

    let residual = &relative - (&relative * &tangent) * tangent.transpose();
    let res_svd = sorted_svd(&residual, false, true);
    let res_top = res_svd.values.first().copied().unwrap_or(0.0);
    // Rounding noise in `x - base` sits near eps * |data|; never treat it as geometry.
    let data_scale = sorted_svd(&relative, false, false)
        .values
        .first()
        .copied()
        .unwrap_or(0.0);
    let floor = n.max(dim) as f64 * f64::EPSILON * data_scale;
    let cutoff = (residual_tol * res_top).max(floor);
    let keep = res_svd.values.iter().take_while(|&&s| s > cutoff).count();
    let candidates = res_svd.v.unwrap().columns(0, keep).into_owned();
    let normal = orthonormalize_against(&candidates, &tangent, 1e-6);

    Ok(TangentFrame {
        base: patch.base(),
        tangent,
        normal,
        residual_singular_values: res_svd.values,
    })
}

/// Tangent (`u`) and normal (`f`) coordinates of every point relative to the base.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCoordinates {
    /// `n x d`
    pub tangent: DMatrix<f64>,
    /// `n x r`
    pub normal: DMatrix<f64>,
}

impl LocalCoordinates {
    pub fn len(&self) -> usize {
        self.tangent.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tangent.nrows() == 0
    }

    pub fn dimension(&self) -> usize {
        self.tangent.ncols()
    }

    pub fn normal_rank(&self) -> usize {
        self.normal.ncols()
    }
}

pub fn local_coordinates(patch: &Patch, frame: &TangentFrame) -> Result<LocalCoordinates> {
    if patch.ambient_dim() != frame.ambient_dim() {
        return Err(Error::ShapeMismatch(format!(
            "patch dimension {} but frame dimension {}",
            patch.ambient_dim(),
            frame.ambient_dim()
        )));
    }
    let relative = relative_to(patch, &frame.base);
    Ok(LocalCoordinates {
        tangent: &relative * &frame.tangent,
        normal: &relative * &frame.normal,
    })
}

/// Reassembles ambient points from local coordinates, one per row.
pub fn reconstruct(frame: &TangentFrame, coords: &LocalCoordinates) -> DMatrix<f64> {
    let mut points =
        &coords.tangent * frame.tangent.transpose() + &coords.normal * frame.normal.transpose();
    let base = frame.base.transpose();
    for mut row in points.row_iter_mut() {
        row += &base;
    }
    points
}

fn centered_points(patch: &Patch) -> DMatrix<f64> {
    let mean = patch.mean();
    let mut centered = patch.points().clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    centered
}

fn relative_to(patch: &Patch, base: &DVector<f64>) -> DMatrix<f64> {
    let base = base.transpose();
    let mut rel = patch.points().clone();
    for mut row in rel.row_iter_mut() {
        row -= &base;
    }
    rel
}

/// Fixes the sign of each basis column from the data alone, so that rigid
/// motions of the patch move the basis along with it. The projected third
/// moment decides; for symmetric data the first clearly non-zero projection does.
fn orient_columns(basis: &mut DMatrix<f64>, relative: &DMatrix<f64>) {
    for mut col in basis.column_iter_mut() {
        let proj = relative * &col;
        let cubic: f64 = proj.iter().map(|p| p * p * p).sum();
        let scale: f64 = proj.iter().map(|p| (p * p * p).abs()).sum();
        let flip = if cubic.abs() > 1e-9 * scale {
            cubic < 0.0
        } else {
            let peak = proj.amax();
            proj.iter()
                .find(|p| p.abs() > 1e-6 * peak)
                .is_some_and(|&p| p < 0.0)
        };
        if flip {
            col.neg_mut();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch::PatchMeta;
    use alloc::vec;

    fn patch(rows: Vec<Vec<f64>>) -> Patch {
        Patch::from_rows(&rows, 0, PatchMeta::default()).unwrap()
    }

    #[test]
    fn identical_points_have_zero_spectrum() {
        let p = patch(vec![vec![1.0, 2.0, 3.0]; 4]);
        let s = pca_spectrum(&p);
        assert!(s.eigenvalues.iter().all(|&v| v == 0.0));
        assert!(matches!(estimate_dimension(&s, 0.9), Err(Error::Degenerate(_))));
    }

    #[test]
    fn cross_in_r5_has_two_directions() {
        // mean is zero; covariance diag(2/3, 1/6, 0, 0, 0) with n - 1 = 3
        let p = patch(vec![
            vec![1.0, 0.0, 0.0, 0.0, 0.0],
            vec![-1.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.5, 0.0, 0.0, 0.0],
            vec![0.0, -0.5, 0.0, 0.0, 0.0],
        ]);
        let s = pca_spectrum(&p);
        assert_eq!(s.len(), 3);
        assert!((s.eigenvalues[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((s.eigenvalues[1] - 1.0 / 6.0).abs() < 1e-14);
        assert!(s.eigenvalues[2].abs() < 1e-14);
    }

    #[test]
    fn cumulative_mass_rule() {
        let s = Spectrum::from_eigenvalues(vec![6.0, 3.0, 1.0]);
        assert_eq!(estimate_dimension(&s, 0.9).unwrap(), 2);
        assert_eq!(estimate_dimension(&s, 0.6).unwrap(), 1);
        assert_eq!(estimate_dimension(&s, 1.0).unwrap(), 3);
        let with_zero = Spectrum::from_eigenvalues(vec![2.0, 1.0, 0.0, 0.0]);
        assert_eq!(estimate_dimension(&with_zero, 1.0).unwrap(), 2);
        assert!(estimate_dimension(&s, 0.0).is_err());
        assert!(estimate_dimension(&s, 1.5).is_err());
    }

    #[test]
    fn tiny_negative_eigenvalues_clamped() {
        let s = Spectrum::from_eigenvalues(vec![-1e-15, 4.0]);
        assert_eq!(s.eigenvalues, vec![4.0, 0.0]);
    }

    #[test]
    fn plane_through_base_has_no_normals() {
        let mut rows = vec![vec![0.0; 5]];
        for (a, b) in [(1.0, 0.0), (0.0, 1.0), (-0.7, 0.4), (0.3, -0.9), (0.5, 0.5)] {
            rows.push(vec![a, b, 0.0, 0.0, 0.0]);
        }
        let p = patch(rows);
        let f = build_frame(&p, 2, DEFAULT_RESIDUAL_TOL).unwrap();
        assert_eq!(f.normal_rank(), 0);
        assert!(f.orthonormality_error() < 1e-10);
    }

    #[test]
    fn dimension_beyond_rank_rejected() {
        let p = patch(vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![2.0, 0.0, 0.0]]);
        assert!(matches!(
            build_frame(&p, 2, 1e-8),
            Err(Error::RankExceeded { requested: 2, available: 1 })
        ));
        assert!(matches!(build_frame(&p, 3, 1e-8), Err(Error::RankExceeded { .. })));
    }

    #[test]
    fn paraboloid_normal_is_vertical() {
        let mut rows = vec![vec![0.0, 0.0, 0.0]];
        for i in -3..=3 {
            for j in -3..=3 {
                if i == 0 && j == 0 {
                    continue;
                }
                let (u, v) = (i as f64 * 0.05, j as f64 * 0.05);
                rows.push(vec![u, v, u * u + v * v]);
            }
        }
        let p = patch(rows);
        let f = build_frame(&p, 2, DEFAULT_RESIDUAL_TOL).unwrap();
        assert_eq!(f.normal_rank(), 1);
        assert!((f.normal[(2, 0)].abs() - 1.0).abs() < 1e-10);
        let c = local_coordinates(&p, &f).unwrap();
        assert!(c.tangent.row(0).iter().chain(c.normal.row(0).iter()).all(|&v| v == 0.0));
        let back = reconstruct(&f, &c);
        assert!((back - p.points()).amax() < 1e-12);
    }

    #[test]
    fn linear_projection_coordinates() {
        let frame = TangentFrame {
            base: DVector::from_vec(vec![1.0, 1.0, 1.0]),
            tangent: DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
            normal: DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]),
            residual_singular_values: vec![],
        };
        let p = patch(vec![vec![1.0, 1.0, 1.0], vec![1.3, 1.0, 1.0]]);
        let c = local_coordinates(&p, &frame).unwrap();
        assert!((c.tangent[(1, 0)] - 0.3).abs() < 1e-15);
        assert_eq!(c.tangent[(1, 1)], 0.0);
        assert_eq!(c.normal[(1, 0)], 0.0);
    }
}
