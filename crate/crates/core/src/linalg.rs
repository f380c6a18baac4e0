//! Small dense linear-algebra helpers over nalgebra's SVD.

use alloc::vec::Vec;

use nalgebra::{DMatrix, SVD};

/// Thin SVD with singular values sorted non-increasing.
///
/// `u` is `m x k`, `v` is `n x k` (right singular vectors as columns), `k = min(m, n)`.
pub(crate) struct SortedSvd {
    pub values: Vec<f64>,
    pub u: Option<DMatrix<f64>>,
    pub v: Option<DMatrix<f64>>,
}

pub(crate) fn sorted_svd(m: &DMatrix<f64>, want_u: bool, want_v: bool) -> SortedSvd {
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return SortedSvd {
            values: Vec::new(),
            u: want_u.then(|| DMatrix::zeros(m.nrows(), 0)),
            v: want_v.then(|| DMatrix::zeros(m.ncols(), 0)),
        };
    }
    if m.nrows() < m.ncols() {
        let t = tall_svd(&m.transpose(), want_v, want_u);
        return SortedSvd {
            values: t.values,
            u: t.v,
            v: t.u,
        };
    }
    tall_svd(m, want_u, want_v)
}

/// SVD of an `m x n` matrix with `m >= n`. Strictly tall inputs are reduced to
/// their `n x n` triangular QR factor first; the bidiagonal SVD is markedly
/// more accurate on the small factor than on the tall matrix directly.
fn tall_svd(m: &DMatrix<f64>, want_u: bool, want_v: bool) -> SortedSvd {
    let k = m.ncols();
    let (core, q) = if m.nrows() > k {
        let qr = m.clone().qr();
        let q = want_u.then(|| qr.q());
        (qr.r(), q)
    } else {
        (m.clone(), None)
    };
    let svd = SVD::new(core, want_u, want_v);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = svd.u.map(|u| {
        let sorted = DMatrix::from_fn(u.nrows(), k, |r, c| u[(r, order[c])]);
        match &q {
            Some(q) => q * sorted,
            None => sorted,
        }
    });
    let v = svd
        .v_t
        .map(|vt| DMatrix::from_fn(vt.ncols(), k, |r, c| vt[(order[c], r)]));
    SortedSvd { values, u, v }
}

/// Rank tolerance `max(m, n) * sigma_max * 2^-52`.
pub(crate) fn rank_tolerance(shape: (usize, usize), sigma_max: f64) -> f64 {
    shape.0.max(shape.1) as f64 * sigma_max * f64::EPSILON
}

/// Number of singular values above [`rank_tolerance`].
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let svd = sorted_svd(m, false, false);
    let Some(&top) = svd.values.first() else {
        return 0;
    };
    let tol = rank_tolerance(m.shape(), top);
    svd.values.iter().filter(|&&s| s > tol).count()
}

/// Minimum-norm (optionally ridge-damped) least-squares solution of `a x = b`
/// for every column of `b`. Returns the solution and the numerical rank of `a`.
pub(crate) fn least_squares(a: &DMatrix<f64>, b: &DMatrix<f64>, ridge: f64) -> (DMatrix<f64>, usize) {
    let svd = sorted_svd(a, true, true);
    let (u, v) = (svd.u.unwrap(), svd.v.unwrap());
    let top = svd.values.first().copied().unwrap_or(0.0);
    let tol = rank_tolerance(a.shape(), top);
    let rank = svd.values.iter().filter(|&&s| s > tol).count();
    let ut_b = u.transpose() * b;
    let mut scaled = ut_b;
    for (i, &s) in svd.values.iter().enumerate() {
        let w = if s > tol { s / (s * s + ridge) } else { 0.0 };
        scaled.row_mut(i).scale_mut(w);
    }
    (v * scaled, rank)
}

/// Removes from each column of `vectors` its components along the orthonormal
/// columns of `against` and along previously accepted columns, normalising
/// what remains. Columns whose remainder falls below `drop_below` (relative to
/// their original norm) are discarded. Two Gram-Schmidt passes are applied.
pub(crate) fn orthonormalize_against(
    vectors: &DMatrix<f64>,
    against: &DMatrix<f64>,
    drop_below: f64,
) -> DMatrix<f64> {
    let mut kept: Vec<nalgebra::DVector<f64>> = Vec::new();
    for col in vectors.column_iter() {
        let original = col.norm();
        if original == 0.0 {
            continue;
        }
        let mut w = col.into_owned();
        for _ in 0..2 {
            for a in against.column_iter() {
                let proj = a.dot(&w);
                w.axpy(-proj, &a, 1.0);
            }
            for k in &kept {
                let proj = k.dot(&w);
                w.axpy(-proj, k, 1.0);
            }
        }
        let norm = w.norm();
        if norm > drop_below * original {
            kept.push(w / norm);
        }
    }
    let rows = vectors.nrows();
    DMatrix::from_fn(rows, kept.len(), |r, c| kept[c][r])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svd_sorted_and_rank() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 0.0]);
        let s = sorted_svd(&m, true, true);
        assert!((s.values[0] - 5.0).abs() < 1e-12);
        assert!((s.values[1] - 1.0).abs() < 1e-12);
        assert_eq!(numerical_rank(&m), 2);
        assert_eq!(numerical_rank(&DMatrix::zeros(4, 2)), 0);
    }

    #[test]
    fn min_norm_solution_for_rank_deficient_system() {
        // x1 + x2 = 2 has minimum-norm solution (1, 1)
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[2.0, 2.0]);
        let (x, rank) = least_squares(&a, &b, 0.0);
        assert_eq!(rank, 1);
        assert!((x[(0, 0)] - 1.0).abs() < 1e-12 && (x[(1, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gram_schmidt_respects_existing_basis() {
        let against = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let v = DMatrix::from_column_slice(3, 2, &[1.0, 1.0, 0.0, 2.0, 0.0, 0.0]);
        let q = orthonormalize_against(&v, &against, 1e-10);
        assert_eq!(q.ncols(), 1);
        assert!((q[(1, 0)].abs() - 1.0).abs() < 1e-12);
    }
}
