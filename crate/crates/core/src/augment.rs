//! Derivative images: reconstructions `U S' V^T` of an image channel with a
//! chosen subset of singular values set to zero.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::sorted_svd;
use crate::patch::ImageMatrix;

/// Default largest trailing count per channel.
pub const DEFAULT_K_MAX: usize = 22;

/// Which singular values of one channel survive; index 0 is the largest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SingularMask {
    keep: Vec<bool>,
}

impl SingularMask {
    pub fn new(keep: Vec<bool>) -> Result<Self> {
        if !keep.iter().any(|&k| k) {
            return Err(Error::InvalidMask("mask zeroes every singular value".into()));
        }
        Ok(SingularMask { keep })
    }

    pub fn keep_all(len: usize) -> Result<Self> {
        SingularMask::new(vec![true; len])
    }

    /// Zeroes the `k` smallest of `len` singular values.
    pub fn trailing(len: usize, k: usize) -> Result<Self> {
        if k > len {
            return Err(Error::InvalidMask(format!("cannot zero {k} of {len} values")));
        }
        SingularMask::new((0..len).map(|i| i < len - k).collect())
    }

    /// Keeps only the `k` largest of `len` singular values.
    pub fn leading(len: usize, k: usize) -> Result<Self> {
        SingularMask::new((0..len).map(|i| i < k).collect())
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn keeps(&self, i: usize) -> bool {
        self.keep[i]
    }
}

/// Thin SVD of one channel, singular values non-increasing.
#[derive(Debug, Clone)]
pub struct ChannelSvd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl ChannelSvd {
    pub fn new(channel: &DMatrix<f64>) -> Self {
        let svd = sorted_svd(channel, true, true);
        ChannelSvd {
            u: svd.u.unwrap(),
            singular_values: svd.values,
            v: svd.v.unwrap(),
        }
    }

    fn rank_one(&self, i: usize, into: &mut DMatrix<f64>, sign: f64) {
        // into += sign * s_i u_i v_i^T
        into.ger(
            sign * self.singular_values[i],
            &self.u.column(i),
            &self.v.column(i),
            1.0,
        );
    }

    /// Reconstruction with the masked singular values zeroed. Builds from
    /// whichever of the kept/zeroed sets is smaller.
    pub fn reconstruct(&self, original: &DMatrix<f64>, mask: &SingularMask) -> DMatrix<f64> {
        let zeroed = mask.len() - mask.kept();
        if zeroed <= mask.kept() {
            let mut out = original.clone();
            for i in (0..mask.len()).filter(|&i| !mask.keeps(i)) {
                self.rank_one(i, &mut out, -1.0);
            }
            out
        } else {
            let mut out = DMatrix::zeros(original.nrows(), original.ncols());
            for i in (0..mask.len()).filter(|&i| mask.keeps(i)) {
                self.rank_one(i, &mut out, 1.0);
            }
            out
        }
    }

    /// `sqrt(sum of squared zeroed singular values)`.
    pub fn truncation_error(&self, mask: &SingularMask) -> f64 {
        let sq: f64 = self
            .singular_values
            .iter()
            .enumerate()
            .filter(|&(i, _)| !mask.keeps(i))
            .map(|(_, s)| s * s)
            .sum();
        libm::sqrt(sq)
    }
}

fn check_masks(img: &ImageMatrix, masks: &[SingularMask]) -> Result<()> {
    if masks.len() != img.channel_count() {
        return Err(Error::InvalidMask(format!(
            "{} masks for {} channels",
            masks.len(),
            img.channel_count()
        )));
    }
    let len = img.singular_count();
    if let Some(m) = masks.iter().find(|m| m.len() != len) {
        return Err(Error::InvalidMask(format!(
            "mask has {} entries, channel has {len} singular values",
            m.len()
        )));
    }
    Ok(())
}

/// Unquantised derivative image, one mask per channel.
pub fn derivative_image(img: &ImageMatrix, masks: &[SingularMask]) -> Result<ImageMatrix> {
    check_masks(img, masks)?;
    let channels = img
        .channels()
        .iter()
        .zip(masks)
        .map(|(c, m)| ChannelSvd::new(c).reconstruct(c, m))
        .collect();
    ImageMatrix::new(channels)
}

/// Largest trailing count per channel; the grid has `k_max^channels` members.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub k_max: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            k_max: DEFAULT_K_MAX,
        }
    }
}

impl GridSpec {
    pub fn validate(&self, img: &ImageMatrix) -> Result<()> {
        let limit = img.singular_count() - 1;
        if self.k_max < 1 || self.k_max > limit {
            return Err(Error::Parameter(format!(
                "k_max must lie in 1..={limit} for a {}x{} image, got {}",
                img.rows(),
                img.cols(),
                self.k_max
            )));
        }
        Ok(())
    }
}

/// All trailing-`k` derivatives of an image. Per-channel truncations are
/// computed once; grid members are combinations of them.
#[derive(Debug, Clone)]
pub struct DerivativeGrid {
    spec: GridSpec,
    singular_values: Vec<Vec<f64>>,
    /// `truncated[c][k - 1]`: channel `c` with its last `k` singular values zeroed.
    truncated: Vec<Vec<DMatrix<f64>>>,
    /// `squared_error[c][k - 1]`: sum of the zeroed squared singular values.
    squared_error: Vec<Vec<f64>>,
}

/// One grid member: the trailing counts `(k_1, .., k_c)` and its channels.
#[derive(Debug, Clone)]
pub struct GridImage<'g> {
    pub ks: Vec<usize>,
    pub channels: Vec<&'g DMatrix<f64>>,
    /// `sqrt` of the summed squared zeroed singular values over all channels.
    pub truncation_error: f64,
}

impl GridImage<'_> {
    pub fn to_image(&self) -> ImageMatrix {
        ImageMatrix::new(self.channels.iter().map(|&c| c.clone()).collect())
            .expect("grid channels are valid")
    }
}

impl DerivativeGrid {
    pub fn new(img: &ImageMatrix, spec: GridSpec) -> Result<Self> {
        spec.validate(img)?;
        let mut singular_values = Vec::new();
        let mut truncated = Vec::new();
        let mut squared_error = Vec::new();
        for channel in img.channels() {
            let svd = ChannelSvd::new(channel);
            let len = svd.singular_values.len();
            let mut current = channel.clone();
            let mut per_k = Vec::with_capacity(spec.k_max);
            let mut err = Vec::with_capacity(spec.k_max);
            let mut acc = 0.0;
            for k in 1..=spec.k_max {
                let i = len - k;
                svd.rank_one(i, &mut current, -1.0);
                acc += svd.singular_values[i] * svd.singular_values[i];
                per_k.push(current.clone());
                err.push(acc);
            }
            singular_values.push(svd.singular_values);
            truncated.push(per_k);
            squared_error.push(err);
        }
        Ok(DerivativeGrid {
            spec,
            singular_values,
            truncated,
            squared_error,
        })
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn channel_count(&self) -> usize {
        self.truncated.len()
    }

    pub fn singular_values(&self, channel: usize) -> &[f64] {
        &self.singular_values[channel]
    }

    /// `k_max^channels`.
    pub fn len(&self) -> usize {
        self.spec.k_max.pow(self.channel_count() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trailing-count tuple of the `index`-th member in lexicographic order.
    pub fn tuple(&self, index: usize) -> Vec<usize> {
        let (k, c) = (self.spec.k_max, self.channel_count());
        let mut ks = vec![0; c];
        let mut rest = index;
        for slot in ks.iter_mut().rev() {
            *slot = rest % k + 1;
            rest /= k;
        }
        ks
    }

    pub fn get(&self, index: usize) -> GridImage<'_> {
        let ks = self.tuple(index);
        let channels = ks
            .iter()
            .enumerate()
            .map(|(c, &k)| &self.truncated[c][k - 1])
            .collect();
        let sq: f64 = ks
            .iter()
            .enumerate()
            .map(|(c, &k)| self.squared_error[c][k - 1])
            .sum();
        GridImage {
            ks,
            channels,
            truncation_error: libm::sqrt(sq),
        }
    }

    /// Members in lexicographic order of `(k_1, .., k_c)`.
    pub fn iter(&self) -> impl ExactSizeIterator<Item = GridImage<'_>> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    /// Per-channel truncation error of zeroing the last `k` values.
    pub fn channel_error(&self, channel: usize, k: usize) -> f64 {
        libm::sqrt(self.squared_error[channel][k - 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grey(rows: usize, cols: usize, data: &[f64]) -> ImageMatrix {
        ImageMatrix::new(vec![DMatrix::from_row_slice(rows, cols, data)]).unwrap()
    }

    #[test]
    fn diagonal_drop_last() {
        let img = grey(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let out = derivative_image(&img, &[SingularMask::trailing(2, 1).unwrap()]).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.0]);
        assert!((out.channel(0) - expected).amax() < 1e-12);
    }

    #[test]
    fn keep_all_is_identity() {
        let img = grey(2, 3, &[1.0, 7.0, 3.0, 200.0, 5.5, 90.0]);
        let out = derivative_image(&img, &[SingularMask::keep_all(2).unwrap()]).unwrap();
        assert!((out.channel(0) - img.channel(0)).amax() < 1e-9);
    }

    #[test]
    fn mask_errors() {
        assert!(SingularMask::new(vec![false, false]).is_err());
        assert!(SingularMask::trailing(3, 3).is_err());
        let img = grey(2, 3, &[1.0; 6]);
        assert!(derivative_image(&img, &[SingularMask::keep_all(3).unwrap()]).is_err());
        assert!(derivative_image(&img, &[]).is_err());
    }

    #[test]
    fn leading_mask_builds_from_kept_values() {
        let img = grey(3, 3, &[4.0, 1.0, 0.0, 2.0, 9.0, 1.0, 0.5, 3.0, 8.0]);
        let svd = ChannelSvd::new(img.channel(0));
        let mask = SingularMask::leading(3, 1).unwrap();
        let out = derivative_image(&img, core::slice::from_ref(&mask)).unwrap();
        let err = (img.channel(0) - out.channel(0)).norm();
        assert!((err - svd.truncation_error(&mask)).abs() < 1e-10);
    }

    #[test]
    fn grid_sizes_and_order() {
        let data: Vec<f64> = (0..30).map(|i| ((i * 37) % 11) as f64).collect();
        let img = grey(5, 6, &data);
        let grid = DerivativeGrid::new(&img, GridSpec { k_max: 3 }).unwrap();
        let ks: Vec<Vec<usize>> = grid.iter().map(|g| g.ks).collect();
        assert_eq!(ks, vec![vec![1], vec![2], vec![3]]);
        assert!(DerivativeGrid::new(&img, GridSpec { k_max: 5 }).is_err());
        assert!(DerivativeGrid::new(&img, GridSpec { k_max: 0 }).is_err());

        let rgb = ImageMatrix::new(vec![img.channel(0).clone(); 3]).unwrap();
        let grid = DerivativeGrid::new(&rgb, GridSpec { k_max: 1 }).unwrap();
        assert_eq!(grid.len(), 1);
        assert_eq!(grid.get(0).ks, vec![1, 1, 1]);
        let grid = DerivativeGrid::new(&rgb, GridSpec { k_max: 2 }).unwrap();
        let order: Vec<Vec<usize>> = grid.iter().map(|g| g.ks).collect();
        assert_eq!(order[1], vec![1, 1, 2]);
        assert_eq!(order[2], vec![1, 2, 1]);
        assert_eq!(order[7], vec![2, 2, 2]);
    }
}
