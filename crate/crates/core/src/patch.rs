//! Point-cloud patches and image matrices, the two inputs every other module consumes.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};

/// Descriptive metadata carried alongside a patch.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PatchMeta {
    #[cfg_attr(feature = "serde", serde(default))]
    pub label: String,
    #[cfg_attr(feature = "serde", serde(default))]
    pub layer: String,
    #[cfg_attr(feature = "serde", serde(default))]
    pub source: String,
    #[cfg_attr(feature = "serde", serde(default))]
    pub normalized: bool,
}

/// An ordered set of `n` points in `R^D` with a designated base point.
///
/// Points are the rows of an `n x D` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    points: DMatrix<f64>,
    base_index: usize,
    meta: PatchMeta,
}

impl Patch {
    pub fn new(points: DMatrix<f64>, base_index: usize, meta: PatchMeta) -> Result<Self> {
        let (n, dim) = points.shape();
        if n < 2 {
            return Err(Error::InvalidPatch(format!("need at least 2 points, got {n}")));
        }
        if dim < 2 {
            return Err(Error::InvalidPatch(format!(
                "ambient dimension must be at least 2, got {dim}"
            )));
        }
        if base_index >= n {
            return Err(Error::InvalidPatch(format!(
                "base index {base_index} out of range for {n} points"
            )));
        }
        if let Some(pos) = points.iter().position(|v| !v.is_finite()) {
            // column-major storage
            let (row, col) = (pos % n, pos / n);
            return Err(Error::InvalidPatch(format!(
                "non-finite coordinate at point {row}, component {col}"
            )));
        }
        Ok(Patch {
            points,
            base_index,
            meta,
        })
    }

    /// Builds a patch from row vectors; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>], base_index: usize, meta: PatchMeta) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::InvalidPatch(format!(
                "point {i} has {} components, expected {dim}",
                rows[i].len()
            )));
        }
        let points = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
        Patch::new(points, base_index, meta)
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn ambient_dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn base_index(&self) -> usize {
        self.base_index
    }

    pub fn base(&self) -> DVector<f64> {
        self.points.row(self.base_index).transpose()
    }

    pub fn meta(&self) -> &PatchMeta {
        &self.meta
    }

    pub fn with_meta(mut self, meta: PatchMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn mean(&self) -> RowDVector<f64> {
        self.points.row_mean()
    }

    /// Points relative to the base point, one per row.
    pub fn relative_to_base(&self) -> DMatrix<f64> {
        let base = self.points.row(self.base_index).into_owned();
        let mut rel = self.points.clone();
        for mut row in rel.row_iter_mut() {
            row -= &base;
        }
        rel
    }

    /// Applies `x -> q x + shift` to every point. `q` is `D x D`.
    pub fn transformed(&self, q: &DMatrix<f64>, shift: &DVector<f64>) -> Result<Self> {
        let dim = self.ambient_dim();
        if q.shape() != (dim, dim) || shift.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "transform is {}x{} with shift {}, patch dimension is {dim}",
                q.nrows(),
                q.ncols(),
                shift.len()
            )));
        }
        let mut points = &self.points * q.transpose();
        let shift = shift.transpose();
        for mut row in points.row_iter_mut() {
            row += &shift;
        }
        Patch::new(points, self.base_index, self.meta.clone())
    }

    /// Multiplies every coordinate by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Patch::new(&self.points * factor, self.base_index, self.meta.clone())
    }
}

/// A real image as one matrix per colour channel (1 for grey, 3 for RGB),
/// values nominally in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMatrix {
    channels: Vec<DMatrix<f64>>,
}

impl ImageMatrix {
    pub fn new(channels: Vec<DMatrix<f64>>) -> Result<Self> {
        if channels.len() != 1 && channels.len() != 3 {
            return Err(Error::InvalidImage(format!(
                "channel count must be 1 or 3, got {}",
                channels.len()
            )));
        }
        let shape = channels[0].shape();
        if shape.0 == 0 || shape.1 == 0 {
            return Err(Error::InvalidImage("image has no pixels".into()));
        }
        if channels.iter().any(|c| c.shape() != shape) {
            return Err(Error::InvalidImage("channels differ in size".into()));
        }
        if channels.iter().flat_map(|c| c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidImage("non-finite pixel value".into()));
        }
        Ok(ImageMatrix { channels })
    }

    pub fn rows(&self) -> usize {
        self.channels[0].nrows()
    }

    pub fn cols(&self) -> usize {
        self.channels[0].ncols()
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[DMatrix<f64>] {
        &self.channels
    }

    pub fn channel(&self, c: usize) -> &DMatrix<f64> {
        &self.channels[c]
    }

    /// Number of singular values per channel, `min(rows, cols)`.
    pub fn singular_count(&self) -> usize {
        self.rows().min(self.cols())
    }

    /// Clamps to `[0, 255]` and rounds each value to the nearest integer.
    pub fn quantized(&self) -> ImageMatrix {
        let channels = self
            .channels
            .iter()
            .map(|c| c.map(|v| libm::round(v.clamp(0.0, 255.0))))
            .collect();
        ImageMatrix { channels }
    }

    /// Frobenius norm of the difference over all channels.
    pub fn frobenius_distance(&self, other: &ImageMatrix) -> Result<f64> {
        if self.channel_count() != other.channel_count()
            || self.rows() != other.rows()
            || self.cols() != other.cols()
        {
            return Err(Error::ShapeMismatch("images differ in shape".into()));
        }
        let sq: f64 = self
            .channels
            .iter()
            .zip(&other.channels)
            .map(|(a, b)| (a - b).norm_squared())
            .sum();
        Ok(libm::sqrt(sq))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rejects_bad_patches() {
        let one = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        assert!(Patch::new(one, 0, PatchMeta::default()).is_err());
        let narrow = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert!(Patch::new(narrow, 0, PatchMeta::default()).is_err());
        let ok = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert!(Patch::new(ok.clone(), 2, PatchMeta::default()).is_err());
        let mut nan = ok;
        nan[(1, 0)] = f64::NAN;
        let err = Patch::new(nan, 0, PatchMeta::default()).unwrap_err();
        assert!(format!("{err}").contains("point 1, component 0"));
    }

    #[test]
    fn ragged_rows_rejected() {
        let rows = vec![vec![1.0; 5], vec![1.0; 4]];
        assert!(Patch::from_rows(&rows, 0, PatchMeta::default()).is_err());
    }

    #[test]
    fn relative_rows_zero_at_base() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 5.0], vec![-1.0, 0.5]];
        let p = Patch::from_rows(&rows, 1, PatchMeta::default()).unwrap();
        let rel = p.relative_to_base();
        assert_eq!(rel.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert_eq!(rel[(0, 1)], -3.0);
    }

    #[test]
    fn image_validation_and_quantize() {
        assert!(ImageMatrix::new(vec![DMatrix::zeros(2, 2); 2]).is_err());
        let img = ImageMatrix::new(vec![DMatrix::from_row_slice(1, 3, &[-4.0, 127.5, 300.0])])
            .unwrap();
        let q = img.quantized();
        assert_eq!(q.channel(0).as_slice(), &[0.0, 128.0, 255.0]);
    }
}
