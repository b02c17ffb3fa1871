//! Numeric containers shared by every stage of the pipeline, plus the file
//! formats and the seeded random source.

mod io;
mod numeric;
mod rng;

pub use io::{
    load_features, load_labels, save_features, save_labels, FileFormat, ReadOptions,
    FEATURE_MAGIC, FORMAT_VERSION, LABEL_MAGIC,
};
pub use numeric::{argmax, min_max_normalize, softmax, Matrix};
pub use rng::RandomSource;

use crate::error::{Error, Result};

/// An `n x D` matrix of finite embedding coordinates, row-major.
///
/// `D >= 2` is enforced because the correlation index needs a per-sample
/// variance over at least two coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 {
            return Err(Error::invalid("feature matrix must have at least one row"));
        }
        if cols < 2 {
            return Err(Error::invalid(format!(
                "feature matrix needs at least 2 columns, got {cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "feature matrix values",
                expected: rows * cols,
                found: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "feature matrix row",
                    expected: cols,
                    found: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, values)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.cols)
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::invalid(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            values.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.cols, values)
    }

    pub fn into_matrix(self) -> Matrix {
        Matrix::from_vec(self.rows, self.cols, self.values)
    }
}

impl TryFrom<Matrix> for FeatureMatrix {
    type Error = Error;

    fn try_from(m: Matrix) -> Result<Self> {
        let (rows, cols) = (m.rows(), m.cols());
        Self::new(rows, cols, m.into_vec())
    }
}

/// Per-sample class indices in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid("num_classes must be positive"));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::invalid(format!(
                "label {l} at index {i} is not below num_classes={num_classes}"
            )));
        }
        Ok(Self {
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn check_len(&self, n: usize, context: &'static str) -> Result<()> {
        if self.labels.len() != n {
            return Err(Error::DimensionMismatch {
                context,
                expected: n,
                found: self.labels.len(),
            });
        }
        Ok(())
    }
}

/// Row-stochastic `n x M` matrix of class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    inner: Matrix,
}

impl ProbMatrix {
    pub const ROW_SUM_TOL: f64 = 1e-6;

    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        let inner = Matrix::try_new(rows, cols, values)?;
        for (i, row) in inner.iter_rows().enumerate() {
            if let Some(j) = row.iter().position(|p| !p.is_finite()) {
                return Err(Error::NonFinite { row: i, col: j });
            }
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::invalid(format!("probability out of [0,1] in row {i}")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > Self::ROW_SUM_TOL {
                return Err(Error::invalid(format!("row {i} sums to {s}, not 1")));
            }
        }
        Ok(Self { inner })
    }

    /// Row-wise softmax of a logit matrix.
    pub fn from_logits(logits: &Matrix) -> Result<Self> {
        let mut values = Vec::with_capacity(logits.rows() * logits.cols());
        for (i, row) in logits.iter_rows().enumerate() {
            if let Some(j) = row.iter().position(|z| !z.is_finite()) {
                return Err(Error::NonFinite { row: i, col: j });
            }
            values.extend(softmax(row));
        }
        Ok(Self {
            inner: Matrix::from_vec(logits.rows(), logits.cols(), values),
        })
    }

    pub fn rows(&self) -> usize {
        self.inner.rows()
    }

    pub fn cols(&self) -> usize {
        self.inner.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.inner.row(i)
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.inner.iter_rows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.inner
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_matrix_rejects_single_column() {
        assert!(matches!(
            FeatureMatrix::new(2, 1, vec![1.0, 2.0]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn feature_matrix_rejects_empty() {
        assert!(FeatureMatrix::new(0, 3, vec![]).is_err());
    }

    #[test]
    fn feature_matrix_reports_non_finite_location() {
        let err = FeatureMatrix::new(2, 2, vec![0.0, 1.0, 2.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 1, col: 1 }));
    }

    #[test]
    fn labels_must_be_below_num_classes() {
        assert!(LabelVector::new(vec![0, 1, 2], 3).is_ok());
        assert!(LabelVector::new(vec![0, 3], 3).is_err());
    }

    #[test]
    fn prob_matrix_validates_rows() {
        assert!(ProbMatrix::new(1, 2, vec![0.25, 0.75]).is_ok());
        assert!(ProbMatrix::new(1, 2, vec![0.5, 0.6]).is_err());
        assert!(ProbMatrix::new(1, 2, vec![-0.5, 1.5]).is_err());
    }
}
