use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// A `T x D` matrix of segment-level features: one row per temporal segment.
///
/// Used for the original features, the graph-averaged features, the graph
/// convolution output, and the fused enhanced features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
}

impl FeatureMatrix {
    /// Wraps a matrix, requiring at least one segment, at least one feature
    /// dimension, and all entries finite.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::invalid(format!(
                "feature matrix must be at least 1x1, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature matrix contains non-finite entries"));
        }
        Ok(Self { values })
    }

    /// Number of temporal segments `T`.
    pub fn num_segments(&self) -> usize {
        self.values.nrows()
    }

    /// Feature dimension `D`.
    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }
}
