//! Multivariate time series container.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A `T x N` panel of observations. Row `t` is the observation at `timestamps[t]`,
/// column `i` is the series named `names[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    pub names: Vec<String>,
    pub timestamps: Vec<String>,
    pub data: DMatrix<f64>,
}

impl TimeSeriesPanel {
    pub fn new(names: Vec<String>, timestamps: Vec<String>, data: DMatrix<f64>) -> Result<Self> {
        if names.len() != data.ncols() {
            return Err(Error::invalid_arg(format!(
                "{} series names for {} columns",
                names.len(),
                data.ncols()
            )));
        }
        if timestamps.len() != data.nrows() {
            return Err(Error::invalid_arg(format!(
                "{} timestamps for {} rows",
                timestamps.len(),
                data.nrows()
            )));
        }
        Ok(Self {
            names,
            timestamps,
            data,
        })
    }

    /// Panel with generated names `y1..yN` and integer timestamps `0..T`.
    pub fn from_matrix(data: DMatrix<f64>) -> Self {
        let names = (1..=data.ncols()).map(|i| format!("y{i}")).collect();
        let timestamps = (0..data.nrows()).map(|t| t.to_string()).collect();
        Self {
            names,
            timestamps,
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn n_series(&self) -> usize {
        self.data.ncols()
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            let (t, i) = (pos % self.data.nrows(), pos / self.data.nrows());
            return Err(Error::InvalidData(format!(
                "non-finite value at row {t}, series {}",
                self.names[i]
            )));
        }
        Ok(())
    }

    /// Subtract each column's mean.
    pub fn centered(&self) -> Self {
        let mut out = self.clone();
        for mut col in out.data.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        out
    }
}
