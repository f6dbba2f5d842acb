//! Lagged design matrices and the stacked, block-structured coefficient matrix.
//!
//! Index conventions: scales are 1-based (`1..=D`, scale 1 is the finest), lags
//! and series are 0-based. With `N` series per scale and `Nbar = D*N` columns,
//! row `l*Nbar + (d-1)*N + i` of the stack holds the effect of series `i` at lag
//! `l` and scale `d` on column `(d-1)*N + j`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dagness;
use crate::error::{Error, Result};

/// Dimensions of a stacked coefficient matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackLayout {
    pub lags: usize,
    pub scales: usize,
    pub series: usize,
}

impl StackLayout {
    pub fn new(lags: usize, scales: usize, series: usize) -> Result<Self> {
        if scales == 0 || series == 0 {
            return Err(Error::invalid_arg(
                "scales and series per scale must be positive",
            ));
        }
        Ok(Self {
            lags,
            scales,
            series,
        })
    }

    /// Number of columns, `D*N`.
    pub fn width(&self) -> usize {
        self.scales * self.series
    }

    /// Number of rows, `D*N*(L+1)`.
    pub fn height(&self) -> usize {
        self.width() * (self.lags + 1)
    }

    pub fn row(&self, lag: usize, scale: usize, series: usize) -> usize {
        lag * self.width() + (scale - 1) * self.series + series
    }

    pub fn col(&self, scale: usize, series: usize) -> usize {
        (scale - 1) * self.series + series
    }

    /// Inverse of [`Self::row`]: `(lag, scale, series)`.
    pub fn locate_row(&self, row: usize) -> (usize, usize, usize) {
        let lag = row / self.width();
        let rem = row % self.width();
        (lag, rem / self.series + 1, rem % self.series)
    }

    pub fn is_free(&self, row: usize, col: usize) -> bool {
        let (lag, scale, i) = self.locate_row(row);
        let (col_scale, j) = (col / self.series + 1, col % self.series);
        scale == col_scale && !(lag == 0 && i == j)
    }

    /// Free rows of column `col`, ascending.
    pub fn free_rows(&self, col: usize) -> Vec<usize> {
        let scale = col / self.series + 1;
        let j = col % self.series;
        (0..=self.lags)
            .flat_map(|lag| {
                (0..self.series)
                    .filter(move |&i| !(lag == 0 && i == j))
                    .map(move |i| self.row(lag, scale, i))
            })
            .collect()
    }

    pub fn free_count(&self) -> usize {
        self.scales * self.series * self.series * (self.lags + 1) - self.scales * self.series
    }
}

/// Admissible support of the stacked matrix as a boolean mask.
pub fn pattern_for(lags: usize, scales: usize, series_per_scale: usize) -> Result<DMatrix<bool>> {
    let layout = StackLayout::new(lags, scales, series_per_scale)?;
    Ok(DMatrix::from_fn(layout.height(), layout.width(), |r, c| {
        layout.is_free(r, c)
    }))
}

/// Target and lagged regressors for the stacked regression.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedDesign {
    /// `T_eff x Nbar`: rows `L..T` of the panel.
    pub target: DMatrix<f64>,
    /// `T_eff x Nbar*(L+1)`: block `l` holds rows `L-l..T-l`.
    pub regressors: DMatrix<f64>,
    pub lags: usize,
    pub effective_rows: usize,
}

/// Build the lagged design from a `T x Nbar` panel, dropping the first `lags` rows.
pub fn build_design(panel: &DMatrix<f64>, lags: usize) -> Result<LaggedDesign> {
    let (t, nbar) = panel.shape();
    if lags >= t {
        return Err(Error::invalid_arg(format!(
            "lags ({lags}) must be smaller than the number of observations ({t})"
        )));
    }
    let rows = t - lags;
    let target = panel.rows(lags, rows).into_owned();
    let mut regressors = DMatrix::zeros(rows, nbar * (lags + 1));
    for l in 0..=lags {
        regressors
            .columns_mut(l * nbar, nbar)
            .copy_from(&panel.rows(lags - l, rows));
    }
    Ok(LaggedDesign {
        target,
        regressors,
        lags,
        effective_rows: rows,
    })
}

/// Stacked coefficient matrix with its admissible pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedCausalMatrix {
    pub layout: StackLayout,
    pub values: DMatrix<f64>,
}

impl StackedCausalMatrix {
    pub fn zeros(layout: StackLayout) -> Self {
        Self {
            layout,
            values: DMatrix::zeros(layout.height(), layout.width()),
        }
    }

    /// Wrap `values`, checking shape and that every off-pattern entry is zero.
    pub fn from_values(layout: StackLayout, values: DMatrix<f64>) -> Result<Self> {
        if values.shape() != (layout.height(), layout.width()) {
            return Err(Error::invalid_arg(format!(
                "expected a {}x{} stack, got {}x{}",
                layout.height(),
                layout.width(),
                values.nrows(),
                values.ncols()
            )));
        }
        for c in 0..values.ncols() {
            for r in 0..values.nrows() {
                if values[(r, c)] != 0.0 && !layout.is_free(r, c) {
                    let (lag, scale, i) = layout.locate_row(r);
                    return Err(Error::invalid_arg(format!(
                        "nonzero entry outside the admissible pattern (lag {lag}, scale {scale}, row series {i}, column {c})"
                    )));
                }
            }
        }
        Ok(Self { layout, values })
    }

    pub fn pattern(&self) -> DMatrix<bool> {
        DMatrix::from_fn(self.layout.height(), self.layout.width(), |r, c| {
            self.layout.is_free(r, c)
        })
    }

    /// `N x N` block for `(scale, lag)`; rows are causes, columns effects.
    pub fn block(&self, scale: usize, lag: usize) -> DMatrix<f64> {
        let n = self.layout.series;
        self.values
            .view(
                (self.layout.row(lag, scale, 0), self.layout.col(scale, 0)),
                (n, n),
            )
            .into_owned()
    }

    pub fn set_block(&mut self, scale: usize, lag: usize, block: &DMatrix<f64>) {
        let n = self.layout.series;
        let (r, c) = (self.layout.row(lag, scale, 0), self.layout.col(scale, 0));
        self.values.view_mut((r, c), (n, n)).copy_from(block);
        if lag == 0 {
            for i in 0..n {
                self.values[(r + i, c + i)] = 0.0;
            }
        }
    }

    pub fn get(&self, scale: usize, lag: usize, from: usize, to: usize) -> f64 {
        self.values[(
            self.layout.row(lag, scale, from),
            self.layout.col(scale, to),
        )]
    }

    pub fn set(&mut self, scale: usize, lag: usize, from: usize, to: usize, value: f64) {
        let (r, c) = (
            self.layout.row(lag, scale, from),
            self.layout.col(scale, to),
        );
        assert!(self.layout.is_free(r, c), "entry is outside the pattern");
        self.values[(r, c)] = value;
    }

    pub fn instantaneous_blocks(&self) -> Vec<DMatrix<f64>> {
        (1..=self.layout.scales).map(|d| self.block(d, 0)).collect()
    }

    /// Dagness of the lag-0 blocks, evaluated blockwise.
    pub fn acyclicity_residual(&self) -> f64 {
        dagness::h_blockdiag(&self.instantaneous_blocks())
            .map(|(h, _)| h)
            .unwrap_or(f64::INFINITY)
    }

    /// Copy with entries of magnitude `<= threshold` set to zero.
    pub fn thresholded(&self, threshold: f64) -> Self {
        Self {
            layout: self.layout,
            values: self
                .values
                .map(|v| if v.abs() > threshold { v } else { 0.0 }),
        }
    }

    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub lag: usize,
    pub scale: usize,
    pub weight: f64,
}

/// Graph view of a stacked estimate: per-(scale, lag) adjacency plus edge list.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalGraphEstimate {
    pub layout: StackLayout,
    /// `adjacency[scale-1][lag]`, `N x N`, zero below the threshold.
    pub adjacency: Vec<Vec<DMatrix<f64>>>,
    pub edges: Vec<Edge>,
    pub acyclicity_residual: f64,
}

impl CausalGraphEstimate {
    pub fn from_edges(layout: StackLayout, edges: Vec<Edge>) -> Result<Self> {
        let mut stack = StackedCausalMatrix::zeros(layout);
        for e in &edges {
            if e.scale == 0
                || e.scale > layout.scales
                || e.lag > layout.lags
                || e.source >= layout.series
                || e.target >= layout.series
                || (e.lag == 0 && e.source == e.target)
            {
                return Err(Error::invalid_arg(format!(
                    "edge {e:?} is outside the layout"
                )));
            }
            stack.set(e.scale, e.lag, e.source, e.target, e.weight);
        }
        Ok(to_graph(&stack, 0.0))
    }

    /// Reassemble the stacked matrix holding exactly the edge weights.
    pub fn to_stack(&self) -> StackedCausalMatrix {
        let mut stack = StackedCausalMatrix::zeros(self.layout);
        for e in &self.edges {
            stack.set(e.scale, e.lag, e.source, e.target, e.weight);
        }
        stack
    }
}

/// Edges are entries with `|w| > edge_threshold`.
pub fn to_graph(stack: &StackedCausalMatrix, edge_threshold: f64) -> CausalGraphEstimate {
    let kept = stack.thresholded(edge_threshold.max(0.0));
    let layout = kept.layout;
    let mut adjacency = Vec::with_capacity(layout.scales);
    let mut edges = Vec::new();
    for scale in 1..=layout.scales {
        let mut per_lag = Vec::with_capacity(layout.lags + 1);
        for lag in 0..=layout.lags {
            let block = kept.block(scale, lag);
            for source in 0..layout.series {
                for target in 0..layout.series {
                    let weight = block[(source, target)];
                    if weight != 0.0 {
                        edges.push(Edge {
                            source,
                            target,
                            lag,
                            scale,
                            weight,
                        });
                    }
                }
            }
            per_lag.push(block);
        }
        adjacency.push(per_lag);
    }
    CausalGraphEstimate {
        layout,
        adjacency,
        edges,
        acyclicity_residual: kept.acyclicity_residual(),
    }
}
