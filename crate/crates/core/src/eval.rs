//! Structure recovery scores: SHD split into extra, missing and reversed edges,
//! plus directed precision, recall and F1.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::StackedCausalMatrix;

pub const DEFAULT_EDGE_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureScore {
    pub shd: usize,
    pub extra: usize,
    pub missing: usize,
    pub reverse: usize,
    pub true_positives: usize,
    pub estimated_edges: usize,
    pub true_edges: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub edge_threshold: f64,
}

impl StructureScore {
    fn from_counts(
        extra: usize,
        missing: usize,
        reverse: usize,
        tp: usize,
        estimated: usize,
        truth: usize,
        edge_threshold: f64,
    ) -> Self {
        let (precision, recall, f1) = if estimated == 0 && truth == 0 {
            (1.0, 1.0, 1.0)
        } else {
            let precision = if estimated > 0 {
                tp as f64 / estimated as f64
            } else {
                0.0
            };
            let recall = if truth > 0 {
                tp as f64 / truth as f64
            } else {
                0.0
            };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            (precision, recall, f1)
        };
        Self {
            shd: extra + missing + reverse,
            extra,
            missing,
            reverse,
            true_positives: tp,
            estimated_edges: estimated,
            true_edges: truth,
            precision,
            recall,
            f1,
            edge_threshold,
        }
    }
}

/// Score a weighted `N x N` estimate against the truth after binarizing both at
/// `|w| > edge_threshold`.
///
/// For instantaneous graphs, a pair whose unmatched true edge and unmatched
/// estimated edge point in opposite directions counts as one reversal.
pub fn score(
    estimated: &DMatrix<f64>,
    truth: &DMatrix<f64>,
    lagged: bool,
    edge_threshold: f64,
) -> Result<StructureScore> {
    if !estimated.is_square() || estimated.shape() != truth.shape() {
        return Err(Error::invalid_arg(format!(
            "estimate is {}x{}, truth is {}x{}",
            estimated.nrows(),
            estimated.ncols(),
            truth.nrows(),
            truth.ncols()
        )));
    }
    if edge_threshold < 0.0 || edge_threshold.is_nan() {
        return Err(Error::invalid_arg("edge threshold must be nonnegative"));
    }
    let n = truth.nrows();
    let est = |i: usize, j: usize| estimated[(i, j)].abs() > edge_threshold;
    let tru = |i: usize, j: usize| truth[(i, j)].abs() > edge_threshold;

    let (mut extra, mut missing, mut reverse, mut tp) = (0, 0, 0, 0);
    let (mut n_est, mut n_true) = (0, 0);
    for i in 0..n {
        for j in 0..n {
            n_est += usize::from(est(i, j));
            n_true += usize::from(tru(i, j));
            if est(i, j) && tru(i, j) {
                tp += 1;
            }
        }
    }

    if lagged {
        for i in 0..n {
            for j in 0..n {
                match (est(i, j), tru(i, j)) {
                    (true, false) => extra += 1,
                    (false, true) => missing += 1,
                    _ => {}
                }
            }
        }
    } else {
        for i in 0..n {
            // Self-loops cannot be reversed.
            match (est(i, i), tru(i, i)) {
                (true, false) => extra += 1,
                (false, true) => missing += 1,
                _ => {}
            }
            for j in (i + 1)..n {
                let unmatched_true =
                    usize::from(tru(i, j) && !est(i, j)) + usize::from(tru(j, i) && !est(j, i));
                let unmatched_est =
                    usize::from(est(i, j) && !tru(i, j)) + usize::from(est(j, i) && !tru(j, i));
                if unmatched_true > 0 && unmatched_est > 0 {
                    reverse += 1;
                } else {
                    missing += unmatched_true;
                    extra += unmatched_est;
                }
            }
        }
    }
    Ok(StructureScore::from_counts(
        extra,
        missing,
        reverse,
        tp,
        n_est,
        n_true,
        edge_threshold,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockScore {
    pub scale: usize,
    pub lag: usize,
    pub score: StructureScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackScore {
    pub blocks: Vec<BlockScore>,
    /// Summed counts with micro-averaged precision, recall and F1.
    pub aggregate: StructureScore,
}

impl StackScore {
    pub fn block(&self, scale: usize, lag: usize) -> Option<&StructureScore> {
        self.blocks
            .iter()
            .find(|b| b.scale == scale && b.lag == lag)
            .map(|b| &b.score)
    }
}

/// Score every `(scale, lag)` block; lag 0 is instantaneous, the rest lagged.
pub fn score_stack(
    estimated: &StackedCausalMatrix,
    truth: &StackedCausalMatrix,
    edge_threshold: f64,
) -> Result<StackScore> {
    if estimated.layout != truth.layout {
        return Err(Error::invalid_arg(format!(
            "estimate layout {:?} differs from truth layout {:?}",
            estimated.layout, truth.layout
        )));
    }
    let layout = truth.layout;
    let mut blocks = Vec::new();
    for scale in 1..=layout.scales {
        for lag in 0..=layout.lags {
            let s = score(
                &estimated.block(scale, lag),
                &truth.block(scale, lag),
                lag > 0,
                edge_threshold,
            )?;
            blocks.push(BlockScore {
                scale,
                lag,
                score: s,
            });
        }
    }
    let sum = |f: fn(&StructureScore) -> usize| blocks.iter().map(|b| f(&b.score)).sum::<usize>();
    let aggregate = StructureScore::from_counts(
        sum(|s| s.extra),
        sum(|s| s.missing),
        sum(|s| s.reverse),
        sum(|s| s.true_positives),
        sum(|s| s.estimated_edges),
        sum(|s| s.true_edges),
        edge_threshold,
    );
    Ok(StackScore { blocks, aggregate })
}
