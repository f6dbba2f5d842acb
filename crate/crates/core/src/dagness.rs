//! Acyclicity penalty `h(W) = tr(exp(W o W)) - n` and its gradient.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::expm::expm;

#[derive(Debug, Clone, PartialEq)]
pub struct DagnessEval {
    pub value: f64,
    pub gradient: DMatrix<f64>,
    /// Sizes of the diagonal blocks when evaluated blockwise.
    pub block_sizes: Option<Vec<usize>>,
}

fn check(w: &DMatrix<f64>) -> Result<()> {
    if !w.is_square() {
        return Err(Error::invalid_arg(format!(
            "dagness needs a square matrix, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid_arg("dagness input has non-finite entries"));
    }
    Ok(())
}

fn exp_hadamard_square(w: &DMatrix<f64>) -> DMatrix<f64> {
    expm(&w.component_mul(w))
}

// Every term of the series beyond the identity is nonnegative, so anything below
// zero is rounding.
fn trace_minus_n(e: &DMatrix<f64>) -> f64 {
    (e.trace() - e.nrows() as f64).max(0.0)
}

/// `tr(exp(W o W)) - n`.
pub fn h_value(w: &DMatrix<f64>) -> Result<f64> {
    check(w)?;
    Ok(trace_minus_n(&exp_hadamard_square(w)))
}

/// `exp(W o W)^T o 2W`.
pub fn h_gradient(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(evaluate(w)?.gradient)
}

/// Value and gradient from a single exponential.
pub fn evaluate(w: &DMatrix<f64>) -> Result<DagnessEval> {
    check(w)?;
    let e = exp_hadamard_square(w);
    let gradient = e.transpose().component_mul(w) * 2.0;
    Ok(DagnessEval {
        value: trace_minus_n(&e),
        gradient,
        block_sizes: None,
    })
}

/// Dagness of a block-diagonal matrix given its diagonal blocks. The value is the
/// sum of per-block values; the gradient is returned per block.
pub fn h_blockdiag(blocks: &[DMatrix<f64>]) -> Result<(f64, Vec<DMatrix<f64>>)> {
    if blocks.is_empty() {
        return Err(Error::invalid_arg("no blocks given"));
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(blocks.len());
    for block in blocks {
        let eval = evaluate(block)?;
        total += eval.value;
        grads.push(eval.gradient);
    }
    Ok((total, grads))
}

/// Blockwise evaluation packaged as a [`DagnessEval`] over the assembled matrix.
pub fn evaluate_blocks(blocks: &[DMatrix<f64>]) -> Result<DagnessEval> {
    let (value, grads) = h_blockdiag(blocks)?;
    let sizes: Vec<usize> = blocks.iter().map(|b| b.nrows()).collect();
    Ok(DagnessEval {
        value,
        gradient: assemble_block_diagonal(&grads),
        block_sizes: Some(sizes),
    })
}

pub fn assemble_block_diagonal(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut offset = 0;
    for b in blocks {
        let k = b.nrows();
        out.view_mut((offset, offset), (k, k)).copy_from(b);
        offset += k;
    }
    out
}
