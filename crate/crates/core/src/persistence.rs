//! Sweeps over the sparsity weight and persistence of edges across the sweep.
//!
//! Each run is weighted by its regularization-to-fitting loss ratio `r_k`; the
//! persistence of an edge at magnitude threshold `cbar` is
//! `sum_k 1{|w_k| > cbar} r_k / sum_k r_k` over converged runs. Highly persistent
//! edges have persistence above 0.95 and a sign that never flips across the sweep.

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{to_graph, CausalGraphEstimate, LaggedDesign, StackLayout, StackedCausalMatrix};
use crate::solver::{fit, SolverConfig};

pub const PERSISTENCE_CUTOFF: f64 = 0.95;
pub const DEFAULT_CBARS: [f64; 3] = [0.01, 0.05, 0.1];
/// Target window for the regularization-to-fitting ratio.
pub const RATIO_WINDOW: (f64, f64) = (0.1, 1.0);

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) || count < 2 {
        return Err(Error::invalid_arg(format!(
            "log grid needs 0 < lo < hi and at least 2 points, got [{lo}, {hi}] x {count}"
        )));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|k| {
            if k == 0 {
                lo
            } else if k == count - 1 {
                hi
            } else {
                (a + (b - a) * k as f64 / (count - 1) as f64).exp()
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub lambda: f64,
    pub ratio: f64,
    pub fit_loss: f64,
    pub reg_loss: f64,
    pub z: StackedCausalMatrix,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub layout: StackLayout,
    pub runs: Vec<SweepRun>,
}

impl SweepResult {
    pub fn lambdas(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.lambda).collect()
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.ratio).collect()
    }

    pub fn converged_runs(&self) -> impl Iterator<Item = &SweepRun> {
        self.runs.iter().filter(|r| r.converged)
    }

    /// Assemble a sweep from precomputed runs; used for hand-built fixtures and
    /// reloading saved sweeps.
    pub fn from_runs(layout: StackLayout, runs: Vec<SweepRun>) -> Result<Self> {
        if runs.iter().any(|r| r.z.layout != layout) {
            return Err(Error::invalid_arg("sweep runs have mismatched layouts"));
        }
        Ok(Self { layout, runs })
    }
}

fn run_one(
    design: &LaggedDesign,
    layout: StackLayout,
    base: &SolverConfig,
    lambda: f64,
) -> Result<SweepRun> {
    let config = base.clone().with_lambda(lambda);
    match fit(design, layout, &config) {
        Ok(state) => Ok(SweepRun {
            lambda,
            ratio: state.loss_ratio(),
            fit_loss: state.fit_loss,
            reg_loss: state.reg_loss,
            converged: state.converged,
            iterations: state.iterations,
            z: state.z,
        }),
        Err(Error::NumericFailure { iteration, message }) => {
            warn!("lambda {lambda}: numeric failure at iteration {iteration}: {message}");
            Ok(SweepRun {
                lambda,
                ratio: f64::NAN,
                fit_loss: f64::NAN,
                reg_loss: f64::NAN,
                z: StackedCausalMatrix::zeros(layout),
                converged: false,
                iterations: iteration,
            })
        }
        Err(e) => Err(e),
    }
}

/// Cold-started fits for every lambda, run on up to `jobs` threads. Results are
/// ordered as `lambdas`.
pub fn sweep(
    design: &LaggedDesign,
    layout: StackLayout,
    base: &SolverConfig,
    lambdas: &[f64],
    jobs: usize,
) -> Result<SweepResult> {
    if lambdas.len() < 2 {
        return Err(Error::invalid_arg(
            "a sweep needs at least two lambda values",
        ));
    }
    if lambdas.windows(2).any(|w| w[0] >= w[1]) || lambdas[0] <= 0.0 {
        return Err(Error::invalid_arg(
            "lambdas must be positive and strictly increasing",
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid_arg(format!("cannot build worker pool: {e}")))?;
    let runs: Vec<SweepRun> = pool.install(|| {
        lambdas
            .par_iter()
            .map(|&lambda| run_one(design, layout, base, lambda))
            .collect::<Result<_>>()
    })?;
    for run in runs.iter().filter(|r| !r.converged) {
        warn!(
            "lambda {} did not converge after {} iterations; excluded from persistence",
            run.lambda, run.iterations
        );
    }
    if runs.iter().all(|r| !r.converged) {
        return Err(Error::SweepFailure(format!(
            "none of the {} runs converged",
            runs.len()
        )));
    }
    Ok(SweepResult { layout, runs })
}

fn interpolate_log(l0: f64, r0: f64, l1: f64, r1: f64, target: f64) -> f64 {
    let (x0, x1) = (l0.ln(), l1.ln());
    let frac = if r0 > 0.0 && r1 > 0.0 {
        (target.ln() - r0.ln()) / (r1.ln() - r0.ln())
    } else {
        (target - r0) / (r1 - r0)
    };
    (x0 + frac.clamp(0.0, 1.0) * (x1 - x0)).exp()
}

/// Lambda interval whose ratio curve lies in `[lo, hi]`, interpolating
/// log-log between probes when no probe lands on a boundary. `curve` holds
/// `(lambda, ratio)` sorted by lambda; non-finite ratios are ignored.
///
/// The ratio rises with lambda until the estimate empties out and then falls back
/// to zero, so only the rising branch from the first entry into the window is
/// used.
pub fn select_range_from_curve(curve: &[(f64, f64)], lo: f64, hi: f64) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .copied()
        .filter(|(l, r)| l.is_finite() && r.is_finite())
        .collect();
    let not_found = || Error::RangeNotFound {
        lo,
        hi,
        curve: curve.to_vec(),
    };
    if pts.len() < 2 {
        return Err(not_found());
    }
    let first_above = pts
        .iter()
        .position(|&(_, r)| r >= lo)
        .ok_or_else(not_found)?;
    if pts[first_above].1 > hi && first_above == 0 {
        return Err(not_found());
    }
    let lambda_lo = if first_above == 0 {
        pts[0].0
    } else {
        let (a, b) = (pts[first_above - 1], pts[first_above]);
        interpolate_log(a.0, a.1, b.0, b.1, lo)
    };
    let exit = (first_above..pts.len())
        .find(|&k| pts[k].1 > hi || pts[k].1 < lo || (k > first_above && pts[k].1 < pts[k - 1].1));
    let lambda_hi = match exit {
        // `j > 0` here: either the window was entered at `first_above >= 1`, or
        // `pts[0]` lies inside it and the exit comes later.
        Some(j) if pts[j].1 > hi => {
            let (a, b) = (pts[j - 1], pts[j]);
            interpolate_log(a.0, a.1, b.0, b.1, hi)
        }
        Some(j) => pts[j - 1].0,
        None => pts[pts.len() - 1].0,
    };
    if lambda_lo > lambda_hi {
        return Err(not_found());
    }
    Ok((lambda_lo, lambda_hi))
}

/// Probe the ratio curve with one sweep and pick the window `[0.1, 1]`.
pub fn select_lambda_range(
    design: &LaggedDesign,
    layout: StackLayout,
    base: &SolverConfig,
    probe: &[f64],
    jobs: usize,
) -> Result<(f64, f64)> {
    if probe.len() < 2 || probe[probe.len() - 1] / probe[0] < 100.0 {
        return Err(Error::invalid_arg(
            "probe grid must span at least two decades",
        ));
    }
    let result = sweep(design, layout, base, probe, jobs)?;
    let curve: Vec<(f64, f64)> = result
        .runs
        .iter()
        .filter(|r| r.converged)
        .map(|r| (r.lambda, r.ratio))
        .collect();
    select_range_from_curve(&curve, RATIO_WINDOW.0, RATIO_WINDOW.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceReport {
    pub layout: StackLayout,
    pub cbar: f64,
    /// Persistence per stack entry; zero off the pattern.
    pub persistence: DMatrix<f64>,
    pub sign_stable: DMatrix<bool>,
    pub highly_persistent: DMatrix<bool>,
    /// Opposite signs anywhere (not only above `cbar`) break sign stability.
    pub strict_sign: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersistenceEntry {
    pub scale: usize,
    pub lag: usize,
    pub source: usize,
    pub target: usize,
    pub persistence: f64,
    pub sign_stable: bool,
    pub highly_persistent: bool,
}

impl PersistenceReport {
    /// Entries on the admissible pattern in row-major stack order.
    pub fn entries(&self) -> Vec<PersistenceEntry> {
        let layout = self.layout;
        let mut out = Vec::new();
        for r in 0..layout.height() {
            let (lag, scale, source) = layout.locate_row(r);
            for target in 0..layout.series {
                let c = layout.col(scale, target);
                if layout.is_free(r, c) {
                    out.push(PersistenceEntry {
                        scale,
                        lag,
                        source,
                        target,
                        persistence: self.persistence[(r, c)],
                        sign_stable: self.sign_stable[(r, c)],
                        highly_persistent: self.highly_persistent[(r, c)],
                    });
                }
            }
        }
        out
    }

    pub fn persistent_count(&self) -> usize {
        self.highly_persistent.iter().filter(|b| **b).count()
    }
}

/// Persistence of every edge at threshold `cbar` over the converged runs.
pub fn persistence_scores(
    sweep: &SweepResult,
    cbar: f64,
    strict_sign: bool,
) -> Result<PersistenceReport> {
    if cbar.is_nan() || cbar < 0.0 {
        return Err(Error::invalid_arg("cbar must be nonnegative"));
    }
    let runs: Vec<&SweepRun> = sweep.converged_runs().collect();
    if runs.is_empty() {
        return Err(Error::SweepFailure("no converged runs to score".into()));
    }
    let layout = sweep.layout;
    let (h, w) = (layout.height(), layout.width());
    let total_ratio: f64 = runs.iter().map(|r| r.ratio).sum();
    let mut persistence = DMatrix::zeros(h, w);
    let mut sign_stable = DMatrix::from_element(h, w, false);
    let mut highly = DMatrix::from_element(h, w, false);
    for c in 0..w {
        for r in 0..h {
            if !layout.is_free(r, c) {
                continue;
            }
            let (mut weighted, mut count) = (0.0, 0usize);
            let (mut pos, mut neg) = (false, false);
            for run in &runs {
                let v = run.z.values[(r, c)];
                let above = v.abs() > cbar;
                if above {
                    weighted += run.ratio;
                    count += 1;
                }
                if above || (strict_sign && v != 0.0) {
                    pos |= v > 0.0;
                    neg |= v < 0.0;
                }
            }
            let p = if total_ratio > 0.0 {
                weighted / total_ratio
            } else {
                count as f64 / runs.len() as f64
            };
            let stable = !(pos && neg);
            persistence[(r, c)] = p;
            sign_stable[(r, c)] = stable;
            highly[(r, c)] = p > PERSISTENCE_CUTOFF && stable;
        }
    }
    Ok(PersistenceReport {
        layout,
        cbar,
        persistence,
        sign_stable,
        highly_persistent: highly,
        strict_sign,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Graph of the highly persistent edges, weighted by the median coefficient over
/// the converged runs where the edge exceeds `cbar`.
pub fn persistent_graph(report: &PersistenceReport, sweep: &SweepResult) -> CausalGraphEstimate {
    let layout = report.layout;
    let mut stack = StackedCausalMatrix::zeros(layout);
    for c in 0..layout.width() {
        for r in 0..layout.height() {
            if !report.highly_persistent[(r, c)] {
                continue;
            }
            let mut above: Vec<f64> = sweep
                .converged_runs()
                .map(|run| run.z.values[(r, c)])
                .filter(|v| v.abs() > report.cbar)
                .collect();
            if !above.is_empty() {
                stack.values[(r, c)] = median(&mut above);
            }
        }
    }
    to_graph(&stack, 0.0)
}

/// True when every highly persistent edge of `inner` is also highly persistent
/// in `outer`.
pub fn is_nested(inner: &PersistenceReport, outer: &PersistenceReport) -> bool {
    inner
        .highly_persistent
        .iter()
        .zip(outer.highly_persistent.iter())
        .all(|(a, b)| !*a || *b)
}
