//! Linearized scaled ADMM for acyclicity-constrained sparse stacked regression.
//!
//! Each outer iteration
//! 1. minimizes the least-squares loss plus the dagness term linearized at the
//!    current lag-0 blocks plus `rho/2 |w - z + beta|^2` over the free pattern,
//! 2. raises the dual step `gamma` tenfold (capped) when dagness did not shrink by
//!    at least the ratio `r`,
//! 3. soft-thresholds `w + beta` into `z`,
//! 4. and takes dual ascent steps on `alpha` and `beta`.
//!
//! Once `alpha` is large the plain linearized step overshoots and oscillates, so
//! the lag-0 entries carry an extra proximal term around the previous iterate,
//! weighted by `alpha` times the diagonal curvature of the dagness. The weight is
//! doubled until the resulting quadratic model bounds the dagness from above at
//! the new point. At a fixed point the term vanishes. The z and dual updates use
//! over-relaxation, and `rho` is rebalanced from the primal and dual residuals.
//!
//! The primal step is a strongly convex quadratic that separates over the columns
//! of the stack. Each column is solved on its free rows through a Cholesky factor,
//! refreshed whenever `rho` or the damping changes, followed by iterative
//! refinement until the subproblem gradient meets `inner_tol`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::dagness;
use crate::error::{Error, Result};
use crate::expm::expm;
use crate::model::{
    build_design, pattern_for, to_graph, CausalGraphEstimate, LaggedDesign, StackLayout,
    StackedCausalMatrix,
};
use crate::panel::TimeSeriesPanel;
use crate::wavelet::{swt_decompose, FilterPair, ScaleAugmentedPanel};

/// Weighting of the squared-error term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossScale {
    /// `1/2 |Y - X W|_F^2`
    Sum,
    /// `1/(2 T_eff) |Y - X W|_F^2`
    Mean,
}

impl LossScale {
    pub fn weight(self, rows: usize) -> f64 {
        match self {
            LossScale::Sum => 1.0,
            LossScale::Mean => 1.0 / rows.max(1) as f64,
        }
    }
}

impl std::str::FromStr for LossScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Self::Sum),
            "mean" => Ok(Self::Mean),
            other => Err(Error::invalid_arg(format!("unknown loss scale `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda: f64,
    pub rho: f64,
    pub gamma0: f64,
    pub gamma_max: f64,
    /// Escalate `gamma` when `h_{k+1} / h_k` exceeds this ratio.
    pub ratio_r: f64,
    pub tol_h: f64,
    pub tol_primal: f64,
    pub max_iter: usize,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub loss_scale: LossScale,
    /// Cap on halvings/doublings of the lag-0 proximal weight per iteration. Zero
    /// disables damping and gives the plain linearized step.
    pub max_backtracks: usize,
    /// Rebalance `rho` from the primal and dual residuals, starting at `rho`.
    pub adaptive_rho: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            rho: 1.0,
            gamma0: 0.1,
            gamma_max: 1e16,
            ratio_r: 0.25,
            tol_h: 1e-8,
            tol_primal: 1e-6,
            max_iter: 2000,
            inner_tol: 1e-6,
            inner_max_iter: 500,
            loss_scale: LossScale::Mean,
            max_backtracks: 50,
            adaptive_rho: true,
        }
    }
}

impl SolverConfig {
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("rho", self.rho),
            ("gamma0", self.gamma0),
            ("gamma_max", self.gamma_max),
            ("ratio_r", self.ratio_r),
            ("tol_h", self.tol_h),
            ("tol_primal", self.tol_primal),
            ("inner_tol", self.inner_tol),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid_arg(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.ratio_r >= 1.0 {
            return Err(Error::invalid_arg("ratio_r must be below 1"));
        }
        if self.gamma0 > self.gamma_max {
            return Err(Error::invalid_arg("gamma0 exceeds gamma_max"));
        }
        if self.max_iter == 0 || self.inner_max_iter == 0 {
            return Err(Error::invalid_arg("iteration limits must be positive"));
        }
        Ok(())
    }
}

/// Final iterate and diagnostics of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    /// Dense primal iterate.
    pub w: StackedCausalMatrix,
    /// Soft-thresholded copy; carries exact zeros and is the canonical estimate.
    pub z: StackedCausalMatrix,
    pub alpha: f64,
    pub beta: DMatrix<f64>,
    pub gamma: f64,
    pub iterations: usize,
    pub converged: bool,
    pub h_history: Vec<f64>,
    pub gamma_history: Vec<f64>,
    pub primal_residual_history: Vec<f64>,
    pub objective_history: Vec<f64>,
    pub inner_iterations: usize,
    /// Weighted squared error at `z`.
    pub fit_loss: f64,
    /// `lambda * |z|_1`.
    pub reg_loss: f64,
}

impl SolverState {
    pub fn objective(&self) -> f64 {
        self.fit_loss + self.reg_loss
    }

    /// Regularization-to-fitting loss ratio.
    pub fn loss_ratio(&self) -> f64 {
        if self.fit_loss > 0.0 {
            self.reg_loss / self.fit_loss
        } else if self.reg_loss > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }

    pub fn h_w(&self) -> f64 {
        self.w.acyclicity_residual()
    }

    pub fn h_z(&self) -> f64 {
        self.z.acyclicity_residual()
    }

    pub fn primal_residual(&self) -> f64 {
        (&self.w.values - &self.z.values).norm()
    }
}

/// `sign(x) * max(|x| - delta, 0)`.
pub fn soft_threshold(x: f64, delta: f64) -> f64 {
    if x > delta {
        x - delta
    } else if x < -delta {
        x + delta
    } else {
        0.0
    }
}

/// Non-least-squares terms of the primal subproblem.
#[derive(Debug, Clone, Copy)]
pub struct SubproblemTerms<'a> {
    pub alpha: f64,
    /// Gradient of dagness at the linearization point, `Nbar x Nbar`
    /// (block diagonal across scales).
    pub g0: &'a DMatrix<f64>,
    pub z: &'a DMatrix<f64>,
    pub beta: &'a DMatrix<f64>,
    pub rho: f64,
    /// Weight on `1/2 |Y - X W|^2`.
    pub loss_weight: f64,
    /// Elementwise weights `D` of `1/2 sum D o (W0 - A0)^2`, where `A0` is the
    /// lag-0 part of `anchor`. `Nbar x Nbar`.
    pub damping: &'a DMatrix<f64>,
    pub anchor: &'a DMatrix<f64>,
}

/// Value of the primal subproblem at `w` (constant terms dropped).
pub fn subproblem_objective(
    w: &DMatrix<f64>,
    design: &LaggedDesign,
    terms: &SubproblemTerms<'_>,
) -> f64 {
    let nbar = design.target.ncols();
    let resid = &design.regressors * w - &design.target;
    let linear = terms.g0.component_mul(&w.rows(0, nbar)).sum();
    let prox = (w - terms.z + terms.beta).norm_squared();
    let step = w.rows(0, nbar) - terms.anchor.rows(0, nbar);
    let damp = terms
        .damping
        .component_mul(&step.component_mul(&step))
        .sum();
    0.5 * terms.loss_weight * resid.norm_squared()
        + terms.alpha * linear
        + 0.5 * terms.rho * prox
        + 0.5 * damp
}

/// Gradient of the primal subproblem, zero off the pattern of `layout`.
pub fn subproblem_gradient(
    w: &DMatrix<f64>,
    design: &LaggedDesign,
    layout: &StackLayout,
    terms: &SubproblemTerms<'_>,
) -> DMatrix<f64> {
    let nbar = layout.width();
    let resid = &design.regressors * w - &design.target;
    let mut grad = design.regressors.tr_mul(&resid) * terms.loss_weight;
    let mut lag0 = grad.rows_mut(0, nbar);
    lag0 += terms.g0 * terms.alpha;
    lag0 += terms
        .damping
        .component_mul(&(w.rows(0, nbar) - terms.anchor.rows(0, nbar)));
    grad += (w - terms.z + terms.beta) * terms.rho;
    mask_to_pattern(&mut grad, layout);
    grad
}

fn mask_to_pattern(m: &mut DMatrix<f64>, layout: &StackLayout) {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !layout.is_free(r, c) {
                m[(r, c)] = 0.0;
            }
        }
    }
}

/// Per-column systems `(c X_S^T X_S + rho I + diag(d)) w_S = rhs`, where `d` is
/// the lag-0 damping of that column.
struct PrimalSolver {
    layout: StackLayout,
    gram: DMatrix<f64>,
    xty: DMatrix<f64>,
    loss_weight: f64,
    rho: f64,
    columns: Vec<ColumnSystem>,
    damping: DMatrix<f64>,
}

struct ColumnSystem {
    rows: Vec<usize>,
    /// Number of leading entries of `rows` that fall in the lag-0 block.
    lag0: usize,
    base: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

fn factor(m: DMatrix<f64>, col: usize) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::NumericFailure {
        iteration: 0,
        message: format!("primal system for column {col} is not positive definite"),
    })
}

impl PrimalSolver {
    fn new(design: &LaggedDesign, layout: StackLayout, config: &SolverConfig) -> Result<Self> {
        let loss_weight = config.loss_scale.weight(design.effective_rows);
        let gram = design.regressors.tr_mul(&design.regressors);
        let xty = design.regressors.tr_mul(&design.target);
        let nbar = layout.width();
        let mut columns = Vec::with_capacity(nbar);
        for col in 0..nbar {
            let rows = layout.free_rows(col);
            let lag0 = rows.iter().take_while(|&&r| r < nbar).count();
            let k = rows.len();
            let base = DMatrix::from_fn(k, k, |a, b| loss_weight * gram[(rows[a], rows[b])]);
            let chol = factor(&base + DMatrix::identity(k, k) * config.rho, col)?;
            columns.push(ColumnSystem {
                rows,
                lag0,
                base,
                chol,
            });
        }
        Ok(Self {
            layout,
            gram,
            xty,
            loss_weight,
            rho: config.rho,
            columns,
            damping: DMatrix::zeros(nbar, nbar),
        })
    }

    fn configure(&mut self, rho: f64, damping: &DMatrix<f64>) -> Result<()> {
        if rho == self.rho && *damping == self.damping {
            return Ok(());
        }
        for (col, sys) in self.columns.iter_mut().enumerate() {
            let mut m = sys.base.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += rho;
            }
            for i in 0..sys.lag0 {
                m[(i, i)] += damping[(sys.rows[i], col)];
            }
            sys.chol = factor(m, col)?;
        }
        self.rho = rho;
        self.damping.copy_from(damping);
        Ok(())
    }

    /// Gradient of the subproblem from the precomputed Gram matrix.
    fn gradient(&self, w: &DMatrix<f64>, terms: &SubproblemTerms<'_>) -> DMatrix<f64> {
        let nbar = self.layout.width();
        let mut grad = (&self.gram * w - &self.xty) * self.loss_weight;
        let mut lag0 = grad.rows_mut(0, nbar);
        lag0 += terms.g0 * terms.alpha;
        lag0 += self
            .damping
            .component_mul(&(w.rows(0, nbar) - terms.anchor.rows(0, nbar)));
        grad += (w - terms.z + terms.beta) * self.rho;
        mask_to_pattern(&mut grad, &self.layout);
        grad
    }

    /// Exact minimizer with refinement; returns the number of solves used.
    fn solve(
        &self,
        terms: &SubproblemTerms<'_>,
        inner_tol: f64,
        inner_max_iter: usize,
    ) -> (DMatrix<f64>, usize) {
        let nbar = self.layout.width();
        let mut w = DMatrix::zeros(self.layout.height(), nbar);
        for (col, sys) in self.columns.iter().enumerate() {
            let rhs = DVector::from_iterator(
                sys.rows.len(),
                sys.rows.iter().map(|&r| {
                    let mut v = self.loss_weight * self.xty[(r, col)]
                        + self.rho * (terms.z[(r, col)] - terms.beta[(r, col)]);
                    if r < nbar {
                        v += self.damping[(r, col)] * terms.anchor[(r, col)]
                            - terms.alpha * terms.g0[(r, col)];
                    }
                    v
                }),
            );
            let sol = sys.chol.solve(&rhs);
            for (&r, v) in sys.rows.iter().zip(sol.iter()) {
                w[(r, col)] = *v;
            }
        }
        let mut solves = 1;
        while solves < inner_max_iter {
            let grad = self.gradient(&w, terms);
            if grad.norm() <= inner_tol {
                break;
            }
            for (col, sys) in self.columns.iter().enumerate() {
                let g = DVector::from_iterator(
                    sys.rows.len(),
                    sys.rows.iter().map(|&r| grad[(r, col)]),
                );
                let step = sys.chol.solve(&g);
                for (&r, v) in sys.rows.iter().zip(step.iter()) {
                    w[(r, col)] -= *v;
                }
            }
            solves += 1;
        }
        (w, solves)
    }
}

const KAPPA_FLOOR: f64 = 1.0;
const RHO_BALANCE: f64 = 3.0;
const RHO_RANGE: f64 = 1e6;
const RELAX: f64 = 1.6;

/// Diagonal of the dagness Hessian without the terms quadratic in `W`:
/// `2 exp(W0 o W0)^T`, per scale block, zero off the pattern.
fn curvature(w: &StackedCausalMatrix) -> DMatrix<f64> {
    let n = w.layout.series;
    let nbar = w.layout.width();
    let mut out = DMatrix::zeros(nbar, nbar);
    for (d, block) in w.instantaneous_blocks().iter().enumerate() {
        let e = expm(&block.component_mul(block));
        let off = d * n;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    out[(off + i, off + j)] = 2.0 * e[(j, i)];
                }
            }
        }
    }
    out
}

fn lag0_dagness(stack: &StackedCausalMatrix) -> Result<dagness::DagnessEval> {
    dagness::evaluate_blocks(&stack.instantaneous_blocks())
}

fn losses(design: &LaggedDesign, z: &DMatrix<f64>, lambda: f64, loss_weight: f64) -> (f64, f64) {
    let resid = &design.target - &design.regressors * z;
    (
        0.5 * loss_weight * resid.norm_squared(),
        lambda * z.iter().map(|v| v.abs()).sum::<f64>(),
    )
}

fn check_dimensions(design: &LaggedDesign, layout: &StackLayout) -> Result<()> {
    if design.target.ncols() != layout.width()
        || design.regressors.ncols() != layout.height()
        || design.lags != layout.lags
    {
        return Err(Error::invalid_arg(format!(
            "design ({} targets, {} regressors, {} lags) does not match the layout ({} columns, {} rows, {} lags)",
            design.target.ncols(),
            design.regressors.ncols(),
            design.lags,
            layout.width(),
            layout.height(),
            layout.lags
        )));
    }
    Ok(())
}

/// Solve the acyclicity-constrained sparse regression for `design` on the pattern
/// described by `layout`.
///
/// Runs that hit `max_iter` before meeting both tolerances are returned with
/// `converged == false`.
pub fn fit(
    design: &LaggedDesign,
    layout: StackLayout,
    config: &SolverConfig,
) -> Result<SolverState> {
    config.validate()?;
    check_dimensions(design, &layout)?;
    if design
        .target
        .iter()
        .chain(design.regressors.iter())
        .any(|v| !v.is_finite())
    {
        return Err(Error::InvalidData("design has non-finite entries".into()));
    }

    let mut primal = PrimalSolver::new(design, layout, config)?;
    let (height, width) = (layout.height(), layout.width());
    let mut w = StackedCausalMatrix::zeros(layout);
    let mut z = DMatrix::<f64>::zeros(height, width);
    let mut beta = DMatrix::<f64>::zeros(height, width);
    let mut alpha = 0.0;
    let mut gamma = config.gamma0;
    let mut rho = config.rho;

    let mut h_prev = 0.0;
    let mut kappa: f64 = 1.0;
    let mut h_history = Vec::new();
    let mut gamma_history = Vec::new();
    let mut primal_residual_history = Vec::new();
    let mut objective_history = Vec::new();
    let mut inner_iterations = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iter {
        let iteration = iterations + 1;
        let lin = lag0_dagness(&w)?;
        let nbar = width;
        // Lag-0 moves are damped by `alpha * kappa * H`, with `H` the diagonal
        // curvature of the dagness at the current iterate and `kappa` the smallest
        // power of two for which the resulting quadratic model majorizes the
        // dagness at the new point.
        let curv = if alpha > 0.0 {
            curvature(&w)
        } else {
            DMatrix::zeros(nbar, nbar)
        };
        kappa = (kappa / 2.0).max(KAPPA_FLOOR);
        let mut backtracks = 0;
        let (w_next, h) = loop {
            let damping = &curv * (alpha * kappa);
            primal.configure(rho, &damping).map_err(|e| match e {
                Error::NumericFailure { message, .. } => {
                    Error::NumericFailure { iteration, message }
                }
                other => other,
            })?;
            let terms = SubproblemTerms {
                alpha,
                g0: &lin.gradient,
                z: &z,
                beta: &beta,
                rho,
                loss_weight: primal.loss_weight,
                damping: &damping,
                anchor: &w.values,
            };
            let (w_next, solves) = primal.solve(&terms, config.inner_tol, config.inner_max_iter);
            inner_iterations += solves;
            if w_next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericFailure {
                    iteration,
                    message: "primal iterate became non-finite".into(),
                });
            }
            let candidate = StackedCausalMatrix {
                layout,
                values: w_next,
            };
            let h = lag0_dagness(&candidate)
                .map(|e| e.value)
                .unwrap_or(f64::INFINITY);
            if alpha == 0.0 || backtracks >= config.max_backtracks {
                break (candidate, h);
            }
            let step = candidate.values.rows(0, nbar) - w.values.rows(0, nbar);
            let model = lin.value
                + lin.gradient.component_mul(&step).sum()
                + 0.5 * kappa * curv.component_mul(&step.component_mul(&step)).sum();
            if h.is_finite() && h <= model + 1e-12 * (1.0 + lin.value) {
                break (candidate, h);
            }
            kappa *= 2.0;
            backtracks += 1;
        };
        w = w_next;

        if !h.is_finite() {
            return Err(Error::NumericFailure {
                iteration,
                message: "dagness overflowed".into(),
            });
        }
        // The ratio is undefined when the previous iterate was exactly acyclic.
        if h_prev > 0.0 && h / h_prev > config.ratio_r {
            gamma = (10.0 * gamma).min(config.gamma_max);
        }

        let z_prev = z.clone();
        let delta = config.lambda / rho;
        let relaxed = &w.values * RELAX + &z_prev * (1.0 - RELAX);
        for c in 0..width {
            for r in 0..height {
                z[(r, c)] = if layout.is_free(r, c) {
                    soft_threshold(relaxed[(r, c)] + beta[(r, c)], delta)
                } else {
                    0.0
                };
            }
        }
        alpha += gamma * h;
        beta += &relaxed - &z;
        let residual = (&w.values - &z).norm();
        if config.adaptive_rho {
            // Residual balancing; the scaled dual is rescaled to keep rho * beta fixed.
            let dual_residual = rho * (&z - &z_prev).norm();
            if residual > RHO_BALANCE * dual_residual && rho < config.rho * RHO_RANGE {
                rho *= 2.0;
                beta /= 2.0;
            } else if dual_residual > RHO_BALANCE * residual && rho > config.rho / RHO_RANGE {
                rho /= 2.0;
                beta *= 2.0;
            }
        }
        if !alpha.is_finite() || beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure {
                iteration,
                message: "dual variables became non-finite".into(),
            });
        }

        let (fit_loss, reg_loss) = losses(design, &z, config.lambda, primal.loss_weight);
        log::trace!(
            "iter {iteration}: h {h:.3e} rho {rho:.1e} kappa {kappa:.1e} bt {backtracks} gamma {gamma:.1e} alpha {alpha:.3e} residual {residual:.3e} objective {:.6}",
            fit_loss + reg_loss
        );
        h_history.push(h);
        gamma_history.push(gamma);
        primal_residual_history.push(residual);
        objective_history.push(fit_loss + reg_loss);
        iterations = iteration;
        h_prev = h;

        if h <= config.tol_h && residual <= config.tol_primal {
            let zs = StackedCausalMatrix {
                layout,
                values: z.clone(),
            };
            if zs.acyclicity_residual() <= config.tol_h {
                converged = true;
                break;
            }
        }
    }

    let (fit_loss, reg_loss) = losses(design, &z, config.lambda, primal.loss_weight);
    Ok(SolverState {
        w,
        z: StackedCausalMatrix { layout, values: z },
        alpha,
        beta,
        gamma,
        iterations,
        converged,
        h_history,
        gamma_history,
        primal_residual_history,
        objective_history,
        inner_iterations,
        fit_loss,
        reg_loss,
    })
}

/// Result of a complete pipeline run.
#[derive(Debug, Clone)]
pub struct MultiscaleFit {
    pub decomposition: Option<ScaleAugmentedPanel>,
    pub state: SolverState,
    pub graph: CausalGraphEstimate,
}

/// Fit the stacked model directly on the columns of `panel` (one scale).
pub fn fit_single_scale(
    panel: &TimeSeriesPanel,
    lags: usize,
    config: &SolverConfig,
) -> Result<MultiscaleFit> {
    panel.ensure_finite()?;
    let design = build_design(&panel.data, lags)?;
    let layout = StackLayout::new(lags, 1, panel.n_series())?;
    let state = fit(&design, layout, config)?;
    let graph = to_graph(&state.z, 0.0);
    Ok(MultiscaleFit {
        decomposition: None,
        state,
        graph,
    })
}

/// Decompose, stack and fit with lag-0 dagness evaluated per scale.
pub fn fit_multiscale(
    panel: &TimeSeriesPanel,
    levels: usize,
    filter: &FilterPair,
    lags: usize,
    config: &SolverConfig,
) -> Result<MultiscaleFit> {
    let aug = swt_decompose(panel, levels, filter)?;
    let state = fit_decomposed(&aug, lags, config)?;
    let graph = to_graph(&state.z, 0.0);
    Ok(MultiscaleFit {
        decomposition: Some(aug),
        state,
        graph,
    })
}

/// Fit an already decomposed panel.
pub fn fit_decomposed(
    aug: &ScaleAugmentedPanel,
    lags: usize,
    config: &SolverConfig,
) -> Result<SolverState> {
    let design = build_design(&aug.details, lags)?;
    let layout = StackLayout::new(lags, aug.levels, aug.n_series())?;
    debug_assert_eq!(
        pattern_for(lags, aug.levels, aug.n_series())?
            .iter()
            .filter(|b| **b)
            .count(),
        layout.free_count()
    );
    fit(&design, layout, config)
}
