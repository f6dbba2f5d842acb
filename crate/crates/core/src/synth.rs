//! Ground-truth structural VAR systems and data sampled from them.
//!
//! Instantaneous blocks are permuted strictly lower-triangular matrices, lagged
//! blocks are dense Bernoulli masks; nonzero weights have uniform magnitude in a
//! configurable range and a random sign. Disturbances follow the p-generalized
//! normal law rescaled to the drawn per-series variance.
//!
//! With more than one scale each scale runs its own structural VAR; its output is
//! band-limited to the dyadic band of that scale and the bands are summed into the
//! observed series.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{StackLayout, StackedCausalMatrix};
use crate::panel::TimeSeriesPanel;

pub const BURN_IN: usize = 100;
const DIVERGENCE_LIMIT: f64 = 1e12;
const STABLE_RADIUS: f64 = 0.95;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer; derives independent stream seeds from a master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Population variance of the p-generalized normal law,
/// `p^(2/p) Gamma(3/p) / Gamma(1/p)`.
pub fn pgnd_variance(p: f64) -> f64 {
    ((2.0 / p) * p.ln() + libm::lgamma(3.0 / p) - libm::lgamma(1.0 / p)).exp()
}

/// Density `p^(1-1/p) / (2 Gamma(1/p)) * exp(-|x|^p / p)`.
pub fn pgnd_density(p: f64, x: f64) -> f64 {
    let log_norm = (1.0 - 1.0 / p) * p.ln() - std::f64::consts::LN_2 - libm::lgamma(1.0 / p);
    (log_norm - x.abs().powf(p) / p).exp()
}

/// Draws `S * (p G)^(1/p)` with `G ~ Gamma(1/p, 1)` and a fair sign `S`.
pub fn sample_pgnd_with<R: Rng + ?Sized>(rng: &mut R, p: f64, count: usize) -> Result<Vec<f64>> {
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::invalid_arg(format!("p must be positive, got {p}")));
    }
    let gamma = Gamma::new(1.0 / p, 1.0)
        .map_err(|e| Error::invalid_arg(format!("gamma shape 1/{p}: {e}")))?;
    Ok((0..count)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            let magnitude = (p * g).powf(1.0 / p);
            if rng.gen::<bool>() {
                magnitude
            } else {
                -magnitude
            }
        })
        .collect())
}

pub fn sample_pgnd(p: f64, count: usize, seed: u64) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::invalid_arg("count must be at least 1"));
    }
    sample_pgnd_with(&mut rng_from_seed(seed), p, count)
}

/// Parameters of a random ground-truth system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureSpec {
    pub series: usize,
    pub scales: usize,
    pub lags: usize,
    /// Each admissible entry is nonzero with probability `1 - sparsity`.
    pub sparsity: f64,
    pub weight_range: (f64, f64),
    pub noise_p: f64,
    pub variance_range: (f64, f64),
    /// Rescale lagged blocks when the companion spectral radius exceeds 0.95.
    pub stabilize: bool,
}

impl StructureSpec {
    pub fn new(series: usize, lags: usize, sparsity: f64) -> Self {
        Self {
            series,
            scales: 1,
            lags,
            sparsity,
            weight_range: (0.3, 0.9),
            noise_p: 2.0,
            variance_range: (1.0, 2.0),
            stabilize: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.series == 0 || self.scales == 0 {
            return Err(Error::invalid_arg("series and scales must be positive"));
        }
        if !(self.sparsity > 0.0 && self.sparsity < 1.0) {
            return Err(Error::invalid_arg(format!(
                "sparsity must lie in (0, 1), got {}",
                self.sparsity
            )));
        }
        let (lo, hi) = self.weight_range;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::invalid_arg(format!(
                "weight range must satisfy 0 < lo < hi, got [{lo}, {hi}]"
            )));
        }
        let (vlo, vhi) = self.variance_range;
        if !(vlo > 0.0 && vlo <= vhi && vhi.is_finite()) {
            return Err(Error::invalid_arg(
                "variance range must be positive and ordered",
            ));
        }
        if !(self.noise_p.is_finite() && self.noise_p > 0.0) {
            return Err(Error::invalid_arg("noise p must be positive"));
        }
        Ok(())
    }
}

/// Sparsity paired with each network size in the benchmark protocol.
pub fn default_sparsity(series: usize) -> Option<f64> {
    match series {
        10 => Some(0.80),
        30 => Some(0.85),
        50 => Some(0.90),
        100 => Some(0.95),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub w_true: StackedCausalMatrix,
    pub noise_p: f64,
    /// One variance per stack column (scale-major).
    pub noise_variances: Vec<f64>,
    pub sparsity: f64,
    pub seed: u64,
}

fn random_weight<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    let magnitude = rng.gen_range(lo..hi);
    if rng.gen::<bool>() {
        magnitude
    } else {
        -magnitude
    }
}

pub fn generate_structure(spec: &StructureSpec, seed: u64) -> Result<GroundTruth> {
    spec.validate()?;
    let layout = StackLayout::new(spec.lags, spec.scales, spec.series)?;
    let mut rng = rng_from_seed(seed);
    let n = spec.series;
    let keep = 1.0 - spec.sparsity;
    let mut w = StackedCausalMatrix::zeros(layout);

    for scale in 1..=spec.scales {
        let mut lower = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                if rng.gen::<f64>() < keep {
                    lower[(i, j)] = random_weight(&mut rng, spec.weight_range);
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let permuted = DMatrix::from_fn(n, n, |a, b| lower[(order[a], order[b])]);
        w.set_block(scale, 0, &permuted);

        for lag in 1..=spec.lags {
            let block = DMatrix::from_fn(n, n, |_, _| {
                if rng.gen::<f64>() < keep {
                    random_weight(&mut rng, spec.weight_range)
                } else {
                    0.0
                }
            });
            w.set_block(scale, lag, &block);
        }
        if spec.stabilize && spec.lags > 0 {
            stabilize_scale(&mut w, scale)?;
        }
    }

    let (vlo, vhi) = spec.variance_range;
    let noise_variances = (0..layout.width())
        .map(|_| {
            if vlo < vhi {
                rng.gen_range(vlo..=vhi)
            } else {
                vlo
            }
        })
        .collect();
    Ok(GroundTruth {
        w_true: w,
        noise_p: spec.noise_p,
        noise_variances,
        sparsity: spec.sparsity,
        seed,
    })
}

fn instantaneous_inverse(w0: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = w0.nrows();
    (DMatrix::identity(n, n) - w0)
        .try_inverse()
        .ok_or_else(|| Error::InvalidData("I - W0 is singular; lag-0 block is not acyclic".into()))
}

/// Spectral radius of the reduced-form companion matrix of one scale.
pub fn companion_radius(w: &StackedCausalMatrix, scale: usize) -> Result<f64> {
    let layout = w.layout;
    let (n, lags) = (layout.series, layout.lags);
    if lags == 0 {
        return Ok(0.0);
    }
    let inv = instantaneous_inverse(&w.block(scale, 0))?;
    let mut companion = DMatrix::zeros(n * lags, n * lags);
    for lag in 1..=lags {
        let reduced = (w.block(scale, lag) * &inv).transpose();
        companion
            .view_mut((0, (lag - 1) * n), (n, n))
            .copy_from(&reduced);
    }
    for k in 1..lags {
        companion
            .view_mut((k * n, (k - 1) * n), (n, n))
            .fill_with_identity();
    }
    Ok(companion
        .complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max))
}

fn stabilize_scale(w: &mut StackedCausalMatrix, scale: usize) -> Result<()> {
    for _ in 0..100 {
        let radius = companion_radius(w, scale)?;
        if radius <= STABLE_RADIUS {
            return Ok(());
        }
        let factor = STABLE_RADIUS / radius * 0.999;
        for lag in 1..=w.layout.lags {
            let block = w.block(scale, lag) * factor;
            w.set_block(scale, lag, &block);
        }
    }
    Err(Error::NumericFailure {
        iteration: 100,
        message: format!("could not stabilize lagged dynamics at scale {scale}"),
    })
}

/// Simulate one scale's structural VAR; returns `T x N` after burn-in.
fn simulate_scale(
    truth: &GroundTruth,
    scale: usize,
    len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<f64>> {
    let layout = truth.w_true.layout;
    let (n, lags) = (layout.series, layout.lags);
    let inv = instantaneous_inverse(&truth.w_true.block(scale, 0))?;
    let lagged: Vec<DMatrix<f64>> = (1..=lags).map(|l| truth.w_true.block(scale, l)).collect();
    let noise_sd = pgnd_variance(truth.noise_p).sqrt();
    let sigmas: Vec<f64> = (0..n)
        .map(|i| truth.noise_variances[layout.col(scale, i)].sqrt() / noise_sd)
        .collect();

    let total = len + BURN_IN;
    let mut y = DMatrix::<f64>::zeros(total, n);
    for t in 0..total {
        let noise = sample_pgnd_with(rng, truth.noise_p, n)?;
        let mut drive = DVector::from_iterator(n, noise.iter().zip(&sigmas).map(|(e, s)| e * s));
        for (l, block) in lagged.iter().enumerate() {
            let lag = l + 1;
            if t >= lag {
                drive += block.tr_mul(&y.row(t - lag).transpose());
            }
        }
        // Row-vector model: y_t (I - W0) = drive.
        let row = inv.tr_mul(&drive);
        if row
            .iter()
            .any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
        {
            return Err(Error::NumericFailure {
                iteration: t,
                message: format!(
                    "simulation diverged at sample {t} (scale {scale}, seed {}); lagged dynamics are unstable",
                    truth.seed
                ),
            });
        }
        y.row_mut(t).copy_from(&row.transpose());
    }
    Ok(y.rows(BURN_IN, len).into_owned())
}

/// Keep frequencies in `(2^-(scale+1), 2^-scale]` cycles per sample.
fn band_limit(column: &[f64], scale: usize) -> Vec<f64> {
    let len = column.len();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = column.iter().map(|v| Complex::new(*v, 0.0)).collect();
    planner.plan_fft_forward(len).process(&mut buf);
    let lo = 1.0 / f64::from(1u32 << (scale + 1));
    let hi = 1.0 / f64::from(1u32 << scale);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(len - k) as f64 / len as f64;
        if !(f > lo && f <= hi) {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    buf.iter().map(|c| c.re / len as f64).collect()
}

/// Sample `len` observations from `truth`.
pub fn simulate(truth: &GroundTruth, len: usize, seed: u64) -> Result<TimeSeriesPanel> {
    let layout = truth.w_true.layout;
    if len <= layout.lags {
        return Err(Error::invalid_arg(format!(
            "need more than {} observations",
            layout.lags
        )));
    }
    if truth.w_true.acyclicity_residual() > 1e-12 {
        return Err(Error::invalid_arg(
            "lag-0 blocks of the ground truth are cyclic",
        ));
    }
    let mut rng = rng_from_seed(seed);
    let data = if layout.scales == 1 {
        simulate_scale(truth, 1, len, &mut rng)?
    } else {
        let mut sum = DMatrix::zeros(len, layout.series);
        for scale in 1..=layout.scales {
            let y = simulate_scale(truth, scale, len, &mut rng)?;
            for i in 0..layout.series {
                let col: Vec<f64> = y.column(i).iter().copied().collect();
                let banded = band_limit(&col, scale);
                for (t, v) in banded.into_iter().enumerate() {
                    sum[(t, i)] += v;
                }
            }
        }
        sum
    };
    Ok(TimeSeriesPanel::from_matrix(data))
}

/// One cell of the benchmark grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub len: usize,
    pub series: usize,
    pub sparsity: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub cells: Vec<GridCell>,
    pub replicates: usize,
    pub lags: usize,
    pub scales: usize,
    pub weight_range: (f64, f64),
    pub master_seed: u64,
}

impl GridSpec {
    /// Cartesian product with each size paired to its default sparsity.
    pub fn product(
        lens: &[usize],
        series: &[usize],
        ps: &[f64],
        replicates: usize,
        master_seed: u64,
    ) -> Result<Self> {
        let mut cells = Vec::new();
        for &len in lens {
            for &n in series {
                let sparsity = default_sparsity(n).ok_or_else(|| {
                    Error::invalid_arg(format!(
                        "no default sparsity for N = {n}; pass one explicitly"
                    ))
                })?;
                for &p in ps {
                    cells.push(GridCell {
                        len,
                        series: n,
                        sparsity,
                        p,
                    });
                }
            }
        }
        Ok(Self {
            cells,
            replicates,
            lags: 1,
            scales: 1,
            weight_range: (0.3, 0.9),
            master_seed,
        })
    }

    /// Gaussian single-lag benchmark: T = 1000, sizes 10/30/50/100.
    pub fn single_scale_benchmark(replicates: usize, master_seed: u64) -> Self {
        Self::product(&[1000], &[10, 30, 50, 100], &[2.0], replicates, master_seed)
            .expect("sizes have default sparsities")
    }

    /// Non-Gaussian benchmark over sample size, network size and noise shape.
    pub fn non_gaussian_benchmark(replicates: usize, master_seed: u64) -> Self {
        Self::product(
            &[100, 500, 1000],
            &[10, 30, 50],
            &[1.0, 1.5, 2.0, 2.5, 100.0],
            replicates,
            master_seed,
        )
        .expect("sizes have default sparsities")
    }

    pub fn dataset_count(&self) -> usize {
        self.cells.len() * self.replicates
    }

    /// All `(cell index, replicate)` pairs in output order.
    pub fn jobs(&self) -> Vec<(usize, usize)> {
        (0..self.cells.len())
            .flat_map(|c| (0..self.replicates).map(move |r| (c, r)))
            .collect()
    }

    /// Seeds for the structure and the sample path of one dataset.
    pub fn seeds(&self, cell: usize, replicate: usize) -> (u64, u64) {
        let stream = derive_seed(self.master_seed, (cell as u64) << 32 | replicate as u64);
        (derive_seed(stream, 0), derive_seed(stream, 1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::invalid_arg("replicates must be at least 1"));
        }
        if self.cells.is_empty() {
            return Err(Error::invalid_arg("grid has no cells"));
        }
        Ok(())
    }
}

/// Generate the ground truth and sample of one grid dataset.
pub fn grid_dataset(
    grid: &GridSpec,
    cell: usize,
    replicate: usize,
) -> Result<(GroundTruth, TimeSeriesPanel)> {
    let c = &grid.cells[cell];
    let (structure_seed, sample_seed) = grid.seeds(cell, replicate);
    let spec = StructureSpec {
        weight_range: grid.weight_range,
        noise_p: c.p,
        scales: grid.scales,
        ..StructureSpec::new(c.series, grid.lags, c.sparsity)
    };
    let truth = generate_structure(&spec, structure_seed)?;
    let panel = simulate(&truth, c.len, sample_seed)?;
    Ok((truth, panel))
}
