//! Non-decimated (maximal overlap) stationary wavelet transform.
//!
//! Coefficients are computed with the a-trous pyramid: the level-`j` filters are the
//! base filters with `2^(j-1) - 1` zeros between taps, applied with circular
//! boundary handling. Taps are divided by `sqrt(2)` (modwt normalization) so that the
//! energy of each series splits exactly into the energies of the detail levels plus
//! the final smooth.
//!
//! Circular filtering wraps the end of the series into its start; roughly the first
//! `M * 2^(D-1)` samples at level `D` mix both ends of the record.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::TimeSeriesPanel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletFamily {
    Haar,
    Daubechies4,
    /// Least asymmetric Daubechies, 8 taps.
    Symlet8,
}

impl WaveletFamily {
    pub const ALL: [WaveletFamily; 3] = [Self::Haar, Self::Daubechies4, Self::Symlet8];

    pub fn name(self) -> &'static str {
        match self {
            Self::Haar => "haar",
            Self::Daubechies4 => "daubechies4",
            Self::Symlet8 => "symlet8",
        }
    }

    /// Number of vanishing moments of the wavelet filter.
    pub fn vanishing_moments(self) -> usize {
        match self {
            Self::Haar => 1,
            Self::Daubechies4 => 2,
            Self::Symlet8 => 4,
        }
    }
}

impl fmt::Display for WaveletFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WaveletFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "haar" => Ok(Self::Haar),
            "daubechies4" | "d4" => Ok(Self::Daubechies4),
            "symlet8" | "la8" => Ok(Self::Symlet8),
            other => Err(Error::invalid_arg(format!(
                "unknown wavelet family `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Orthonormal,
    Modwt,
}

/// Scaling (low-pass) and wavelet (high-pass) taps of an orthogonal filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPair {
    pub family: WaveletFamily,
    pub normalization: Normalization,
    pub scaling_taps: Vec<f64>,
    pub wavelet_taps: Vec<f64>,
}

// Least asymmetric 8-tap scaling filter, solved to 20 digits from the
// orthonormality and four-vanishing-moment conditions.
#[allow(clippy::excessive_precision)]
const SYMLET8: [f64; 8] = [
    -0.075_765_714_789_502_213_228,
    -0.029_635_527_646_002_491_764,
    0.497_618_667_632_774_989_98,
    0.803_738_751_805_132_080_88,
    0.297_857_795_605_306_051_4,
    -0.099_219_543_576_633_532_585,
    -0.012_603_967_262_031_303_754,
    0.032_223_100_604_051_467_872,
];

/// Orthonormal taps for `family`.
pub fn filter_bank(family: WaveletFamily) -> FilterPair {
    let scaling_taps: Vec<f64> = match family {
        WaveletFamily::Haar => vec![std::f64::consts::FRAC_1_SQRT_2; 2],
        WaveletFamily::Daubechies4 => {
            let s3 = 3f64.sqrt();
            let denom = 4.0 * std::f64::consts::SQRT_2;
            vec![
                (1.0 + s3) / denom,
                (3.0 + s3) / denom,
                (3.0 - s3) / denom,
                (1.0 - s3) / denom,
            ]
        }
        WaveletFamily::Symlet8 => SYMLET8.to_vec(),
    };
    FilterPair {
        family,
        normalization: Normalization::Orthonormal,
        wavelet_taps: quadrature_mirror(&scaling_taps),
        scaling_taps,
    }
}

/// `h_k = (-1)^k g_{M-1-k}`.
pub fn quadrature_mirror(scaling: &[f64]) -> Vec<f64> {
    let m = scaling.len();
    (0..m)
        .map(|k| {
            let g = scaling[m - 1 - k];
            if k % 2 == 0 {
                g
            } else {
                -g
            }
        })
        .collect()
}

impl FilterPair {
    pub fn len(&self) -> usize {
        self.scaling_taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scaling_taps.is_empty()
    }

    /// The same filter with taps divided by `sqrt(2)`. Idempotent.
    pub fn to_modwt(&self) -> FilterPair {
        match self.normalization {
            Normalization::Modwt => self.clone(),
            Normalization::Orthonormal => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                FilterPair {
                    family: self.family,
                    normalization: Normalization::Modwt,
                    scaling_taps: self.scaling_taps.iter().map(|g| g * s).collect(),
                    wavelet_taps: self.wavelet_taps.iter().map(|h| h * s).collect(),
                }
            }
        }
    }

    /// Maximum deviation from the orthonormal filter conditions: unit energy,
    /// `sqrt(2)` sum, vanishing even-shift autocorrelation and the QMF relation.
    pub fn orthonormality_defect(&self) -> f64 {
        let scale = match self.normalization {
            Normalization::Orthonormal => 1.0,
            Normalization::Modwt => std::f64::consts::SQRT_2,
        };
        let g: Vec<f64> = self.scaling_taps.iter().map(|v| v * scale).collect();
        let h: Vec<f64> = self.wavelet_taps.iter().map(|v| v * scale).collect();
        let mut defect = (g.iter().sum::<f64>() - std::f64::consts::SQRT_2).abs();
        for shift in (0..g.len()).step_by(2) {
            let target = if shift == 0 { 1.0 } else { 0.0 };
            let acf: f64 = g.iter().zip(&g[shift..]).map(|(a, b)| a * b).sum();
            defect = defect.max((acf - target).abs());
        }
        for (hk, qk) in h.iter().zip(quadrature_mirror(&g)) {
            defect = defect.max((hk - qk).abs());
        }
        defect
    }
}

/// Per-scale detail coefficients laid out for regression.
///
/// `details` is `T x (D*N)`; columns `d*N..(d+1)*N` hold the scale `d+1` details of
/// all `N` series. `smooth` is the level-`D` approximation (`T x N`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleAugmentedPanel {
    pub details: DMatrix<f64>,
    pub smooth: DMatrix<f64>,
    pub levels: usize,
    pub series_names: Vec<String>,
}

impl ScaleAugmentedPanel {
    pub fn n_series(&self) -> usize {
        self.series_names.len()
    }

    pub fn len(&self) -> usize {
        self.details.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.details.nrows() == 0
    }

    /// `T x N` details at scale `scale` (1-based).
    pub fn scale_details(&self, scale: usize) -> DMatrix<f64> {
        let n = self.n_series();
        self.details.columns((scale - 1) * n, n).into_owned()
    }

    /// Column names `<series>@s<d>`, in column order.
    pub fn column_names(&self) -> Vec<String> {
        (1..=self.levels)
            .flat_map(|d| self.series_names.iter().map(move |s| format!("{s}@s{d}")))
            .collect()
    }

    /// Sample correlation between the detail series of `series` at every pair of
    /// scales. Non-decimated details are not mutually orthogonal in general.
    pub fn cross_scale_correlation(&self, series: usize) -> DMatrix<f64> {
        let n = self.n_series();
        let cols: Vec<Vec<f64>> = (0..self.levels)
            .map(|d| {
                self.details
                    .column(d * n + series)
                    .iter()
                    .copied()
                    .collect()
            })
            .collect();
        DMatrix::from_fn(self.levels, self.levels, |a, b| {
            correlation(&cols[a], &cols[b])
        })
    }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Largest admissible decomposition depth for a record of length `len`.
pub fn max_levels(len: usize) -> usize {
    if len < 2 {
        0
    } else {
        len.ilog2() as usize
    }
}

/// One a-trous step on a single series: returns `(detail, smooth)`.
fn atrous_step(input: &[f64], filter: &FilterPair, dilation: usize) -> (Vec<f64>, Vec<f64>) {
    let len = input.len();
    let mut detail = vec![0.0; len];
    let mut smooth = vec![0.0; len];
    for t in 0..len {
        let (mut w, mut v) = (0.0, 0.0);
        for (l, (h, g)) in filter
            .wavelet_taps
            .iter()
            .zip(&filter.scaling_taps)
            .enumerate()
        {
            let back = (dilation * l) % len;
            let x = input[(t + len - back) % len];
            w += h * x;
            v += g * x;
        }
        detail[t] = w;
        smooth[t] = v;
    }
    (detail, smooth)
}

/// Decompose every series of `panel` into `levels` detail levels plus a smooth.
pub fn swt_decompose(
    panel: &TimeSeriesPanel,
    levels: usize,
    filter: &FilterPair,
) -> Result<ScaleAugmentedPanel> {
    let len = panel.len();
    if len < 2 {
        return Err(Error::invalid_arg(format!(
            "need at least 2 observations, got {len}"
        )));
    }
    if levels == 0 || levels > max_levels(len) {
        return Err(Error::invalid_arg(format!(
            "levels must be in 1..={} for T = {len}, got {levels}",
            max_levels(len)
        )));
    }
    if filter.is_empty()
        || filter.len() != filter.wavelet_taps.len()
        || filter
            .scaling_taps
            .iter()
            .chain(&filter.wavelet_taps)
            .any(|v| !v.is_finite())
    {
        return Err(Error::invalid_arg("filter taps must be finite and paired"));
    }
    panel.ensure_finite()?;

    let filter = filter.to_modwt();
    let n = panel.n_series();
    let mut details = DMatrix::zeros(len, levels * n);
    let mut smooth = DMatrix::zeros(len, n);
    for i in 0..n {
        let mut current: Vec<f64> = panel.data.column(i).iter().copied().collect();
        for d in 0..levels {
            let (w, v) = atrous_step(&current, &filter, 1 << d);
            details.column_mut(d * n + i).copy_from_slice(&w);
            current = v;
        }
        smooth.column_mut(i).copy_from_slice(&current);
    }
    Ok(ScaleAugmentedPanel {
        details,
        smooth,
        levels,
        series_names: panel.names.clone(),
    })
}

/// Energy of one series split by scale: `shares[d]` for detail scale `d+1`, the
/// last entry for the smooth. Shares are relative to the energy of the original
/// series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyShares {
    pub series: String,
    pub energy: f64,
    pub detail_shares: Vec<f64>,
    pub smooth_share: f64,
}

impl EnergyShares {
    pub fn total(&self) -> f64 {
        self.detail_shares.iter().sum::<f64>() + self.smooth_share
    }
}

pub fn variance_partition(
    aug: &ScaleAugmentedPanel,
    original: &TimeSeriesPanel,
) -> Result<Vec<EnergyShares>> {
    let n = original.n_series();
    if aug.n_series() != n
        || aug.len() != original.len()
        || aug.details.ncols() != aug.levels * n
        || aug.smooth.shape() != original.data.shape()
    {
        return Err(Error::invalid_arg(
            "decomposition and original panel shapes differ",
        ));
    }
    Ok((0..n)
        .map(|i| {
            let energy = original.data.column(i).norm_squared();
            let detail_energy: Vec<f64> = (0..aug.levels)
                .map(|d| aug.details.column(d * n + i).norm_squared())
                .collect();
            let smooth_energy = aug.smooth.column(i).norm_squared();
            let (detail_shares, smooth_share) = if energy > 0.0 {
                (
                    detail_energy.iter().map(|e| e / energy).collect(),
                    smooth_energy / energy,
                )
            } else {
                (vec![0.0; aug.levels], 1.0)
            };
            EnergyShares {
                series: original.names[i].clone(),
                energy,
                detail_shares,
                smooth_share,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(values: &[f64]) -> TimeSeriesPanel {
        TimeSeriesPanel::from_matrix(DMatrix::from_column_slice(values.len(), 1, values))
    }

    #[test]
    fn filters_satisfy_orthonormality() {
        for family in WaveletFamily::ALL {
            let f = filter_bank(family);
            assert!(f.len().is_multiple_of(2));
            assert!(f.orthonormality_defect() < 1e-12, "{family}");
            assert!(f.to_modwt().orthonormality_defect() < 1e-12, "{family}");
        }
    }

    #[test]
    fn haar_taps() {
        let f = filter_bank(WaveletFamily::Haar);
        let s = 0.5f64.sqrt();
        assert_eq!(f.scaling_taps, vec![s, s]);
        assert_eq!(f.wavelet_taps, vec![s, -s]);
    }

    #[test]
    fn wavelet_filters_annihilate_low_order_polynomials() {
        for family in WaveletFamily::ALL {
            let h = filter_bank(family).wavelet_taps;
            for power in 0..family.vanishing_moments() {
                let moment: f64 = h
                    .iter()
                    .enumerate()
                    .map(|(k, v)| v * (k as f64).powi(power as i32))
                    .sum();
                assert!(moment.abs() < 1e-10, "{family} moment {power}: {moment}");
            }
        }
    }

    #[test]
    fn haar_level_one_wraps_circularly() {
        let y: Vec<f64> = (1..=8).map(f64::from).collect();
        let aug = swt_decompose(&single(&y), 1, &filter_bank(WaveletFamily::Haar)).unwrap();
        assert!((aug.details[(0, 0)] + 3.5).abs() < 1e-15);
        for t in 1..8 {
            assert!((aug.details[(t, 0)] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_series_has_zero_details() {
        for family in WaveletFamily::ALL {
            let aug = swt_decompose(&single(&[2.5; 16]), 4, &filter_bank(family)).unwrap();
            assert!(aug.details.iter().all(|v| v.abs() < 1e-12));
            assert!(aug.smooth.iter().all(|v| (v - 2.5).abs() < 1e-12));
            let shares = variance_partition(&aug, &single(&[2.5; 16])).unwrap();
            assert!((shares[0].smooth_share - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nyquist_oscillation_is_all_detail() {
        let y: Vec<f64> = (0..32)
            .map(|t| (std::f64::consts::PI * t as f64).cos())
            .collect();
        let panel = single(&y);
        let aug = swt_decompose(&panel, 1, &filter_bank(WaveletFamily::Haar)).unwrap();
        let shares = variance_partition(&aug, &panel).unwrap();
        assert!((shares[0].detail_shares[0] - 1.0).abs() < 1e-12);
        assert!(shares[0].smooth_share.abs() < 1e-12);
    }

    #[test]
    fn rejects_too_many_levels_and_non_finite() {
        let f = filter_bank(WaveletFamily::Haar);
        assert!(matches!(
            swt_decompose(&single(&[1.0; 8]), 4, &f),
            Err(Error::InvalidArgument(_))
        ));
        assert!(swt_decompose(&single(&[1.0; 8]), 3, &f).is_ok());
        assert!(matches!(
            swt_decompose(&single(&[1.0, f64::NAN, 0.0, 1.0]), 1, &f),
            Err(Error::InvalidData(_))
        ));
    }

    #[test]
    fn column_names_follow_scale_blocks() {
        let panel = TimeSeriesPanel::from_matrix(DMatrix::zeros(8, 2));
        let aug = swt_decompose(&panel, 2, &filter_bank(WaveletFamily::Haar)).unwrap();
        assert_eq!(aug.column_names(), ["y1@s1", "y2@s1", "y1@s2", "y2@s2"]);
    }

    #[test]
    fn family_parsing() {
        assert_eq!(
            "Symlet8".parse::<WaveletFamily>().unwrap(),
            WaveletFamily::Symlet8
        );
        assert!("coif6".parse::<WaveletFamily>().is_err());
    }
}
