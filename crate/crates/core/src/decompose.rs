//! Classical additive seasonal-trend decomposition and patch tokenization.
//!
//! Trend is a centered moving average (the 2xP convolution for even periods),
//! seasonal is the mean-centered per-phase average of the detrended series,
//! and the residual is whatever remains, so additivity is exact by
//! construction.

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// One day of half-hourly readings.
pub const DEFAULT_PERIOD: usize = 48;
pub const DEFAULT_PATCH_LEN: usize = 16;
pub const DEFAULT_PATCH_STRIDE: usize = 8;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Decomposition {
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub residual: Vec<f64>,
    pub period: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PatchSet {
    pub patches: Vec<Vec<f64>>,
    pub patch_len: usize,
    pub stride: usize,
    pub count: usize,
}

/// Number of length-`l` patches at stride `s_h` over `n` samples.
pub fn patch_count(n: usize, l: usize, s_h: usize) -> usize {
    (n - l) / s_h + 1
}

/// Centered moving-average trend with edge replication.
fn moving_average_trend(series: &[f64], period: usize) -> Vec<f64> {
    let n = series.len();
    let mut trend = vec![0.0; n];
    let half = period / 2;
    if period % 2 == 0 {
        // 2 x period convolution: half weight on the two outermost samples
        for i in half..n - half {
            let mut s = 0.5 * series[i - half] + 0.5 * series[i + half];
            for j in i - half + 1..i + half {
                s += series[j];
            }
            trend[i] = s / period as f64;
        }
        for i in 0..half {
            trend[i] = trend[half];
        }
        for i in n - half..n {
            trend[i] = trend[n - half - 1];
        }
    } else {
        for i in half..n - half {
            let s: f64 = series[i - half..=i + half].iter().sum();
            trend[i] = s / period as f64;
        }
        for i in 0..half {
            trend[i] = trend[half];
        }
        for i in n - half..n {
            trend[i] = trend[n - half - 1];
        }
    }
    trend
}

pub fn decompose(series: &[f64], period: usize) -> Result<Decomposition> {
    let n = series.len();
    if n < 2 * period {
        return Err(Error::InsufficientCycles { n, period });
    }
    let trend = moving_average_trend(series, period);
    let detrended: Vec<f64> = series.iter().zip(&trend).map(|(x, t)| x - t).collect();

    // per-phase means, then center them so a full period sums to zero
    let mut phase_sum = vec![0.0; period];
    let mut phase_cnt = vec![0usize; period];
    for (i, v) in detrended.iter().enumerate() {
        phase_sum[i % period] += v;
        phase_cnt[i % period] += 1;
    }
    let mut phase_mean: Vec<f64> =
        phase_sum.iter().zip(&phase_cnt).map(|(s, &c)| s / c as f64).collect();
    let grand = phase_mean.iter().sum::<f64>() / period as f64;
    for m in phase_mean.iter_mut() {
        *m -= grand;
    }

    let seasonal: Vec<f64> = (0..n).map(|i| phase_mean[i % period]).collect();
    let residual: Vec<f64> = series
        .iter()
        .zip(&trend)
        .zip(&seasonal)
        .map(|((x, t), s)| x - t - s)
        .collect();
    Ok(Decomposition { trend, seasonal, residual, period })
}

pub fn recompose(d: &Decomposition) -> Result<Vec<f64>> {
    if d.trend.len() != d.seasonal.len() || d.trend.len() != d.residual.len() {
        return Err(Error::Shape {
            expected: format!("components of equal length {}", d.trend.len()),
            actual: format!("{}/{}/{}", d.trend.len(), d.seasonal.len(), d.residual.len()),
        });
    }
    Ok(d.trend
        .iter()
        .zip(&d.seasonal)
        .zip(&d.residual)
        .map(|((t, s), r)| t + s + r)
        .collect())
}

pub fn make_patches(component: &[f64], l: usize, s_h: usize) -> Result<PatchSet> {
    let n = component.len();
    if l > n {
        return Err(Error::PatchTooLong { patch_len: l, n });
    }
    assert!(l >= 1 && s_h >= 1, "patch length and stride must be positive");
    let count = patch_count(n, l, s_h);
    let patches = (0..count)
        .map(|i| component[i * s_h..i * s_h + l].to_vec())
        .collect();
    Ok(PatchSet { patches, patch_len: l, stride: s_h, count })
}

/// Linear operators equivalent to [`decompose`] for a fixed (n, period), so
/// the decomposition can run inside the autodiff graph. Built by pushing unit
/// vectors through the direct implementation; residual is n - trend - seasonal
/// in-graph, keeping additivity structural.
#[derive(Clone, Debug)]
pub struct DecompositionMatrices {
    pub trend: Tensor,
    pub seasonal: Tensor,
    pub n: usize,
    pub period: usize,
}

impl DecompositionMatrices {
    pub fn build(n: usize, period: usize) -> Result<Self> {
        if n < 2 * period {
            return Err(Error::InsufficientCycles { n, period });
        }
        let mut trend = Tensor::zeros(n, n);
        let mut seasonal = Tensor::zeros(n, n);
        let mut unit = vec![0.0; n];
        for j in 0..n {
            unit[j] = 1.0;
            let d = decompose(&unit, period)?;
            for i in 0..n {
                trend.set(i, j, d.trend[i]);
                seasonal.set(i, j, d.seasonal[i]);
            }
            unit[j] = 0.0;
        }
        Ok(DecompositionMatrices { trend, seasonal, n, period })
    }
}
