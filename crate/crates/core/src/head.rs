//! Reconstruction head: strip prefix positions, map flattened body hidden
//! states to per-component horizon forecasts, recompose and denormalize.

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::revin::{denormalize, NormParams, NormStats};

/// Per-component horizon forecast for one channel, in (trend, seasonal,
/// residual) order.
#[derive(Clone, Debug)]
pub struct ComponentForecast {
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub residual: Vec<f64>,
}

/// Drop the first `prefix_len` rows of the backbone output.
pub fn strip_prefix(out: &Tensor, prefix_len: usize, n_p: usize) -> Result<Tensor> {
    if out.rows != prefix_len + n_p {
        return Err(Error::Shape {
            expected: format!("{} rows (prefix {} + body {})", prefix_len + n_p, prefix_len, n_p),
            actual: format!("{}", out.rows),
        });
    }
    let cols = out.cols;
    Ok(Tensor::from_vec(n_p, cols, out.data[prefix_len * cols..].to_vec()))
}

/// Affine map of the flattened body hidden states to 3 stacked length-
/// `horizon` component segments. `weight` is (n_p * d', 3 * horizon).
pub fn reconstruct(body_hidden: &Tensor, weight: &Tensor, bias: &Tensor, horizon: usize) -> Result<ComponentForecast> {
    let flat_len = body_hidden.len();
    if flat_len != weight.rows || weight.cols != 3 * horizon || bias.cols != 3 * horizon {
        return Err(Error::Shape {
            expected: format!("weight ({flat_len}, {})", 3 * horizon),
            actual: format!("({}, {}) bias {}", weight.rows, weight.cols, bias.cols),
        });
    }
    let flat = Tensor::from_vec(1, flat_len, body_hidden.data.clone());
    let mut y = flat.matmul(weight);
    for c in 0..y.cols {
        y.data[c] += bias.data[c];
    }
    Ok(ComponentForecast {
        trend: y.data[..horizon].to_vec(),
        seasonal: y.data[horizon..2 * horizon].to_vec(),
        residual: y.data[2 * horizon..].to_vec(),
    })
}

/// Sum the components per channel and invert the instance normalization.
/// `components` holds one forecast per channel in (sp, hp, ap) order; output
/// is a (horizon, 3) matrix in physical units.
pub fn finalize(
    components: &[ComponentForecast],
    stats: &NormStats,
    params: &NormParams,
) -> Result<Tensor> {
    let channels = components.len();
    let horizon = components[0].trend.len();
    let mut normalized = Tensor::zeros(horizon, channels);
    for (c, comp) in components.iter().enumerate() {
        for t in 0..horizon {
            normalized.set(t, c, comp.trend[t] + comp.seasonal[t] + comp.residual[t]);
        }
    }
    denormalize(&normalized, stats, params)
}
