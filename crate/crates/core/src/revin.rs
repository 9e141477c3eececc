//! Reversible per-instance normalization with learnable affine parameters.
//!
//! Each input window is standardized per channel using its own temporal mean
//! and (population) variance, then scaled/shifted by learnable gamma/beta.
//! The statistics travel with the window so predictions can be mapped back
//! to physical units exactly.

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Learnable scale/shift, one entry per channel.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub epsilon: f64,
}

impl NormParams {
    pub fn identity(channels: usize) -> Self {
        NormParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Per-window, per-channel temporal statistics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormStats {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

/// Per-channel statistics over the temporal dimension of a (steps, channels)
/// window. Variance is the population estimator.
pub fn window_stats(window: &Tensor) -> NormStats {
    let (steps, channels) = window.shape();
    let mut mu = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for c in 0..channels {
        let mut s = 0.0;
        for t in 0..steps {
            s += window.get(t, c);
        }
        let m = s / steps as f64;
        let mut v = 0.0;
        for t in 0..steps {
            let d = window.get(t, c) - m;
            v += d * d;
        }
        mu[c] = m;
        var[c] = v / steps as f64;
    }
    NormStats { mu, var }
}

/// Normalize a (steps, channels) window: gamma * (x - mu)/sqrt(var + eps) + beta.
pub fn normalize_instance(window: &Tensor, params: &NormParams) -> Result<(Tensor, NormStats)> {
    if !window.is_finite() {
        return Err(Error::NonFinite("normalize_instance input".into()));
    }
    let (steps, channels) = window.shape();
    if params.gamma.len() != channels || params.beta.len() != channels {
        return Err(Error::Shape {
            expected: format!("{channels} gamma/beta entries"),
            actual: format!("{}/{}", params.gamma.len(), params.beta.len()),
        });
    }
    let stats = window_stats(window);
    let mut out = Tensor::zeros(steps, channels);
    for c in 0..channels {
        let denom = (stats.var[c] + params.epsilon).sqrt();
        for t in 0..steps {
            let z = (window.get(t, c) - stats.mu[c]) / denom;
            out.set(t, c, params.gamma[c] * z + params.beta[c]);
        }
    }
    Ok((out, stats))
}

/// Exact inverse of [`normalize_instance`] applied to a prediction block.
pub fn denormalize(pred: &Tensor, stats: &NormStats, params: &NormParams) -> Result<Tensor> {
    let (steps, channels) = pred.shape();
    if stats.mu.len() != channels {
        return Err(Error::Shape {
            expected: format!("{} stat channels", channels),
            actual: format!("{}", stats.mu.len()),
        });
    }
    for (c, &g) in params.gamma.iter().enumerate() {
        if g == 0.0 {
            return Err(Error::NonInvertibleScale { channel: c });
        }
    }
    let mut out = Tensor::zeros(steps, channels);
    for c in 0..channels {
        let denom = (stats.var[c] + params.epsilon).sqrt();
        for t in 0..steps {
            let x = (pred.get(t, c) - params.beta[c]) / params.gamma[c] * denom + stats.mu[c];
            out.set(t, c, x);
        }
    }
    Ok(out)
}

/// Standardized channel values (x - mu)/sqrt(var + eps), without the learnable
/// affine part. This is the data-only portion of the normalization; the model
/// applies gamma/beta in-graph so they receive gradients.
pub fn standardize_channel(values: &[f64], mu: f64, var: f64, epsilon: f64) -> Vec<f64> {
    let denom = (var + epsilon).sqrt();
    values.iter().map(|v| (v - mu) / denom).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_channel_maps_to_zero() {
        let w = Tensor::from_vec(3, 1, vec![5.0, 5.0, 5.0]);
        let (out, stats) = normalize_instance(&w, &NormParams::identity(1)).unwrap();
        assert!(out.data.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(stats.mu[0], 5.0);
        assert_eq!(stats.var[0], 0.0);
    }

    #[test]
    fn hand_computed_standardization() {
        let w = Tensor::from_vec(3, 1, vec![1.0, 2.0, 3.0]);
        let params = NormParams { gamma: vec![1.0], beta: vec![0.0], epsilon: 0.0 };
        let (out, _) = normalize_instance(&w, &params).unwrap();
        // population variance of [1,2,3] is 2/3
        let e = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((out.data[0] + e).abs() < 1e-5);
        assert!((out.data[0] + 1.22474).abs() < 1e-5);
        assert!(out.data[1].abs() < 1e-12);
        assert!((out.data[2] - 1.22474).abs() < 1e-5);
    }

    #[test]
    fn gamma_zero_collapses_to_beta() {
        let w = Tensor::from_vec(4, 1, vec![1.0, -2.0, 0.5, 9.0]);
        let params = NormParams { gamma: vec![0.0], beta: vec![7.0], epsilon: 1e-5 };
        let (out, _) = normalize_instance(&w, &params).unwrap();
        assert!(out.data.iter().all(|v| (v - 7.0).abs() < 1e-12));
    }

    #[test]
    fn denormalize_inverts_hand_value() {
        let stats = NormStats { mu: vec![2.0], var: vec![2.0 / 3.0] };
        let params = NormParams { gamma: vec![1.0], beta: vec![0.0], epsilon: 0.0 };
        let y = Tensor::from_vec(3, 1, vec![-1.224744871391589, 0.0, 1.224744871391589]);
        let x = denormalize(&y, &stats, &params).unwrap();
        for (a, b) in x.data.iter().zip(&[1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn beta_image_maps_back_to_mu() {
        let stats = NormStats { mu: vec![3.5], var: vec![1.0] };
        let params = NormParams { gamma: vec![2.0], beta: vec![0.25], epsilon: 1e-5 };
        let y = Tensor::from_vec(4, 1, vec![0.25; 4]);
        let x = denormalize(&y, &stats, &params).unwrap();
        assert!(x.data.iter().all(|v| (v - 3.5).abs() < 1e-12));
    }

    #[test]
    fn gamma_zero_is_not_invertible() {
        let stats = NormStats { mu: vec![0.0], var: vec![1.0] };
        let params = NormParams { gamma: vec![0.0], beta: vec![0.0], epsilon: 1e-5 };
        let y = Tensor::zeros(2, 1);
        assert!(matches!(
            denormalize(&y, &stats, &params),
            Err(Error::NonInvertibleScale { channel: 0 })
        ));
    }

    #[test]
    fn non_finite_input_rejected() {
        let w = Tensor::from_vec(2, 1, vec![1.0, f64::NAN]);
        assert!(matches!(
            normalize_instance(&w, &NormParams::identity(1)),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn round_trip_random_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let w = Tensor::from_vec(64, 3, (0..64 * 3).map(|_| rng.gen_range(-10.0..10.0)).collect());
            let mut gamma = vec![0.0; 3];
            for g in gamma.iter_mut() {
                *g = loop {
                    let v: f64 = rng.gen_range(-2.0..2.0);
                    if v.abs() > 0.05 {
                        break v;
                    }
                };
            }
            let params = NormParams {
                gamma,
                beta: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                epsilon: DEFAULT_EPSILON,
            };
            let (norm, stats) = normalize_instance(&w, &params).unwrap();
            let back = denormalize(&norm, &stats, &params).unwrap();
            for (a, b) in back.data.iter().zip(&w.data) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn normalized_moments_with_identity_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w = Tensor::from_vec(128, 2, (0..256).map(|_| rng.gen_range(-5.0..5.0)).collect());
        let (norm, stats) = normalize_instance(&w, &NormParams::identity(2)).unwrap();
        let ns = window_stats(&norm);
        for c in 0..2 {
            assert!(ns.mu[c].abs() < 1e-6);
            let expected = stats.var[c] / (stats.var[c] + DEFAULT_EPSILON);
            assert!((ns.var[c] - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn shift_scale_equivariance() {
        // statistics absorb positive affine maps of the input
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let base: Vec<f64> = (0..96).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let w1 = Tensor::from_vec(96, 1, base.clone());
        let w2 = Tensor::from_vec(96, 1, base.iter().map(|v| 4.0 * v + 11.0).collect());
        let p = NormParams { gamma: vec![1.0], beta: vec![0.0], epsilon: 0.0 };
        let (n1, _) = normalize_instance(&w1, &p).unwrap();
        let (n2, _) = normalize_instance(&w2, &p).unwrap();
        for (a, b) in n1.data.iter().zip(&n2.data) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
