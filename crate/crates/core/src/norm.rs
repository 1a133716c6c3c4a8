//! Per-channel batch statistics and the batch-normalization backward pass,
//! shared by the BatchNorm layer and every HerPN normalization placement.

use crate::tensor::ChannelLayout;
use serde::{Deserialize, Serialize};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// Biased mean and variance per channel of `values` laid out as `layout`.
pub fn channel_stats(values: &[f64], layout: ChannelLayout) -> (Vec<f64>, Vec<f64>) {
    let c = layout.channels;
    let count = layout.group_size() as f64;
    let mut mean = vec![0.0; c];
    for (i, &v) in values.iter().enumerate() {
        mean[layout.channel_of(i)] += v;
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; c];
    for (i, &v) in values.iter().enumerate() {
        let ch = layout.channel_of(i);
        var[ch] += (v - mean[ch]).powi(2);
    }
    var.iter_mut().for_each(|v| *v /= count);
    (mean, var)
}

/// Given `normalized = (v - mean) / std` and upstream `grad` w.r.t. the
/// normalized values, the gradient w.r.t. `v` (batch statistics included).
pub fn normalize_backward(
    normalized: &[f64],
    grad: &[f64],
    std: &[f64],
    layout: ChannelLayout,
) -> Vec<f64> {
    let c = layout.channels;
    let count = layout.group_size() as f64;
    let mut mean_g = vec![0.0; c];
    let mut mean_gn = vec![0.0; c];
    for (i, (&n, &g)) in normalized.iter().zip(grad).enumerate() {
        let ch = layout.channel_of(i);
        mean_g[ch] += g;
        mean_gn[ch] += g * n;
    }
    for ch in 0..c {
        mean_g[ch] /= count;
        mean_gn[ch] /= count;
    }
    normalized
        .iter()
        .zip(grad)
        .enumerate()
        .map(|(i, (&n, &g))| {
            let ch = layout.channel_of(i);
            (g - mean_g[ch] - n * mean_gn[ch]) / std[ch]
        })
        .collect()
}

/// Standard batch normalization with affine parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub channels: usize,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNormParams {
    pub fn new(channels: usize) -> Self {
        BatchNormParams {
            channels,
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            eps: DEFAULT_EPS,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn forward_infer(&self, x: &[f64], layout: ChannelLayout) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = layout.channel_of(i);
                self.gamma[c] * (v - self.running_mean[c])
                    / (self.running_var[c] + self.eps).sqrt()
                    + self.beta[c]
            })
            .collect()
    }
}

/// Cached forward state of a training-mode batch normalization.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub normalized: Vec<f64>,
    pub std: Vec<f64>,
    pub layout: ChannelLayout,
}

/// Training-mode forward with batch statistics; updates running statistics.
pub fn batch_norm_train(
    params: &mut BatchNormParams,
    x: &[f64],
    layout: ChannelLayout,
) -> (Vec<f64>, BatchNormCache) {
    let (mean, var) = channel_stats(x, layout);
    let std: Vec<f64> = var.iter().map(|v| (v + params.eps).sqrt()).collect();
    let normalized: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = layout.channel_of(i);
            (v - mean[c]) / std[c]
        })
        .collect();
    let out = normalized
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let c = layout.channel_of(i);
            params.gamma[c] * n + params.beta[c]
        })
        .collect();
    let m = params.momentum;
    for c in 0..layout.channels {
        params.running_mean[c] = (1.0 - m) * params.running_mean[c] + m * mean[c];
        params.running_var[c] = (1.0 - m) * params.running_var[c] + m * var[c];
    }
    (
        out,
        BatchNormCache {
            normalized,
            std,
            layout,
        },
    )
}

/// Returns (input grad, gamma grad, beta grad).
pub fn batch_norm_backward(
    params: &BatchNormParams,
    cache: &BatchNormCache,
    grad: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let layout = cache.layout;
    let mut dgamma = vec![0.0; layout.channels];
    let mut dbeta = vec![0.0; layout.channels];
    let mut dnorm = vec![0.0; grad.len()];
    for (i, &g) in grad.iter().enumerate() {
        let c = layout.channel_of(i);
        dgamma[c] += g * cache.normalized[i];
        dbeta[c] += g;
        dnorm[i] = g * params.gamma[c];
    }
    let dx = normalize_backward(&cache.normalized, &dnorm, &cache.std, layout);
    (dx, dgamma, dbeta)
}
