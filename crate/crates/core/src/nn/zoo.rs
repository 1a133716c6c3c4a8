//! Seeded model builders used by tests, examples and the CLI.

use super::{calibrate, LayerSpec, ModelGraph, ResidualBlock, ResidualVariant};
use crate::herpn::HerPNParams;
use crate::norm::BatchNormParams;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

/// Draws LeCun-normal weights and small biases.
pub struct Init {
    rng: ChaCha20Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    fn normal(&mut self, n: usize, std: f64) -> Vec<f64> {
        let d = Normal::new(0.0, std).expect("finite std");
        (0..n).map(|_| d.sample(&mut self.rng)).collect()
    }

    pub fn linear(&mut self, input: usize, output: usize) -> LayerSpec {
        LayerSpec::Linear {
            in_features: input,
            out_features: output,
            weight: self.normal(input * output, (1.0 / input as f64).sqrt()),
            bias: self.normal(output, 0.1),
        }
    }

    pub fn conv(&mut self, input: usize, output: usize, kernel: usize) -> LayerSpec {
        let fan_in = input * kernel * kernel;
        LayerSpec::Conv2d {
            in_channels: input,
            out_channels: output,
            kernel,
            stride: 1,
            padding: kernel / 2,
            weight: self.normal(output * fan_in, (1.0 / fan_in as f64).sqrt()),
            bias: self.normal(output, 0.1),
        }
    }

    /// Uniform samples in `[-r, r)`.
    pub fn uniform(&mut self, shape: &[usize], r: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-r..r)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape product matches")
    }
}

fn herpn(c: usize) -> LayerSpec {
    LayerSpec::Herpn(HerPNParams::new(c))
}

fn bn(c: usize) -> LayerSpec {
    LayerSpec::BatchNorm(BatchNormParams::new(c))
}

/// `Linear, HerPN, Linear, HerPN, Linear` with unpopulated statistics.
pub fn mlp3(input: usize, hidden: usize, output: usize, seed: u64) -> ModelGraph {
    let mut init = Init::new(seed);
    ModelGraph::new(
        "mlp3",
        vec![input],
        vec![
            init.linear(input, hidden),
            herpn(hidden),
            init.linear(hidden, hidden),
            herpn(hidden),
            init.linear(hidden, output),
        ],
    )
}

/// `Linear, BN, ReLU, Linear, BN, ReLU, Linear`.
pub fn mlp3_relu(input: usize, hidden: usize, output: usize, seed: u64) -> ModelGraph {
    let mut init = Init::new(seed);
    ModelGraph::new(
        "mlp3-relu",
        vec![input],
        vec![
            init.linear(input, hidden),
            bn(hidden),
            LayerSpec::Relu,
            init.linear(hidden, hidden),
            bn(hidden),
            LayerSpec::Relu,
            init.linear(hidden, output),
        ],
    )
}

/// Small VGG-style CNN on `[1, 8, 8]` inputs with four outputs: two
/// conv/HerPN/avg-pool stages, then `Linear, HerPN, Linear`.
pub fn cnn6(seed: u64) -> ModelGraph {
    let mut init = Init::new(seed);
    ModelGraph::new(
        "cnn6",
        vec![1, 8, 8],
        vec![
            init.conv(1, 4, 3),
            herpn(4),
            LayerSpec::AvgPool { kernel: 2 },
            init.conv(4, 8, 3),
            herpn(8),
            LayerSpec::AvgPool { kernel: 2 },
            LayerSpec::Flatten,
            init.linear(32, 16),
            herpn(16),
            init.linear(16, 4),
        ],
    )
}

/// `[Conv, BN, ReLU]` per entry of `channels` on `[1, 8, 8]`, then
/// `AvgPool, Flatten, Linear` to four outputs.
pub fn vgg_style(channels: &[usize], seed: u64) -> ModelGraph {
    let mut init = Init::new(seed);
    let mut layers = Vec::new();
    let mut prev = 1;
    for &c in channels {
        layers.push(init.conv(prev, c, 3));
        layers.push(bn(c));
        layers.push(LayerSpec::Relu);
        prev = c;
    }
    layers.push(LayerSpec::AvgPool { kernel: 2 });
    layers.push(LayerSpec::Flatten);
    layers.push(init.linear(prev * 16, 4));
    ModelGraph::new("vgg-style", vec![1, 8, 8], layers)
}

/// Stem `Conv, BN, ReLU`, one standard residual block
/// `[Conv, BN, ReLU, Conv, BN] + x` followed by ReLU, then a linear head.
pub fn resnet_unit(channels: usize, hw: usize, seed: u64) -> ModelGraph {
    let mut init = Init::new(seed);
    let block = ResidualBlock {
        variant: ResidualVariant::Standard,
        branch: vec![
            init.conv(channels, channels, 3),
            bn(channels),
            LayerSpec::Relu,
            init.conv(channels, channels, 3),
            bn(channels),
        ],
        shortcut: None,
    };
    ModelGraph::new(
        "resnet-unit",
        vec![1, hw, hw],
        vec![
            init.conv(1, channels, 3),
            bn(channels),
            LayerSpec::Relu,
            LayerSpec::Residual(block),
            LayerSpec::AvgPool { kernel: 2 },
            LayerSpec::Flatten,
            init.linear(channels * (hw / 2) * (hw / 2), 4),
        ],
    )
}

/// Stem `Conv`, one pre-activation block `[BN, ReLU, Conv, BN, ReLU, Conv] + x`,
/// then `BN, ReLU` and a linear head.
pub fn pa_resnet_unit(channels: usize, hw: usize, seed: u64) -> ModelGraph {
    let mut init = Init::new(seed);
    let block = ResidualBlock {
        variant: ResidualVariant::PreAct,
        branch: vec![
            bn(channels),
            LayerSpec::Relu,
            init.conv(channels, channels, 3),
            bn(channels),
            LayerSpec::Relu,
            init.conv(channels, channels, 3),
        ],
        shortcut: None,
    };
    ModelGraph::new(
        "pa-resnet-unit",
        vec![1, hw, hw],
        vec![
            init.conv(1, channels, 3),
            LayerSpec::Residual(block),
            bn(channels),
            LayerSpec::Relu,
            LayerSpec::AvgPool { kernel: 2 },
            LayerSpec::Flatten,
            init.linear(channels * (hw / 2) * (hw / 2), 4),
        ],
    )
}

/// Populate statistics from `batch` uniform samples in `[-range, range)`.
pub fn calibrated(mut model: ModelGraph, batch: usize, range: f64, seed: u64) -> ModelGraph {
    let mut init = Init::new(seed);
    let mut shape = vec![batch];
    shape.extend(&model.input_shape);
    let x = init.uniform(&shape, range);
    calibrate(&mut model, &x).expect("zoo models calibrate");
    model
}
