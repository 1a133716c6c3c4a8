//! Minibatch SGD for small fully connected classifiers, used to compare
//! normalization placements around the Hermite activation.

mod data;

pub use data::{make_dataset, spiral_point, Generator, Split, ToyDataset};

use crate::herpn::{herpn_backward, herpn_forward_train, HerPNParams, HerpnCache, HerpnError, Mode, Normalization};
use crate::nn::zoo::Init;
use crate::nn::{forward_float, LayerSpec, ModelGraph, NnError};
use crate::norm::{batch_norm_backward, batch_norm_train, BatchNormCache, BatchNormParams};
use crate::tensor::{ChannelLayout, ShapeError, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use thiserror::Error;

/// Epochs over which the loss-stability statistic is taken.
pub const STABILITY_WINDOW: usize = 20;

/// Default toy network: four hidden layers of width 32. With degree-2
/// activations a depth-`d` Hermite network is a degree `2^d` polynomial of
/// its input; depth 4 is the shallowest that fits the spirals.
pub const TOY_HIDDEN: usize = 32;
pub const TOY_DEPTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    HerpnBasiswise,
    HermitePreact,
    HermitePostact,
    ReluBn,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [
        AblationMode::HerpnBasiswise,
        AblationMode::HermitePreact,
        AblationMode::HermitePostact,
        AblationMode::ReluBn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::HerpnBasiswise => "herpn-basiswise",
            AblationMode::HermitePreact => "hermite-preact",
            AblationMode::HermitePostact => "hermite-postact",
            AblationMode::ReluBn => "relu-bn",
        }
    }

    /// Normalization placement of the Hermite variants.
    pub fn placement(self) -> Option<Normalization> {
        match self {
            AblationMode::HerpnBasiswise => Some(Normalization::BasisWise),
            AblationMode::HermitePreact => Some(Normalization::PreActivation),
            AblationMode::HermitePostact => Some(Normalization::PostActivation),
            AblationMode::ReluBn => None,
        }
    }

    /// The activation block following each hidden linear layer.
    pub fn block(self, channels: usize) -> Vec<LayerSpec> {
        match self.placement() {
            Some(p) => {
                let mut h = HerPNParams::with_degree(channels, 2, p).expect("degree 2 is supported");
                h.mode = Mode::Train;
                vec![LayerSpec::Herpn(h)]
            }
            None => vec![
                LayerSpec::BatchNorm(BatchNormParams::new(channels)),
                LayerSpec::Relu,
            ],
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                format!("unknown ablation mode {s:?} (herpn-basiswise, hermite-preact, hermite-postact, relu-bn)")
            })
    }
}

/// `depth` hidden layers of width `hidden`, each followed by the mode's
/// activation block, then a linear classifier. Weights depend only on `seed`,
/// so the four modes share their linear layers exactly.
pub fn toy_mlp(
    mode: AblationMode,
    input: usize,
    hidden: usize,
    depth: usize,
    classes: usize,
    seed: u64,
) -> ModelGraph {
    let mut init = Init::new(seed);
    let mut layers = Vec::new();
    let mut width = input;
    for _ in 0..depth {
        layers.push(init.linear(width, hidden));
        layers.extend(mode.block(hidden));
        width = hidden;
    }
    layers.push(init.linear(width, classes));
    ModelGraph::new(&format!("toy-{mode}"), vec![input], layers)
}

/// Number of trainable scalars. Hermite coefficients are fixed, so every
/// Hermite variant trains the same per-channel scale and shift.
pub fn trainable_params(model: &ModelGraph) -> usize {
    let mut n = 0;
    model.visit(&mut |_, l| {
        n += match l {
            LayerSpec::Linear { weight, bias, .. } | LayerSpec::Conv2d { weight, bias, .. } => {
                weight.len() + bias.len()
            }
            LayerSpec::BatchNorm(p) => p.gamma.len() + p.beta.len(),
            LayerSpec::Herpn(p) => p.gamma.len() + p.beta.len(),
            _ => 0,
        }
    });
    n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate, decayed to zero on a cosine schedule.
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub mode: AblationMode,
}

impl TrainConfig {
    pub fn new(mode: AblationMode, seed: u64) -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed,
            mode,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let t = epoch as f64 / self.epochs.max(1) as f64;
        0.5 * self.lr * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("batch size must be at least 2, got {0}")]
    BatchSize(usize),
    #[error("layer {index} ({kind}) is not trainable here")]
    Unsupported { index: usize, kind: &'static str },
    #[error("model expects input {expected:?}, dataset has 2 features")]
    Input { expected: Vec<usize> },
    #[error("empty training set")]
    Empty,
    #[error("loss became non-finite at epoch {epoch}, batch {batch} ({mode})")]
    Diverged {
        epoch: usize,
        batch: usize,
        mode: AblationMode,
        report: Box<TrainReport>,
    },
    #[error("layer {index}: {source}")]
    Herpn {
        index: usize,
        #[source]
        source: HerpnError,
    },
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Model(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch.
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub mode: AblationMode,
    pub dataset: ToyDataset,
    pub config: TrainConfig,
    pub params: usize,
    pub epochs_run: usize,
    pub final_loss: f64,
    pub final_train_acc: f64,
    pub final_test_acc: f64,
    /// Variance of the epoch loss over the last [`STABILITY_WINDOW`] epochs.
    pub loss_stability: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub summary: TrainSummary,
    #[serde(skip)]
    pub model: Option<ModelGraph>,
}

/// Population variance of the last `k` values.
pub fn tail_variance(values: &[f64], k: usize) -> f64 {
    let tail = &values[values.len().saturating_sub(k)..];
    if tail.is_empty() {
        return 0.0;
    }
    let n = tail.len() as f64;
    let mean = tail.iter().sum::<f64>() / n;
    tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

impl TrainReport {
    fn new(epochs: Vec<EpochRecord>, summary: TrainSummary, model: Option<ModelGraph>) -> Self {
        TrainReport {
            epochs,
            summary,
            model,
        }
    }

    /// One JSON object per epoch, then the summary.
    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> io::Result<()> {
        for e in &self.epochs {
            let mut v = serde_json::to_value(e)?;
            v["record"] = "epoch".into();
            v["mode"] = self.summary.mode.name().into();
            writeln!(w, "{v}")?;
        }
        let mut v = serde_json::to_value(&self.summary)?;
        v["record"] = "summary".into();
        writeln!(w, "{v}")
    }

    /// `epoch,loss,train_acc,test_acc,mode`.
    pub fn write_csv<W: Write>(&self, w: &mut W, header: bool) -> io::Result<()> {
        if header {
            writeln!(w, "epoch,loss,train_acc,test_acc,mode")?;
        }
        for e in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{}",
                e.epoch,
                e.loss,
                e.train_acc,
                e.test_acc,
                self.summary.mode
            )?;
        }
        Ok(())
    }
}

enum Cache {
    Linear(Tensor),
    BatchNorm(BatchNormCache),
    Relu(Vec<bool>),
    Herpn(HerpnCache),
    Pass,
}

/// Per-layer parameter gradients, in the order of [`params_mut`].
type Grads = Vec<Vec<Vec<f64>>>;

fn params_mut(layer: &mut LayerSpec) -> Vec<&mut Vec<f64>> {
    match layer {
        LayerSpec::Linear { weight, bias, .. } => vec![weight, bias],
        LayerSpec::BatchNorm(p) => vec![&mut p.gamma, &mut p.beta],
        LayerSpec::Herpn(p) => vec![&mut p.gamma, &mut p.beta],
        _ => Vec::new(),
    }
}

fn check_trainable(model: &ModelGraph) -> Result<(), TrainError> {
    for (index, l) in model.layers.iter().enumerate() {
        match l {
            LayerSpec::Linear { .. }
            | LayerSpec::BatchNorm(_)
            | LayerSpec::Relu
            | LayerSpec::Herpn(_)
            | LayerSpec::Flatten => {}
            other => {
                return Err(TrainError::Unsupported {
                    index,
                    kind: other.kind(),
                })
            }
        }
    }
    Ok(())
}

fn forward_train(model: &mut ModelGraph, x: Tensor) -> Result<(Tensor, Vec<Cache>), TrainError> {
    let mut caches = Vec::with_capacity(model.layers.len());
    let mut x = x;
    for (index, layer) in model.layers.iter_mut().enumerate() {
        let (y, cache) = match layer {
            LayerSpec::Linear {
                in_features,
                out_features,
                weight,
                bias,
            } => {
                let y = crate::nn::linear(&x, weight, bias, *in_features, *out_features)?;
                (y, Cache::Linear(x))
            }
            LayerSpec::BatchNorm(p) => {
                let layout = ChannelLayout::of(x.shape())?;
                let (y, c) = batch_norm_train(p, x.data(), layout);
                (Tensor::new(x.shape().to_vec(), y)?, Cache::BatchNorm(c))
            }
            LayerSpec::Relu => {
                let mask: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
                (x.map(|v| v.max(0.0)), Cache::Relu(mask))
            }
            LayerSpec::Herpn(p) => {
                p.mode = Mode::Train;
                let (y, c) = herpn_forward_train(&x, p).map_err(|source| TrainError::Herpn { index, source })?;
                (y, Cache::Herpn(c))
            }
            _ => (x, Cache::Pass),
        };
        x = y;
        caches.push(cache);
    }
    Ok((x, caches))
}

fn backward(model: &ModelGraph, caches: &[Cache], grad: Tensor) -> Result<Grads, TrainError> {
    let mut grads: Grads = vec![Vec::new(); model.layers.len()];
    let mut g = grad;
    for (index, (layer, cache)) in model.layers.iter().zip(caches).enumerate().rev() {
        g = match (layer, cache) {
            (
                LayerSpec::Linear {
                    in_features: d,
                    out_features: o,
                    weight,
                    ..
                },
                Cache::Linear(x),
            ) => {
                let (d, o) = (*d, *o);
                let n = x.shape()[0];
                let (xd, gd) = (x.data(), g.data());
                let mut dw = vec![0.0; o * d];
                let mut db = vec![0.0; o];
                let mut dx = vec![0.0; n * d];
                for s in 0..n {
                    for k in 0..o {
                        let gk = gd[s * o + k];
                        db[k] += gk;
                        for j in 0..d {
                            dw[k * d + j] += gk * xd[s * d + j];
                            dx[s * d + j] += gk * weight[k * d + j];
                        }
                    }
                }
                grads[index] = vec![dw, db];
                Tensor::new(vec![n, d], dx)?
            }
            (LayerSpec::BatchNorm(p), Cache::BatchNorm(c)) => {
                let (dx, dgamma, dbeta) = batch_norm_backward(p, c, g.data());
                grads[index] = vec![dgamma, dbeta];
                Tensor::new(g.shape().to_vec(), dx)?
            }
            (LayerSpec::Relu, Cache::Relu(mask)) => {
                let dx = g
                    .data()
                    .iter()
                    .zip(mask)
                    .map(|(&v, &m)| if m { v } else { 0.0 })
                    .collect();
                Tensor::new(g.shape().to_vec(), dx)?
            }
            (LayerSpec::Herpn(p), Cache::Herpn(c)) => {
                let hg = herpn_backward(&g, c, p).map_err(|source| TrainError::Herpn { index, source })?;
                grads[index] = vec![hg.gamma, hg.beta];
                hg.input
            }
            _ => g,
        };
    }
    Ok(grads)
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    let n = labels.len();
    let k = logits.len() / n.max(1);
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (s, &y) in labels.iter().enumerate() {
        let row = &logits.data()[s * k..(s + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        loss += z.ln() + max - row[y];
        for j in 0..k {
            let p = (row[j] - max).exp() / z;
            grad[s * k + j] = (p - if j == y { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (
        loss / n as f64,
        Tensor::new(logits.shape().to_vec(), grad).expect("same shape as logits"),
    )
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let n = logits.shape()[0];
    let k = logits.len() / n.max(1);
    (0..n)
        .map(|s| {
            let row = &logits.data()[s * k..(s + 1) * k];
            (0..k).fold(0, |b, j| if row[j] > row[b] { j } else { b })
        })
        .collect()
}

/// Accuracy with frozen statistics (inference mode).
pub fn evaluate(model: &ModelGraph, split: &Split) -> Result<f64, TrainError> {
    if split.is_empty() {
        return Ok(0.0);
    }
    let mut m = model.clone();
    m.set_mode(Mode::Infer);
    let pred = argmax_rows(&forward_float(&m, &split.x)?);
    let hits = pred.iter().zip(&split.y).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / split.len() as f64)
}

/// Train `model` on `data` and report per-epoch metrics.
///
/// Shuffling uses a generator seeded from `cfg.seed` alone, so two runs with
/// the same configuration see the same batches whatever their mode. A final
/// batch smaller than 2 is dropped. Non-finite loss aborts the run with
/// [`TrainError::Diverged`], carrying the report up to that point.
pub fn train(mut model: ModelGraph, data: &ToyDataset, cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    if cfg.batch_size < 2 {
        return Err(TrainError::BatchSize(cfg.batch_size));
    }
    if model.input_shape != [2] {
        return Err(TrainError::Input {
            expected: model.input_shape.clone(),
        });
    }
    check_trainable(&model)?;
    model.shapes()?;
    let (train_set, test_set) = make_dataset(data);
    if train_set.len() < 2 {
        return Err(TrainError::Empty);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut velocity: Grads = model
        .layers
        .iter_mut()
        .map(|l| params_mut(l).iter().map(|p| vec![0.0; p.len()]).collect())
        .collect();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs: Vec<EpochRecord> = Vec::with_capacity(cfg.epochs);
    let summarize = |epochs: &[EpochRecord], params: usize, diverged: bool| {
        let last = epochs.last();
        let losses: Vec<f64> = epochs.iter().map(|e| e.loss).collect();
        TrainSummary {
            mode: cfg.mode,
            dataset: *data,
            config: *cfg,
            params,
            epochs_run: epochs.len(),
            final_loss: last.map_or(f64::NAN, |e| e.loss),
            final_train_acc: last.map_or(0.0, |e| e.train_acc),
            final_test_acc: last.map_or(0.0, |e| e.test_acc),
            loss_stability: tail_variance(&losses, STABILITY_WINDOW),
            diverged,
        }
    };
    let params = trainable_params(&model);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let (x, y) = train_set.gather(idx);
            let (logits, caches) = forward_train(&mut model, x)?;
            let (loss, grad) = cross_entropy(&logits, &y);
            if !loss.is_finite() || logits.data().iter().any(|v| !v.is_finite()) {
                let summary = summarize(&epochs, params, true);
                return Err(TrainError::Diverged {
                    epoch,
                    batch,
                    mode: cfg.mode,
                    report: Box::new(TrainReport::new(epochs, summary, None)),
                });
            }
            let grads = backward(&model, &caches, grad)?;
            for ((layer, g), v) in model.layers.iter_mut().zip(&grads).zip(&mut velocity) {
                for ((p, g), v) in params_mut(layer).into_iter().zip(g).zip(v) {
                    for ((p, g), v) in p.iter_mut().zip(g).zip(v) {
                        *v = cfg.momentum * *v + g + cfg.weight_decay * *p;
                        *p -= lr * *v;
                    }
                }
            }
            loss_sum += loss;
            batches += 1;
        }
        epochs.push(EpochRecord {
            epoch,
            loss: loss_sum / batches.max(1) as f64,
            train_acc: evaluate(&model, &train_set)?,
            test_acc: evaluate(&model, &test_set)?,
            lr,
        });
    }
    model.set_mode(Mode::Infer);
    let summary = summarize(&epochs, params, false);
    Ok(TrainReport::new(epochs, summary, Some(model)))
}

/// Outcome of one ablation arm: a finished report, or the partial report of
/// a run that diverged.
pub fn train_arm(
    mode: AblationMode,
    data: &ToyDataset,
    cfg: &TrainConfig,
    hidden: usize,
    depth: usize,
) -> Result<TrainReport, TrainError> {
    let cfg = TrainConfig { mode, ..*cfg };
    let model = toy_mlp(mode, 2, hidden, depth, 2, cfg.seed);
    match train(model, data, &cfg) {
        Err(TrainError::Diverged { report, .. }) => Ok(*report),
        other => other,
    }
}
