//! Layer graphs with float execution, shape checking, and the model
//! surgery that turns BN/ReLU networks into HerPN networks.

pub mod fixed;
pub mod io;
mod ops;
pub mod surgery;
pub mod zoo;

pub use ops::{avg_pool, conv2d, conv_out_dim, linear, max_pool};

use crate::field::FieldError;
use crate::herpn::{herpn_forward_infer, HerPNParams, HerpnError, Mode};
use crate::norm::{channel_stats, BatchNormParams};
use crate::tensor::{ChannelLayout, ShapeError, Tensor};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{at}: {source}")]
    Shape { at: LayerPath, source: ShapeError },
    #[error("{at}: {source}")]
    Herpn { at: LayerPath, source: HerpnError },
    #[error("{at} ({kind}): {reason}")]
    Rejected {
        at: LayerPath,
        kind: &'static str,
        reason: String,
    },
    #[error("{at} ({kind}) is not protocol-executable")]
    NotProtocolExecutable { at: LayerPath, kind: &'static str },
    #[error("{at}: parameter {name} out of range: {source}")]
    Parameter {
        at: LayerPath,
        name: &'static str,
        source: FieldError,
    },
    #[error("overflow at step {step}: |{value}| exceeds the safe bound {bound}")]
    Overflow { step: usize, value: i128, bound: u64 },
    #[error("input shape {got:?} does not match model input {expected:?}")]
    Input {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Location of a layer inside a (possibly nested) graph, e.g. `layer 2.branch[1]`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LayerPath(Vec<(Option<&'static str>, usize)>);

impl LayerPath {
    pub fn root(index: usize) -> Self {
        LayerPath(vec![(None, index)])
    }

    pub fn child(&self, part: &'static str, index: usize) -> Self {
        let mut v = self.0.clone();
        v.push((Some(part), index));
        LayerPath(v)
    }
}

impl fmt::Display for LayerPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layer ")?;
        for (i, (part, idx)) in self.0.iter().enumerate() {
            match part {
                None => write!(f, "{idx}")?,
                Some(p) => write!(f, "{}{p}[{idx}]", if i > 0 { "." } else { "" })?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualVariant {
    /// ReLU after the addition.
    Standard,
    /// Pre-activation block: nothing after the addition.
    PreAct,
    /// Rewired standard block with HerPN inside the branch.
    Herpn,
    /// Pre-activation block with HerPN inside the branch.
    PaHerpn,
}

/// `y = branch(x) + shortcut(x)`; the shortcut is the identity when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub variant: ResidualVariant,
    pub branch: Vec<LayerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortcut: Option<Vec<LayerSpec>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// `weight` is `[out, in]` row-major.
    Linear {
        in_features: usize,
        out_features: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    /// `weight` is `[out, in, k, k]` row-major.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    /// Non-overlapping `k x k` average.
    AvgPool { kernel: usize },
    /// Non-overlapping `k x k` maximum (float models only).
    MaxPool { kernel: usize },
    Flatten,
    Relu,
    BatchNorm(BatchNormParams),
    Herpn(HerPNParams),
    Residual(ResidualBlock),
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Linear { .. } => "Linear",
            LayerSpec::Conv2d { .. } => "Conv2d",
            LayerSpec::AvgPool { .. } => "AvgPool",
            LayerSpec::MaxPool { .. } => "MaxPool",
            LayerSpec::Flatten => "Flatten",
            LayerSpec::Relu => "ReLU",
            LayerSpec::BatchNorm(_) => "BatchNorm",
            LayerSpec::Herpn(_) => "HerPN",
            LayerSpec::Residual(_) => "Residual",
        }
    }

    pub fn linear(in_features: usize, out_features: usize, weight: Vec<f64>, bias: Vec<f64>) -> Self {
        LayerSpec::Linear {
            in_features,
            out_features,
            weight,
            bias,
        }
    }

    /// Output shape (without batch axis) for the given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, ShapeError> {
        let bad = |msg: String| Err(ShapeError::Invalid(msg));
        match self {
            LayerSpec::Linear {
                in_features,
                out_features,
                weight,
                bias,
            } => {
                if input != [*in_features] {
                    return bad(format!("Linear expects [{in_features}], got {input:?}"));
                }
                if weight.len() != in_features * out_features || bias.len() != *out_features {
                    return bad("Linear parameter sizes do not match its dimensions".into());
                }
                Ok(vec![*out_features])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                weight,
                bias,
            } => {
                let &[c, h, w] = input else {
                    return bad(format!("Conv2d expects [C, H, W], got {input:?}"));
                };
                if c != *in_channels {
                    return bad(format!("Conv2d expects {in_channels} channels, got {c}"));
                }
                if weight.len() != out_channels * in_channels * kernel * kernel
                    || bias.len() != *out_channels
                {
                    return bad("Conv2d parameter sizes do not match its dimensions".into());
                }
                let oh = conv_out_dim(h, *kernel, *stride, *padding)?;
                let ow = conv_out_dim(w, *kernel, *stride, *padding)?;
                Ok(vec![*out_channels, oh, ow])
            }
            LayerSpec::AvgPool { kernel } | LayerSpec::MaxPool { kernel } => {
                let &[c, h, w] = input else {
                    return bad(format!("pooling expects [C, H, W], got {input:?}"));
                };
                if *kernel == 0 || h % kernel != 0 || w % kernel != 0 {
                    return bad(format!("pool size {kernel} does not divide {h}x{w}"));
                }
                Ok(vec![c, h / kernel, w / kernel])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::BatchNorm(p) => {
                check_channels(input, p.channels)?;
                Ok(input.to_vec())
            }
            LayerSpec::Herpn(p) => {
                check_channels(input, p.channels)?;
                Ok(input.to_vec())
            }
            LayerSpec::Residual(block) => {
                let out = shapes_of(&block.branch, input)?;
                let skip = match &block.shortcut {
                    Some(s) => shapes_of(s, input)?,
                    None => input.to_vec(),
                };
                if out != skip {
                    return Err(ShapeError::Mismatch {
                        expected: skip,
                        got: out,
                    });
                }
                Ok(out)
            }
        }
    }
}

fn check_channels(input: &[usize], channels: usize) -> Result<(), ShapeError> {
    if input.first() != Some(&channels) {
        return Err(ShapeError::Invalid(format!(
            "expected {channels} channels, got shape {input:?}"
        )));
    }
    Ok(())
}

fn shapes_of(layers: &[LayerSpec], input: &[usize]) -> Result<Vec<usize>, ShapeError> {
    let mut shape = input.to_vec();
    for l in layers {
        shape = l.output_shape(&shape)?;
    }
    Ok(shape)
}

/// An ordered layer list with its per-sample input shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub name: String,
    #[serde(default)]
    pub dataset: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl ModelGraph {
    pub fn new(name: &str, input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Self {
        ModelGraph {
            name: name.to_string(),
            dataset: String::new(),
            input_shape,
            layers,
        }
    }

    /// Per-sample shape after every top-level layer.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>, NnError> {
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            shape = l.output_shape(&shape).map_err(|source| NnError::Shape {
                at: LayerPath::root(i),
                source,
            })?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>, NnError> {
        Ok(self
            .shapes()?
            .pop()
            .unwrap_or_else(|| self.input_shape.clone()))
    }

    /// Visit every layer depth-first, residual contents included.
    pub fn visit(&self, f: &mut impl FnMut(&LayerPath, &LayerSpec)) {
        fn walk(layers: &[LayerSpec], base: Option<(&LayerPath, &'static str)>, f: &mut impl FnMut(&LayerPath, &LayerSpec)) {
            for (i, l) in layers.iter().enumerate() {
                let path = match base {
                    None => LayerPath::root(i),
                    Some((p, part)) => p.child(part, i),
                };
                f(&path, l);
                if let LayerSpec::Residual(b) = l {
                    walk(&b.branch, Some((&path, "branch")), f);
                    if let Some(s) = &b.shortcut {
                        walk(s, Some((&path, "shortcut")), f);
                    }
                }
            }
        }
        walk(&self.layers, None, f);
    }

    /// Number of layers of the given kind, nested ones included.
    pub fn count(&self, kind: &str) -> usize {
        let mut n = 0;
        self.visit(&mut |_, l| {
            if l.kind() == kind {
                n += 1;
            }
        });
        n
    }

    /// Put every HerPN layer in the given mode.
    pub fn set_mode(&mut self, mode: Mode) {
        for_each_layer_mut(&mut self.layers, &mut |l| {
            if let LayerSpec::Herpn(p) = l {
                p.mode = mode;
            }
        });
    }
}

pub(crate) fn for_each_layer_mut(layers: &mut [LayerSpec], f: &mut impl FnMut(&mut LayerSpec)) {
    for l in layers {
        f(l);
        if let LayerSpec::Residual(b) = l {
            for_each_layer_mut(&mut b.branch, f);
            if let Some(s) = &mut b.shortcut {
                for_each_layer_mut(s, f);
            }
        }
    }
}

fn batch_input(model: &ModelGraph, x: &Tensor) -> Result<(Tensor, bool), NnError> {
    if x.shape() == model.input_shape.as_slice() {
        return Ok((x.clone().batched(), true));
    }
    if x.shape().len() == model.input_shape.len() + 1 && x.shape()[1..] == model.input_shape[..] {
        return Ok((x.clone(), false));
    }
    Err(NnError::Input {
        expected: model.input_shape.clone(),
        got: x.shape().to_vec(),
    })
}

/// Float inference. Accepts one sample or a batch `[N, ...input_shape]`.
pub fn forward_float(model: &ModelGraph, x: &Tensor) -> Result<Tensor, NnError> {
    model.shapes()?;
    let (xb, single) = batch_input(model, x)?;
    let mut y = run_layers(&model.layers, xb, None)?;
    if single {
        let shape = y.shape()[1..].to_vec();
        y = y.reshape(shape).map_err(|source| NnError::Shape {
            at: LayerPath::root(model.layers.len().saturating_sub(1)),
            source,
        })?;
    }
    Ok(y)
}

/// Set every BatchNorm / HerPN running statistic to the statistics of the
/// calibration batch `x` (as a single training step with momentum 1 would),
/// leaving HerPN layers in inference mode.
pub fn calibrate(model: &mut ModelGraph, x: &Tensor) -> Result<(), NnError> {
    model.shapes()?;
    let (xb, _) = batch_input(model, x)?;
    calibrate_layers(&mut model.layers, xb, None)?;
    Ok(())
}

fn calibrate_layers(
    layers: &mut [LayerSpec],
    mut x: Tensor,
    base: Option<(&LayerPath, &'static str)>,
) -> Result<Tensor, NnError> {
    for (i, layer) in layers.iter_mut().enumerate() {
        let path = match base {
            None => LayerPath::root(i),
            Some((p, part)) => p.child(part, i),
        };
        match layer {
            LayerSpec::BatchNorm(p) => {
                let layout = layout_at(&x, &path)?;
                let (mean, var) = channel_stats(x.data(), layout);
                p.running_mean = mean;
                p.running_var = var;
            }
            LayerSpec::Herpn(p) => {
                let mut q = p.clone();
                q.mode = Mode::Train;
                q.momentum = 1.0;
                crate::herpn::herpn_forward_train(&x, &mut q).map_err(|source| NnError::Herpn {
                    at: path.clone(),
                    source,
                })?;
                p.running_mean = q.running_mean;
                p.running_var = q.running_var;
                p.populated = true;
                p.mode = Mode::Infer;
            }
            LayerSpec::Residual(b) => {
                let out = calibrate_layers(&mut b.branch, x.clone(), Some((&path, "branch")))?;
                let skip = match &mut b.shortcut {
                    Some(s) => calibrate_layers(s, x.clone(), Some((&path, "shortcut")))?,
                    None => x.clone(),
                };
                x = residual_sum(b.variant, out, &skip, &path)?;
                continue;
            }
            _ => {}
        }
        x = apply_layer(layer, x, &path)?;
    }
    Ok(x)
}

fn layout_at(x: &Tensor, at: &LayerPath) -> Result<ChannelLayout, NnError> {
    ChannelLayout::of(x.shape()).map_err(|source| NnError::Shape {
        at: at.clone(),
        source,
    })
}

fn run_layers(
    layers: &[LayerSpec],
    mut x: Tensor,
    base: Option<(&LayerPath, &'static str)>,
) -> Result<Tensor, NnError> {
    for (i, layer) in layers.iter().enumerate() {
        let path = match base {
            None => LayerPath::root(i),
            Some((p, part)) => p.child(part, i),
        };
        x = apply_layer(layer, x, &path)?;
    }
    Ok(x)
}

fn residual_sum(
    variant: ResidualVariant,
    mut out: Tensor,
    skip: &Tensor,
    at: &LayerPath,
) -> Result<Tensor, NnError> {
    if out.shape() != skip.shape() {
        return Err(NnError::Shape {
            at: at.clone(),
            source: ShapeError::Mismatch {
                expected: skip.shape().to_vec(),
                got: out.shape().to_vec(),
            },
        });
    }
    let relu = variant == ResidualVariant::Standard;
    for (o, s) in out.data_mut().iter_mut().zip(skip.data()) {
        *o += s;
        if relu {
            *o = o.max(0.0);
        }
    }
    Ok(out)
}

/// One layer of batched float inference.
fn apply_layer(layer: &LayerSpec, x: Tensor, at: &LayerPath) -> Result<Tensor, NnError> {
    let shape_err = |source| NnError::Shape {
        at: at.clone(),
        source,
    };
    match layer {
        LayerSpec::Linear {
            in_features,
            out_features,
            weight,
            bias,
        } => linear(&x, weight, bias, *in_features, *out_features).map_err(shape_err),
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight,
            bias,
        } => conv2d(
            &x,
            weight,
            bias,
            *in_channels,
            *out_channels,
            *kernel,
            *stride,
            *padding,
        )
        .map_err(shape_err),
        LayerSpec::AvgPool { kernel } => avg_pool(&x, *kernel).map_err(shape_err),
        LayerSpec::MaxPool { kernel } => max_pool(&x, *kernel).map_err(shape_err),
        LayerSpec::Flatten => {
            let n = x.shape()[0];
            let rest = x.len() / n.max(1);
            x.reshape(vec![n, rest]).map_err(shape_err)
        }
        LayerSpec::Relu => Ok(x.map(|v| v.max(0.0))),
        LayerSpec::BatchNorm(p) => {
            let layout = layout_at(&x, at)?;
            let y = p.forward_infer(x.data(), layout);
            Tensor::new(x.shape().to_vec(), y).map_err(shape_err)
        }
        LayerSpec::Herpn(p) => herpn_forward_infer(&x, p).map_err(|source| NnError::Herpn {
            at: at.clone(),
            source,
        }),
        LayerSpec::Residual(b) => {
            let out = run_layers(&b.branch, x.clone(), Some((at, "branch")))?;
            let skip = match &b.shortcut {
                Some(s) => run_layers(s, x, Some((at, "shortcut")))?,
                None => x,
            };
            residual_sum(b.variant, out, &skip, at)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_only_reshapes() {
        let m = ModelGraph::new("id", vec![2, 2, 2], vec![LayerSpec::Flatten]);
        let x = Tensor::new(vec![2, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        let y = forward_float(&m, &x).unwrap();
        assert_eq!(y.shape(), &[8]);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn identity_linear() {
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let m = ModelGraph::new("eye", vec![3], vec![LayerSpec::linear(3, 3, w, vec![0.0; 3])]);
        let x = Tensor::from_vec(vec![0.5, -2.0, 7.25]);
        assert_eq!(forward_float(&m, &x).unwrap(), x);
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let m = ModelGraph::new(
            "bad",
            vec![4],
            vec![
                LayerSpec::linear(4, 2, vec![0.0; 8], vec![0.0; 2]),
                LayerSpec::linear(3, 1, vec![0.0; 3], vec![0.0]),
            ],
        );
        let err = forward_float(&m, &Tensor::from_vec(vec![0.0; 4])).unwrap_err();
        assert!(err.to_string().starts_with("layer 1:"), "{err}");
    }

    #[test]
    fn nested_paths_display() {
        let p = LayerPath::root(2).child("branch", 1);
        assert_eq!(p.to_string(), "layer 2.branch[1]");
    }

    #[test]
    fn standard_residual_applies_relu_after_add() {
        let block = ResidualBlock {
            variant: ResidualVariant::Standard,
            branch: vec![LayerSpec::linear(1, 1, vec![-3.0], vec![0.0])],
            shortcut: None,
        };
        let m = ModelGraph::new("r", vec![1], vec![LayerSpec::Residual(block.clone())]);
        let y = forward_float(&m, &Tensor::from_vec(vec![1.0])).unwrap();
        assert_eq!(y.data(), &[0.0]);
        let mut pre = block;
        pre.variant = ResidualVariant::PreAct;
        let m = ModelGraph::new("r", vec![1], vec![LayerSpec::Residual(pre)]);
        assert_eq!(forward_float(&m, &Tensor::from_vec(vec![1.0])).unwrap().data(), &[-2.0]);
    }
}
