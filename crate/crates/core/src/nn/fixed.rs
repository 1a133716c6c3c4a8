//! Fixed-point models and their plaintext execution.
//!
//! A float [`ModelGraph`] quantizes into a [`QuantizedModel`]: a flat stack
//! program of integer ops that the plaintext engine here and the two-party
//! protocol both execute, with the same multiply-then-truncate schedule.
//!
//! Schedule (values at scale `f` unless noted):
//!
//! * dense / conv: `acc = W x + b + h` at scale `2f`, then `acc >> f`
//! * avg-pool: `acc = inv * sum(x) + h` with `inv = round(2^f / k^2)`, then `>> f`
//! * activation, per element of channel `c`: `z = (k_c x + h) >> f` with
//!   `k_c = round(sqrt|c2| 2^f)`, then `y = (±z^2 + c1 x + c0 + h) >> f`
//!
//! where `h = 2^(f-1)` turns each floor into round-to-nearest and `c0`, `b`
//! are stored at scale `2f`.

use super::{LayerPath, LayerSpec, ModelGraph, NnError, ResidualVariant};
use crate::field::{FieldElement, FieldParams, FixedPointCodec};
use crate::herpn::fold_to_quadratic;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Every value that gets truncated, and every value the program carries,
/// must stay below this magnitude. Local share truncation is exact to one
/// LSB whenever the client share lies in `[B, p - B]`.
pub fn trunc_bound(params: FieldParams) -> u64 {
    params.modulus() >> 5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    /// Push the encoded input.
    Input { len: usize },
    Dense {
        in_features: usize,
        out_features: usize,
        weight: Vec<i64>,
        bias: Vec<i64>,
    },
    Conv {
        in_shape: [usize; 3],
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weight: Vec<i64>,
        bias: Vec<i64>,
    },
    AvgPool { in_shape: [usize; 3], kernel: usize, inv: i64 },
    /// Folded HerPN. Element `j` belongs to channel `(j / inner) % channels`.
    Activation {
        channels: usize,
        inner: usize,
        scale: Vec<i64>,
        negative: Vec<bool>,
        c1: Vec<i64>,
        c0: Vec<i64>,
    },
    Dup,
    Swap,
    Add,
    /// Pop the result.
    Output { len: usize },
}

impl Op {
    pub fn label(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Dense { .. } => "dense",
            Op::Conv { .. } => "conv",
            Op::AvgPool { .. } => "avgpool",
            Op::Activation { .. } => "activation",
            Op::Dup => "dup",
            Op::Swap => "swap",
            Op::Add => "add",
            Op::Output { .. } => "output",
        }
    }

    /// Output length of a linear op.
    pub fn out_len(&self) -> Option<usize> {
        match self {
            Op::Dense { out_features, .. } => Some(*out_features),
            Op::Conv {
                in_shape,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                let oh = (in_shape[1] + 2 * padding - kernel) / stride + 1;
                let ow = (in_shape[2] + 2 * padding - kernel) / stride + 1;
                Some(out_channels * oh * ow)
            }
            Op::AvgPool {
                in_shape, kernel, ..
            } => Some(in_shape[0] * (in_shape[1] / kernel) * (in_shape[2] / kernel)),
            _ => None,
        }
    }

    pub fn in_len(&self) -> Option<usize> {
        match self {
            Op::Dense { in_features, .. } => Some(*in_features),
            Op::Conv { in_shape, .. } | Op::AvgPool { in_shape, .. } => {
                Some(in_shape.iter().product())
            }
            _ => None,
        }
    }

    /// Channel index of element `j` for an activation.
    pub fn channel_of(channels: usize, inner: usize, j: usize) -> usize {
        (j / inner) % channels
    }
}

/// `W x` without bias for dense, conv and pooling ops, generic over the
/// value type through a multiply-accumulate closure.
pub fn linear_map<T: Copy>(op: &Op, x: &[T], zero: T, mac: impl Fn(T, i64, T) -> T) -> Vec<T> {
    match op {
        Op::Dense {
            in_features,
            out_features,
            weight,
            ..
        } => (0..*out_features)
            .map(|o| {
                let row = &weight[o * in_features..(o + 1) * in_features];
                row.iter().zip(x).fold(zero, |acc, (&w, &v)| mac(acc, w, v))
            })
            .collect(),
        Op::Conv {
            in_shape,
            out_channels,
            kernel,
            stride,
            padding,
            weight,
            ..
        } => {
            let [c, h, w] = *in_shape;
            let (k, s, pad) = (*kernel, *stride, *padding);
            let oh = (h + 2 * pad - k) / s + 1;
            let ow = (w + 2 * pad - k) / s + 1;
            let mut out = Vec::with_capacity(out_channels * oh * ow);
            for o in 0..*out_channels {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = zero;
                        for ci in 0..c {
                            for di in 0..k {
                                let yi = (i * s + di) as isize - pad as isize;
                                if yi < 0 || yi >= h as isize {
                                    continue;
                                }
                                for dj in 0..k {
                                    let xj = (j * s + dj) as isize - pad as isize;
                                    if xj < 0 || xj >= w as isize {
                                        continue;
                                    }
                                    let wv = weight[((o * c + ci) * k + di) * k + dj];
                                    let xv = x[(ci * h + yi as usize) * w + xj as usize];
                                    acc = mac(acc, wv, xv);
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
            out
        }
        Op::AvgPool {
            in_shape,
            kernel,
            inv,
        } => {
            let [c, h, w] = *in_shape;
            let k = *kernel;
            let mut out = Vec::with_capacity(c * (h / k) * (w / k));
            for ch in 0..c {
                for i in 0..h / k {
                    for j in 0..w / k {
                        let mut acc = zero;
                        for di in 0..k {
                            for dj in 0..k {
                                acc = mac(acc, *inv, x[(ch * h + i * k + di) * w + j * k + dj]);
                            }
                        }
                        out.push(acc);
                    }
                }
            }
            out
        }
        _ => panic!("linear_map on non-linear op {}", op.label()),
    }
}

/// Bias (scale `2f`) of a linear op for output element `o`; pooling has none.
pub fn op_bias(op: &Op, o: usize, out_len: usize) -> i64 {
    match op {
        Op::Dense { bias, .. } => bias[o],
        Op::Conv { bias, .. } => bias[o / (out_len / bias.len())],
        _ => 0,
    }
}

/// `W x` over field elements.
pub fn linear_map_field(op: &Op, x: &[FieldElement]) -> Vec<FieldElement> {
    let p = x.first().map(|e| e.modulus()).unwrap_or(2);
    linear_map(op, x, FieldElement::zero(p), |acc, w, v| {
        acc + FieldElement::from_signed(w as i128, p) * v
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedModel {
    pub name: String,
    pub params: FieldParams,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub program: Vec<Op>,
}

impl QuantizedModel {
    /// What the client is allowed to know: structure and the per-channel
    /// activation constants it needs for its local share arithmetic. Weights,
    /// biases and `c0` are cleared.
    pub fn public_view(&self) -> QuantizedModel {
        let mut q = self.clone();
        for op in &mut q.program {
            match op {
                Op::Dense { weight, bias, .. } | Op::Conv { weight, bias, .. } => {
                    weight.clear();
                    bias.clear();
                }
                Op::Activation { c0, .. } => c0.clear(),
                _ => {}
            }
        }
        q
    }

    /// First 8 bytes of SHA-256 over the public view and field parameters.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_vec(&self.public_view()).expect("model serializes");
        let digest = Sha256::digest(&json);
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn activation_elements(&self) -> Vec<usize> {
        self.program
            .iter()
            .filter_map(|op| match op {
                Op::Activation {
                    channels, inner, ..
                } => Some(channels * inner),
                _ => None,
            })
            .collect()
    }

    /// Elements of the stack value each step consumes or produces, by step.
    pub fn step_lengths(&self) -> Vec<usize> {
        let mut stack: Vec<usize> = Vec::new();
        let mut out = Vec::with_capacity(self.program.len());
        for op in &self.program {
            let n = match op {
                Op::Input { len } => {
                    stack.push(*len);
                    *len
                }
                Op::Dense { .. } | Op::Conv { .. } | Op::AvgPool { .. } => {
                    stack.pop();
                    let n = op.out_len().expect("linear op");
                    stack.push(n);
                    n
                }
                Op::Activation {
                    channels, inner, ..
                } => channels * inner,
                Op::Dup => {
                    let n = *stack.last().unwrap_or(&0);
                    stack.push(n);
                    n
                }
                Op::Swap => {
                    let n = stack.len();
                    if n >= 2 {
                        stack.swap(n - 1, n - 2);
                    }
                    *stack.last().unwrap_or(&0)
                }
                Op::Add => {
                    stack.pop();
                    *stack.last().unwrap_or(&0)
                }
                Op::Output { len } => {
                    stack.pop();
                    *len
                }
            };
            out.push(n);
        }
        out
    }

    /// Number of truncations per output element along the deepest path.
    pub fn truncation_depth(&self) -> usize {
        self.program
            .iter()
            .map(|op| match op {
                Op::Dense { .. } | Op::Conv { .. } | Op::AvgPool { .. } => 1,
                Op::Activation { .. } => 2,
                _ => 0,
            })
            .sum()
    }
}

struct Builder {
    codec: FixedPointCodec,
    program: Vec<Op>,
}

impl Builder {
    fn quantize(&self, at: &LayerPath, name: &'static str, v: f64) -> Result<i64, NnError> {
        self.codec.quantize(v).map_err(|source| NnError::Parameter {
            at: at.clone(),
            name,
            source,
        })
    }

    /// `round(v * 2^(2f))`, range-checked at scale `f`.
    fn quantize_double(&self, at: &LayerPath, name: &'static str, v: f64) -> Result<i64, NnError> {
        self.quantize(at, name, v)?;
        let s = self.codec.params().scale();
        Ok((v * s * s).round() as i64)
    }

    fn layers(
        &mut self,
        layers: &[LayerSpec],
        mut shape: Vec<usize>,
        base: Option<(&LayerPath, &'static str)>,
    ) -> Result<Vec<usize>, NnError> {
        for (i, layer) in layers.iter().enumerate() {
            let at = match base {
                None => LayerPath::root(i),
                Some((p, part)) => p.child(part, i),
            };
            let next = layer.output_shape(&shape).map_err(|source| NnError::Shape {
                at: at.clone(),
                source,
            })?;
            let as3 = |s: &[usize]| [s[0], s[1], s[2]];
            match layer {
                LayerSpec::Linear {
                    in_features,
                    out_features,
                    weight,
                    bias,
                } => {
                    let weight = weight
                        .iter()
                        .map(|&w| self.quantize(&at, "weight", w))
                        .collect::<Result<_, _>>()?;
                    let bias = bias
                        .iter()
                        .map(|&b| self.quantize_double(&at, "bias", b))
                        .collect::<Result<_, _>>()?;
                    self.program.push(Op::Dense {
                        in_features: *in_features,
                        out_features: *out_features,
                        weight,
                        bias,
                    });
                }
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    weight,
                    bias,
                    ..
                } => {
                    let weight = weight
                        .iter()
                        .map(|&w| self.quantize(&at, "weight", w))
                        .collect::<Result<_, _>>()?;
                    let bias = bias
                        .iter()
                        .map(|&b| self.quantize_double(&at, "bias", b))
                        .collect::<Result<_, _>>()?;
                    self.program.push(Op::Conv {
                        in_shape: as3(&shape),
                        out_channels: *out_channels,
                        kernel: *kernel,
                        stride: *stride,
                        padding: *padding,
                        weight,
                        bias,
                    });
                }
                LayerSpec::AvgPool { kernel } => {
                    let inv = (self.codec.params().scale() / (kernel * kernel) as f64).round() as i64;
                    self.program.push(Op::AvgPool {
                        in_shape: as3(&shape),
                        kernel: *kernel,
                        inv,
                    });
                }
                LayerSpec::Flatten => {}
                LayerSpec::Herpn(p) => {
                    let q = fold_to_quadratic(p).map_err(|source| NnError::Herpn {
                        at: at.clone(),
                        source,
                    })?;
                    let mut scale = Vec::with_capacity(q.channels());
                    let mut c1 = Vec::with_capacity(q.channels());
                    let mut c0 = Vec::with_capacity(q.channels());
                    for c in 0..q.channels() {
                        scale.push(self.quantize(&at, "sqrt|c2|", q.c2[c].abs().sqrt())?);
                        c1.push(self.quantize(&at, "c1", q.c1[c])?);
                        c0.push(self.quantize_double(&at, "c0", q.c0[c])?);
                    }
                    self.program.push(Op::Activation {
                        channels: shape[0],
                        inner: shape[1..].iter().product(),
                        scale,
                        negative: q.c2.iter().map(|&v| v < 0.0).collect(),
                        c1,
                        c0,
                    });
                }
                LayerSpec::Residual(block) => {
                    if block.variant == ResidualVariant::Standard {
                        return Err(NnError::NotProtocolExecutable {
                            at,
                            kind: "Residual with post-add ReLU",
                        });
                    }
                    self.program.push(Op::Dup);
                    self.layers(&block.branch, shape.clone(), Some((&at, "branch")))?;
                    if let Some(s) = &block.shortcut {
                        self.program.push(Op::Swap);
                        self.layers(s, shape.clone(), Some((&at, "shortcut")))?;
                    }
                    self.program.push(Op::Add);
                }
                LayerSpec::Relu | LayerSpec::BatchNorm(_) | LayerSpec::MaxPool { .. } => {
                    return Err(NnError::NotProtocolExecutable {
                        at,
                        kind: layer.kind(),
                    })
                }
            }
            shape = next;
        }
        Ok(shape)
    }
}

/// Encode weights, biases and folded HerPN constants. Rejects layers the
/// protocol cannot run (ReLU, BatchNorm, max-pooling, post-add ReLU).
pub fn quantize(model: &ModelGraph, codec: &FixedPointCodec) -> Result<QuantizedModel, NnError> {
    model.shapes()?;
    let mut b = Builder {
        codec: *codec,
        program: vec![Op::Input {
            len: model.input_shape.iter().product(),
        }],
    };
    let out = b.layers(&model.layers, model.input_shape.clone(), None)?;
    b.program.push(Op::Output {
        len: out.iter().product(),
    });
    Ok(QuantizedModel {
        name: model.name.clone(),
        params: codec.params(),
        input_shape: model.input_shape.clone(),
        output_shape: out,
        program: b.program,
    })
}

/// Result of a plaintext fixed-point run.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedRun {
    /// Output at scale `f`.
    pub values: Vec<i64>,
    pub output: Tensor,
    /// Per output element, the largest deviation (in LSBs) that local share
    /// truncation can introduce in a two-party run: each truncation adds at
    /// most one LSB, and earlier deviations propagate through later ops.
    pub budget: Vec<u64>,
    /// Truncation events on the path to each output element.
    pub truncations: usize,
}

fn ceil_shift(v: u128, f: u32) -> u64 {
    ((v + (1u128 << f) - 1) >> f) as u64
}

/// Run the quantized program on one sample in exact integer arithmetic.
pub fn forward_fixed(q: &QuantizedModel, x: &Tensor) -> Result<FixedRun, NnError> {
    let codec = FixedPointCodec::new(q.params);
    if x.shape() != q.input_shape.as_slice() {
        return Err(NnError::Input {
            expected: q.input_shape.clone(),
            got: x.shape().to_vec(),
        });
    }
    let f = q.params.frac_bits();
    let half = 1i128 << (f - 1);
    let bound = trunc_bound(q.params);
    let check = |step: usize, v: i128| -> Result<i128, NnError> {
        if v.unsigned_abs() >= bound as u128 {
            Err(NnError::Overflow {
                step,
                value: v,
                bound,
            })
        } else {
            Ok(v)
        }
    };

    let mut stack: Vec<(Vec<i128>, Vec<u64>)> = Vec::new();
    let mut depth: Vec<usize> = Vec::new();
    for (step, op) in q.program.iter().enumerate() {
        match op {
            Op::Input { .. } => {
                let vals = x
                    .data()
                    .iter()
                    .map(|&v| {
                        codec.quantize(v).map(|i| i as i128).map_err(|source| NnError::Parameter {
                            at: LayerPath::root(0),
                            name: "input",
                            source,
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let n = vals.len();
                stack.push((vals, vec![0; n]));
                depth.push(0);
            }
            Op::Dense { .. } | Op::Conv { .. } | Op::AvgPool { .. } => {
                let (xv, xd) = stack.pop().expect("program stack underflow");
                let acc = linear_map(op, &xv, 0i128, |a, w, v| a + w as i128 * v);
                let xd: Vec<u128> = xd.iter().map(|&d| d as u128).collect();
                let err = linear_map(op, &xd, 0u128, |a, w, d| a + w.unsigned_abs() as u128 * d);
                let n = acc.len();
                let mut vals = Vec::with_capacity(n);
                for (o, a) in acc.into_iter().enumerate() {
                    let a = check(step, a + op_bias(op, o, n) as i128 + half)?;
                    vals.push(a >> f);
                }
                let deltas = err.into_iter().map(|e| ceil_shift(e, f) + 1).collect();
                stack.push((vals, deltas));
                let d = depth.pop().unwrap_or(0);
                depth.push(d + 1);
            }
            Op::Activation {
                channels,
                inner,
                scale,
                negative,
                c1,
                c0,
            } => {
                let (xv, xd) = stack.last_mut().expect("program stack underflow");
                for j in 0..xv.len() {
                    let c = Op::channel_of(*channels, *inner, j);
                    let (x, dx) = (xv[j], xd[j] as u128);
                    let k = scale[c] as i128;
                    let (z, dz) = if k == 0 {
                        (0, 0u128)
                    } else {
                        let zacc = check(step, k * x + half)?;
                        (zacc >> f, ceil_shift(k.unsigned_abs() * dx, f) as u128 + 1)
                    };
                    let sq = z * z;
                    let y2 = if negative[c] { -sq } else { sq } + c1[c] as i128 * x + c0[c] as i128 + half;
                    let y2 = check(step, y2)?;
                    xv[j] = y2 >> f;
                    let dsq = 2 * z.unsigned_abs() * dz + dz * dz;
                    let dy = dsq + (c1[c] as i128).unsigned_abs() * dx;
                    xd[j] = ceil_shift(dy, f) + 1;
                }
                if let Some(d) = depth.last_mut() {
                    *d += 2;
                }
            }
            Op::Dup => {
                let top = stack.last().expect("program stack underflow").clone();
                stack.push(top);
                let d = *depth.last().unwrap_or(&0);
                depth.push(d);
            }
            Op::Swap => {
                let n = stack.len();
                stack.swap(n - 1, n - 2);
                depth.swap(n - 1, n - 2);
            }
            Op::Add => {
                let (bv, bd) = stack.pop().expect("program stack underflow");
                let (av, ad) = stack.last_mut().expect("program stack underflow");
                for j in 0..av.len() {
                    av[j] = check(step, av[j] + bv[j])?;
                    ad[j] += bd[j];
                }
                let db = depth.pop().unwrap_or(0);
                if let Some(da) = depth.last_mut() {
                    *da = (*da).max(db);
                }
            }
            Op::Output { .. } => {
                let (vals, budget) = stack.pop().expect("program stack underflow");
                let values: Vec<i64> = vals.iter().map(|&v| v as i64).collect();
                let output = Tensor::new(
                    q.output_shape.clone(),
                    vals.iter().map(|&v| v as f64 / q.params.scale()).collect(),
                )
                .map_err(|source| NnError::Shape {
                    at: LayerPath::root(step),
                    source,
                })?;
                return Ok(FixedRun {
                    values,
                    output,
                    budget,
                    truncations: depth.pop().unwrap_or(0),
                });
            }
        }
    }
    Err(NnError::Format("program has no output step".into()))
}
