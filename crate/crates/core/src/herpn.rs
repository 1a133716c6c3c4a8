//! The HerPN block: a truncated Hermite expansion of an activation whose basis
//! outputs are normalized separately before the coefficient-weighted sum, with
//! per-channel scale and shift applied afterwards.
//!
//! ```text
//! y = gamma_c * sum_i f_i * (h_i(x) - mu_{i,c}) / sqrt(var_{i,c} + eps) + beta_c
//! ```
//!
//! Two alternative placements of a single normalization (before the
//! polynomial, or after the sum) are provided for ablations.

use crate::hermite::{relu_hermite_coeffs, HermiteBasis, HermiteError};
use crate::norm::{channel_stats, normalize_backward, DEFAULT_EPS, DEFAULT_MOMENTUM};
use crate::tensor::{ChannelLayout, ShapeError, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HerpnError {
    #[error("batch normalization needs at least 2 samples per channel, got {0}")]
    BatchTooSmall(usize),
    #[error("HerPN is in {0:?} mode")]
    WrongMode(Mode),
    #[error("running statistics were never populated")]
    Unpopulated,
    #[error("folding requires degree 2 with basis-wise normalization (degree {degree}, {placement:?})")]
    NotFoldable {
        degree: usize,
        placement: Normalization,
    },
    #[error("expected {expected} channels, got {got}")]
    Channels { expected: usize, got: usize },
    #[error("{expected} coefficients required for degree {degree}, got {got}")]
    Coefficients {
        degree: usize,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Hermite(#[from] HermiteError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// One normalization per Hermite basis output.
    BasisWise,
    /// Normalize the input once, then evaluate the expansion.
    PreActivation,
    /// Evaluate the expansion, then normalize the sum once.
    PostActivation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// Parameters of one HerPN layer.
///
/// `running_mean` / `running_var` are indexed `[stat * channels + c]`; basis-wise
/// placement keeps `degree + 1` statistics per channel, the others keep one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HerPNParams {
    pub channels: usize,
    pub degree: usize,
    pub coeffs: Vec<f64>,
    pub placement: Normalization,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
    pub mode: Mode,
    pub populated: bool,
}

impl HerPNParams {
    /// Degree-2 ReLU expansion, basis-wise normalization, identity statistics.
    pub fn new(channels: usize) -> Self {
        Self::with_degree(channels, 2, Normalization::BasisWise).expect("degree 2 is supported")
    }

    pub fn with_degree(
        channels: usize,
        degree: usize,
        placement: Normalization,
    ) -> Result<Self, HerpnError> {
        HermiteBasis::new(degree)?;
        let stats = stat_count(degree, placement) * channels;
        let mut p = HerPNParams {
            channels,
            degree,
            coeffs: relu_hermite_coeffs(degree),
            placement,
            running_mean: vec![0.0; stats],
            running_var: vec![1.0; stats],
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            eps: DEFAULT_EPS,
            momentum: DEFAULT_MOMENTUM,
            mode: Mode::Infer,
            populated: false,
        };
        p.pin_constant_basis();
        Ok(p)
    }

    /// Replace the expansion coefficients (e.g. for a different activation).
    pub fn set_coeffs(&mut self, coeffs: Vec<f64>) -> Result<(), HerpnError> {
        if coeffs.len() != self.degree + 1 {
            return Err(HerpnError::Coefficients {
                degree: self.degree,
                expected: self.degree + 1,
                got: coeffs.len(),
            });
        }
        self.coeffs = coeffs;
        Ok(())
    }

    /// Install explicit running statistics and mark them populated.
    pub fn set_stats(&mut self, mean: Vec<f64>, var: Vec<f64>) {
        assert_eq!(mean.len(), self.running_mean.len());
        assert_eq!(var.len(), self.running_var.len());
        self.running_mean = mean;
        self.running_var = var;
        self.populated = true;
    }

    pub fn stat_count(&self) -> usize {
        stat_count(self.degree, self.placement)
    }

    fn basis(&self) -> HermiteBasis {
        HermiteBasis::new(self.degree).expect("degree validated at construction")
    }

    /// The constant basis has zero batch variance; its normalized term is
    /// defined as 0. Running statistics (mean 1, var 1) reproduce that exactly
    /// at inference.
    fn pin_constant_basis(&mut self) {
        if self.placement == Normalization::BasisWise {
            for c in 0..self.channels {
                self.running_mean[c] = 1.0;
                self.running_var[c] = 1.0 - self.eps;
            }
        }
    }

    fn check_channels(&self, layout: ChannelLayout) -> Result<(), HerpnError> {
        if layout.channels != self.channels {
            return Err(HerpnError::Channels {
                expected: self.channels,
                got: layout.channels,
            });
        }
        Ok(())
    }

    fn stat(&self, v: &[f64], i: usize, c: usize) -> f64 {
        v[i * self.channels + c]
    }
}

fn stat_count(degree: usize, placement: Normalization) -> usize {
    match placement {
        Normalization::BasisWise => degree + 1,
        _ => 1,
    }
}

/// `sum_i f_i h_i(x)` and its derivative.
fn expansion(basis: HermiteBasis, coeffs: &[f64], x: f64, scratch: &mut [f64]) -> (f64, f64) {
    basis.eval_into(x, scratch);
    let mut v = 0.0;
    let mut d = 0.0;
    for i in 0..scratch.len() {
        v += coeffs[i] * scratch[i];
        d += coeffs[i] * HermiteBasis::derivative(scratch, i);
    }
    (v, d)
}

/// Everything the backward pass needs from a training forward.
#[derive(Debug, Clone)]
pub struct HerpnCache {
    layout: ChannelLayout,
    /// Input values (basis-wise, post-activation) or normalized inputs (pre).
    points: Vec<f64>,
    /// Normalized statistics targets, `[stat][element]`.
    normalized: Vec<Vec<f64>>,
    std: Vec<Vec<f64>>,
    /// `sum_i f_i n_i` (basis-wise) or the normalized value fed to gamma.
    pre_affine: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HerpnGrads {
    pub input: Tensor,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Training forward with batch statistics. Updates running statistics.
pub fn herpn_forward_train(
    x: &Tensor,
    params: &mut HerPNParams,
) -> Result<(Tensor, HerpnCache), HerpnError> {
    if params.mode != Mode::Train {
        return Err(HerpnError::WrongMode(params.mode));
    }
    let layout = ChannelLayout::of(x.shape())?;
    params.check_channels(layout)?;
    if layout.group_size() < 2 {
        return Err(HerpnError::BatchTooSmall(layout.group_size()));
    }
    let basis = params.basis();
    let n = x.len();
    let m = params.momentum;
    let mut scratch = vec![0.0; basis.len()];
    let update = |params: &mut HerPNParams, stat: usize, mean: &[f64], var: &[f64]| {
        for c in 0..params.channels {
            let k = stat * params.channels + c;
            params.running_mean[k] = (1.0 - m) * params.running_mean[k] + m * mean[c];
            params.running_var[k] = (1.0 - m) * params.running_var[k] + m * var[c];
        }
    };

    let (points, normalized, std, pre_affine) = match params.placement {
        Normalization::BasisWise => {
            let mut values = vec![vec![0.0; n]; basis.len()];
            for (j, &xv) in x.data().iter().enumerate() {
                basis.eval_into(xv, &mut scratch);
                for i in 0..basis.len() {
                    values[i][j] = scratch[i];
                }
            }
            let mut normalized = vec![Vec::new(); basis.len()];
            let mut stds = vec![Vec::new(); basis.len()];
            let mut sum = vec![0.0; n];
            for i in 1..basis.len() {
                let (mean, var) = channel_stats(&values[i], layout);
                let std: Vec<f64> = var.iter().map(|v| (v + params.eps).sqrt()).collect();
                let nv: Vec<f64> = values[i]
                    .iter()
                    .enumerate()
                    .map(|(j, &h)| {
                        let c = layout.channel_of(j);
                        (h - mean[c]) / std[c]
                    })
                    .collect();
                for j in 0..n {
                    sum[j] += params.coeffs[i] * nv[j];
                }
                update(params, i, &mean, &var);
                normalized[i] = nv;
                stds[i] = std;
            }
            params.pin_constant_basis();
            (x.data().to_vec(), normalized, stds, sum)
        }
        Normalization::PreActivation => {
            let (mean, var) = channel_stats(x.data(), layout);
            let std: Vec<f64> = var.iter().map(|v| (v + params.eps).sqrt()).collect();
            let z: Vec<f64> = x
                .data()
                .iter()
                .enumerate()
                .map(|(j, &v)| {
                    let c = layout.channel_of(j);
                    (v - mean[c]) / std[c]
                })
                .collect();
            let q: Vec<f64> = z
                .iter()
                .map(|&zv| expansion(basis, &params.coeffs, zv, &mut scratch).0)
                .collect();
            update(params, 0, &mean, &var);
            (z.clone(), vec![z], vec![std], q)
        }
        Normalization::PostActivation => {
            let q: Vec<f64> = x
                .data()
                .iter()
                .map(|&xv| expansion(basis, &params.coeffs, xv, &mut scratch).0)
                .collect();
            let (mean, var) = channel_stats(&q, layout);
            let std: Vec<f64> = var.iter().map(|v| (v + params.eps).sqrt()).collect();
            let nv: Vec<f64> = q
                .iter()
                .enumerate()
                .map(|(j, &v)| {
                    let c = layout.channel_of(j);
                    (v - mean[c]) / std[c]
                })
                .collect();
            update(params, 0, &mean, &var);
            (x.data().to_vec(), vec![nv.clone()], vec![std], nv)
        }
    };
    params.populated = true;

    let out: Vec<f64> = pre_affine
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            let c = layout.channel_of(j);
            params.gamma[c] * s + params.beta[c]
        })
        .collect();
    Ok((
        Tensor::new(x.shape().to_vec(), out)?,
        HerpnCache {
            layout,
            points,
            normalized,
            std,
            pre_affine,
        },
    ))
}

/// Exact gradients of the training forward, batch statistics included.
pub fn herpn_backward(
    grad: &Tensor,
    cache: &HerpnCache,
    params: &HerPNParams,
) -> Result<HerpnGrads, HerpnError> {
    let layout = cache.layout;
    if grad.len() != cache.pre_affine.len() {
        return Err(ShapeError::Mismatch {
            expected: vec![cache.pre_affine.len()],
            got: grad.shape().to_vec(),
        }
        .into());
    }
    let n = grad.len();
    let g = grad.data();
    let mut dgamma = vec![0.0; layout.channels];
    let mut dbeta = vec![0.0; layout.channels];
    let mut dpre = vec![0.0; n];
    for j in 0..n {
        let c = layout.channel_of(j);
        dgamma[c] += g[j] * cache.pre_affine[j];
        dbeta[c] += g[j];
        dpre[j] = g[j] * params.gamma[c];
    }
    let basis = params.basis();
    let mut scratch = vec![0.0; basis.len()];
    let dx = match params.placement {
        Normalization::BasisWise => {
            let mut dx = vec![0.0; n];
            for i in 1..basis.len() {
                let dn: Vec<f64> = dpre.iter().map(|d| d * params.coeffs[i]).collect();
                let dh = normalize_backward(&cache.normalized[i], &dn, &cache.std[i], layout);
                for j in 0..n {
                    basis.eval_into(cache.points[j], &mut scratch);
                    dx[j] += dh[j] * HermiteBasis::derivative(&scratch, i);
                }
            }
            dx
        }
        Normalization::PreActivation => {
            let dz: Vec<f64> = cache
                .points
                .iter()
                .zip(&dpre)
                .map(|(&z, &d)| d * expansion(basis, &params.coeffs, z, &mut scratch).1)
                .collect();
            normalize_backward(&cache.normalized[0], &dz, &cache.std[0], layout)
        }
        Normalization::PostActivation => {
            let dq = normalize_backward(&cache.normalized[0], &dpre, &cache.std[0], layout);
            cache
                .points
                .iter()
                .zip(&dq)
                .map(|(&x, &d)| d * expansion(basis, &params.coeffs, x, &mut scratch).1)
                .collect()
        }
    };
    Ok(HerpnGrads {
        input: Tensor::new(grad.shape().to_vec(), dx)?,
        gamma: dgamma,
        beta: dbeta,
    })
}

/// Inference forward with frozen running statistics. Element-wise.
pub fn herpn_forward_infer(x: &Tensor, params: &HerPNParams) -> Result<Tensor, HerpnError> {
    if params.mode != Mode::Infer {
        return Err(HerpnError::WrongMode(params.mode));
    }
    if !params.populated {
        return Err(HerpnError::Unpopulated);
    }
    let layout = ChannelLayout::of(x.shape())?;
    params.check_channels(layout)?;
    let out = x
        .data()
        .iter()
        .enumerate()
        .map(|(j, &v)| herpn_scalar(params, layout.channel_of(j), v))
        .collect();
    Ok(Tensor::new(x.shape().to_vec(), out)?)
}

/// Inference-mode HerPN of one value in channel `c`.
pub fn herpn_scalar(params: &HerPNParams, c: usize, x: f64) -> f64 {
    let basis = params.basis();
    let mut h = vec![0.0; basis.len()];
    let norm = |i: usize, v: f64| {
        (v - params.stat(&params.running_mean, i, c))
            / (params.stat(&params.running_var, i, c) + params.eps).sqrt()
    };
    let s = match params.placement {
        Normalization::BasisWise => {
            basis.eval_into(x, &mut h);
            (0..basis.len())
                .map(|i| params.coeffs[i] * norm(i, h[i]))
                .sum()
        }
        Normalization::PreActivation => expansion(basis, &params.coeffs, norm(0, x), &mut h).0,
        Normalization::PostActivation => norm(0, expansion(basis, &params.coeffs, x, &mut h).0),
    };
    params.gamma[c] * s + params.beta[c]
}

/// Per-channel `c2 x^2 + c1 x + c0`, equal to the inference forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldedQuadratic {
    pub c2: Vec<f64>,
    pub c1: Vec<f64>,
    pub c0: Vec<f64>,
}

impl FoldedQuadratic {
    pub fn channels(&self) -> usize {
        self.c2.len()
    }

    pub fn eval(&self, c: usize, x: f64) -> f64 {
        self.c2[c] * x * x + self.c1[c] * x + self.c0[c]
    }

    /// Same coefficients for every channel.
    pub fn uniform(channels: usize, c2: f64, c1: f64, c0: f64) -> Self {
        FoldedQuadratic {
            c2: vec![c2; channels],
            c1: vec![c1; channels],
            c0: vec![c0; channels],
        }
    }
}

/// Expand a degree-2 basis-wise HerPN into a quadratic per channel.
pub fn fold_to_quadratic(params: &HerPNParams) -> Result<FoldedQuadratic, HerpnError> {
    if params.degree != 2 || params.placement != Normalization::BasisWise {
        return Err(HerpnError::NotFoldable {
            degree: params.degree,
            placement: params.placement,
        });
    }
    if params.mode != Mode::Infer {
        return Err(HerpnError::WrongMode(params.mode));
    }
    if !params.populated {
        return Err(HerpnError::Unpopulated);
    }
    let f = &params.coeffs;
    let r2 = std::f64::consts::SQRT_2;
    let mut q = FoldedQuadratic {
        c2: Vec::with_capacity(params.channels),
        c1: Vec::with_capacity(params.channels),
        c0: Vec::with_capacity(params.channels),
    };
    for c in 0..params.channels {
        let mu = |i| params.stat(&params.running_mean, i, c);
        let s = |i| (params.stat(&params.running_var, i, c) + params.eps).sqrt();
        let g = params.gamma[c];
        q.c2.push(g * f[2] / (r2 * s(2)));
        q.c1.push(g * f[1] / s(1));
        q.c0.push(
            params.beta[c]
                + g * (f[0] * (1.0 - mu(0)) / s(0) - f[1] * mu(1) / s(1)
                    - f[2] * (1.0 / r2 + mu(2)) / s(2)),
        );
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::relu_hermite_coeff;

    fn identity_stats(channels: usize) -> HerPNParams {
        let mut p = HerPNParams::new(channels);
        p.eps = 0.0;
        let k = p.stat_count() * channels;
        p.set_stats(vec![0.0; k], vec![1.0; k]);
        p
    }

    #[test]
    fn raw_expansion_at_identity_stats() {
        let p = identity_stats(1);
        let x = Tensor::new(vec![3, 1], vec![0.0, 1.0, -1.0]).unwrap();
        let y = herpn_forward_infer(&x, &p).unwrap();
        let f0 = relu_hermite_coeff(0);
        let f2 = relu_hermite_coeff(2);
        assert!((y.data()[0] - (f0 - f2 / 2f64.sqrt())).abs() < 1e-12);
        assert!((y.data()[0] - 0.199471).abs() < 1e-6);
        assert!((y.data()[1] - 0.898942).abs() < 1e-6);
        assert!((y.data()[2] + 0.101058).abs() < 1e-6);
    }

    #[test]
    fn unpopulated_and_mode_errors() {
        let p = HerPNParams::new(2);
        let x = Tensor::zeros(&[2, 2]);
        assert_eq!(herpn_forward_infer(&x, &p), Err(HerpnError::Unpopulated));
        let mut p = identity_stats(2);
        p.mode = Mode::Train;
        assert_eq!(
            herpn_forward_infer(&x, &p),
            Err(HerpnError::WrongMode(Mode::Train))
        );
        let one = Tensor::zeros(&[1, 2]);
        assert_eq!(
            herpn_forward_train(&one, &mut p).unwrap_err(),
            HerpnError::BatchTooSmall(1)
        );
    }

    #[test]
    fn fold_identity_stats() {
        let p = identity_stats(1);
        let q = fold_to_quadratic(&p).unwrap();
        let f2 = relu_hermite_coeff(2);
        assert!((q.c2[0] - f2 / 2f64.sqrt()).abs() < 1e-15);
        assert!((q.c2[0] - 0.199471).abs() < 1e-6);
        assert_eq!(q.c1[0], 0.5);
        assert!((q.c0[0] - 0.199471).abs() < 1e-6);
    }

    #[test]
    fn fold_collapses_with_zero_gamma() {
        let mut p = identity_stats(3);
        p.gamma = vec![0.0; 3];
        p.beta = vec![0.25, -1.0, 2.0];
        let q = fold_to_quadratic(&p).unwrap();
        assert_eq!(q.c2, vec![0.0; 3]);
        assert_eq!(q.c1, vec![0.0; 3]);
        assert_eq!(q.c0, p.beta);
    }

    #[test]
    fn fold_rejects_other_degrees() {
        let mut p = HerPNParams::with_degree(1, 3, Normalization::BasisWise).unwrap();
        p.populated = true;
        assert!(matches!(
            fold_to_quadratic(&p),
            Err(HerpnError::NotFoldable { degree: 3, .. })
        ));
    }

    #[test]
    fn constant_basis_contributes_nothing() {
        // With beta = 0, gamma = 1 the output has zero mean per channel.
        let mut p = HerPNParams::new(1);
        p.mode = Mode::Train;
        let x = Tensor::new(vec![4, 1], vec![0.3, -1.2, 2.0, 0.1]).unwrap();
        let (y, _) = herpn_forward_train(&x, &mut p).unwrap();
        let mean: f64 = y.data().iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert_eq!(p.running_mean[0], 1.0);
    }

    #[test]
    fn two_point_batch_basis_one_term() {
        // h_1 values {-1, 1}: zero mean, unit population variance.
        let mut p = HerPNParams::with_degree(1, 1, Normalization::BasisWise).unwrap();
        p.mode = Mode::Train;
        let x = Tensor::new(vec![2, 1], vec![-1.0, 1.0]).unwrap();
        let (y, _) = herpn_forward_train(&x, &mut p).unwrap();
        let expect = 0.5 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[1] - expect).abs() < 1e-12);
        assert!((y.data()[1] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut p = HerPNParams::new(2);
        p.mode = Mode::Train;
        let x = Tensor::new(vec![3, 2], vec![0.1, 0.5, -0.7, 1.1, 0.9, -0.2]).unwrap();
        let (_, cache) = herpn_forward_train(&x, &mut p).unwrap();
        let g = herpn_backward(&Tensor::zeros(&[3, 2]), &cache, &p).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert_eq!(g.gamma, vec![0.0, 0.0]);
        assert_eq!(g.beta, vec![0.0, 0.0]);
    }

    #[test]
    fn beta_grad_is_upstream_sum() {
        let mut p = HerPNParams::new(2);
        p.mode = Mode::Train;
        let x = Tensor::new(vec![2, 2, 2], (0..8).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        let up = Tensor::new(vec![2, 2, 2], (0..8).map(|i| (i % 3) as f64 - 0.5).collect()).unwrap();
        let (_, cache) = herpn_forward_train(&x, &mut p).unwrap();
        let g = herpn_backward(&up, &cache, &p).unwrap();
        let d = up.data();
        assert!((g.beta[0] - (d[0] + d[1] + d[4] + d[5])).abs() < 1e-12);
        assert!((g.beta[1] - (d[2] + d[3] + d[6] + d[7])).abs() < 1e-12);
    }
}
