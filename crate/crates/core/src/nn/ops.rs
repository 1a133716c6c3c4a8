//! Naive batched float kernels.

use crate::tensor::{ShapeError, Tensor};

pub fn conv_out_dim(n: usize, k: usize, stride: usize, pad: usize) -> Result<usize, ShapeError> {
    if stride == 0 || k == 0 || n + 2 * pad < k {
        return Err(ShapeError::Invalid(format!(
            "kernel {k} / stride {stride} / padding {pad} do not fit input size {n}"
        )));
    }
    Ok((n + 2 * pad - k) / stride + 1)
}

/// `x: [N, in]` to `[N, out]`; `w` is `[out, in]`.
pub fn linear(
    x: &Tensor,
    w: &[f64],
    b: &[f64],
    in_features: usize,
    out_features: usize,
) -> Result<Tensor, ShapeError> {
    let &[n, d] = x.shape() else {
        return Err(ShapeError::Invalid(format!(
            "Linear expects [N, {in_features}], got {:?}",
            x.shape()
        )));
    };
    if d != in_features {
        return Err(ShapeError::Mismatch {
            expected: vec![n, in_features],
            got: x.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; n * out_features];
    for s in 0..n {
        let xs = &x.data()[s * d..(s + 1) * d];
        for o in 0..out_features {
            let row = &w[o * d..(o + 1) * d];
            out[s * out_features + o] = b[o] + row.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Tensor::new(vec![n, out_features], out)
}

fn nchw(x: &Tensor) -> Result<[usize; 4], ShapeError> {
    match *x.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(ShapeError::Invalid(format!(
            "expected [N, C, H, W], got {:?}",
            x.shape()
        ))),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &Tensor,
    w: &[f64],
    b: &[f64],
    in_ch: usize,
    out_ch: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor, ShapeError> {
    let [n, c, h, wd] = nchw(x)?;
    if c != in_ch {
        return Err(ShapeError::Invalid(format!(
            "Conv2d expects {in_ch} channels, got {c}"
        )));
    }
    let oh = conv_out_dim(h, k, stride, pad)?;
    let ow = conv_out_dim(wd, k, stride, pad)?;
    let xd = x.data();
    let mut out = vec![0.0; n * out_ch * oh * ow];
    for s in 0..n {
        for o in 0..out_ch {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b[o];
                    for ci in 0..in_ch {
                        for di in 0..k {
                            let yi = (i * stride + di) as isize - pad as isize;
                            if yi < 0 || yi >= h as isize {
                                continue;
                            }
                            for dj in 0..k {
                                let xj = (j * stride + dj) as isize - pad as isize;
                                if xj < 0 || xj >= wd as isize {
                                    continue;
                                }
                                let xv = xd[((s * c + ci) * h + yi as usize) * wd + xj as usize];
                                acc += w[((o * in_ch + ci) * k + di) * k + dj] * xv;
                            }
                        }
                    }
                    out[((s * out_ch + o) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, out_ch, oh, ow], out)
}

fn pool(x: &Tensor, k: usize, reduce: impl Fn(&mut dyn Iterator<Item = f64>) -> f64) -> Result<Tensor, ShapeError> {
    let [n, c, h, w] = nchw(x)?;
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(ShapeError::Invalid(format!(
            "pool size {k} does not divide {h}x{w}"
        )));
    }
    let (oh, ow) = (h / k, w / k);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut it = (0..k)
                    .flat_map(|di| (0..k).map(move |dj| (di, dj)))
                    .map(|(di, dj)| xd[base + (i * k + di) * w + j * k + dj]);
                out.push(reduce(&mut it));
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub fn avg_pool(x: &Tensor, k: usize) -> Result<Tensor, ShapeError> {
    let area = (k * k) as f64;
    pool(x, k, |it| it.sum::<f64>() / area)
}

pub fn max_pool(x: &Tensor, k: usize) -> Result<Tensor, ShapeError> {
    pool(x, k, |it| it.fold(f64::NEG_INFINITY, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_against_hand_values() {
        // 1x1x3x3 input, one 2x2 kernel of ones, stride 1, no padding.
        let x = Tensor::new(vec![1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let y = conv2d(&x, &[1.0; 4], &[0.5], 1, 1, 2, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[12.5, 16.5, 24.5, 28.5]);
        // Padding 1 keeps the corner sum of the four nearest entries.
        let y = conv2d(&x, &[1.0; 4], &[0.0], 1, 1, 2, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert_eq!(y.data()[0], 1.0);
        assert_eq!(y.data()[5], 12.0);
    }

    #[test]
    fn pools() {
        let x = Tensor::new(vec![1, 1, 2, 4], vec![1.0, 2.0, 5.0, -1.0, 3.0, 4.0, 0.0, 0.0]).unwrap();
        assert_eq!(avg_pool(&x, 2).unwrap().data(), &[2.5, 1.0]);
        assert_eq!(max_pool(&x, 2).unwrap().data(), &[4.0, 5.0]);
        assert!(avg_pool(&x, 3).is_err());
    }
}
