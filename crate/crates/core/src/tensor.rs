//! Dense row-major tensors of `f64`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("data length {len} does not match shape {shape:?}")]
    Length { len: usize, shape: Vec<usize> },
    #[error("expected shape {expected:?}, got {got:?}")]
    Mismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, ShapeError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(ShapeError::Length {
                len: data.len(),
                shape,
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, ShapeError> {
        Tensor::new(shape, self.data)
    }

    /// Prepend a unit batch axis.
    pub fn batched(self) -> Self {
        let mut shape = vec![1];
        shape.extend(&self.shape);
        Tensor {
            shape,
            data: self.data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Sample `i` of a batched tensor, without the batch axis.
    pub fn sample(&self, i: usize) -> Tensor {
        let inner: usize = self.shape[1..].iter().product();
        Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[i * inner..(i + 1) * inner].to_vec(),
        }
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor, ShapeError> {
        let Some(first) = items.first() else {
            return Err(ShapeError::Invalid("cannot stack zero tensors".into()));
        };
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(ShapeError::Mismatch {
                    expected: first.shape.clone(),
                    got: t.shape.clone(),
                });
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend(&first.shape);
        Ok(Tensor { shape, data })
    }
}

/// Channel layout of a batched tensor `[N, C, ...]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelLayout {
    pub batch: usize,
    pub channels: usize,
    pub inner: usize,
}

impl ChannelLayout {
    pub fn of(shape: &[usize]) -> Result<Self, ShapeError> {
        if shape.len() < 2 {
            return Err(ShapeError::Invalid(format!(
                "expected [batch, channel, ...], got {shape:?}"
            )));
        }
        Ok(ChannelLayout {
            batch: shape[0],
            channels: shape[1],
            inner: shape[2..].iter().product(),
        })
    }

    pub fn channel_of(&self, flat: usize) -> usize {
        (flat / self.inner) % self.channels
    }

    /// Elements per channel across the batch.
    pub fn group_size(&self) -> usize {
        self.batch * self.inner
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(t.sample(1).data(), &[3.0, 4.0, 5.0]);
        let l = ChannelLayout::of(&[2, 3, 2, 2]).unwrap();
        assert_eq!(l.channel_of(5), 1);
        assert_eq!(l.channel_of(12), 0);
        assert_eq!(l.group_size(), 8);
        let s = Tensor::stack(&[t.sample(0), t.sample(1)]).unwrap();
        assert_eq!(s, t);
    }
}
