//! Normalized probabilists' Hermite polynomials and the Hermite coefficients
//! of ReLU under the standard Gaussian measure.

use std::f64::consts::PI;
use thiserror::Error;

/// Highest degree the evaluators accept.
pub const MAX_DEGREE: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HermiteError {
    #[error("Hermite degree {0} outside supported range 0..={MAX_DEGREE}")]
    DegreeOutOfRange(usize),
}

/// `He_n(x)` via `He_{n+1} = x He_n - n He_{n-1}`.
fn he(n: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `h_n(x) = He_n(x) / sqrt(n!)`.
pub fn hermite_h(n: usize, x: f64) -> Result<f64, HermiteError> {
    if n > MAX_DEGREE {
        return Err(HermiteError::DegreeOutOfRange(n));
    }
    Ok(he(n, x) / factorial(n).sqrt())
}

/// Evaluates `h_0..=h_d` together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HermiteBasis {
    degree: usize,
}

impl HermiteBasis {
    pub fn new(degree: usize) -> Result<Self, HermiteError> {
        if degree > MAX_DEGREE {
            return Err(HermiteError::DegreeOutOfRange(degree));
        }
        Ok(HermiteBasis { degree })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.degree + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Writes `h_i(x)` into `out[i]`; `out` must hold `degree + 1` values.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let mut prev = 1.0;
        let mut cur = x;
        out[0] = 1.0;
        if self.degree >= 1 {
            out[1] = x;
        }
        for k in 1..self.degree {
            let next = x * cur - k as f64 * prev;
            prev = cur;
            cur = next;
            out[k + 1] = cur;
        }
        let mut fact = 1.0;
        for (i, v) in out.iter_mut().enumerate().take(self.degree + 1).skip(1) {
            fact *= i as f64;
            *v /= fact.sqrt();
        }
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, &mut out);
        out
    }

    /// `d h_i / dx = sqrt(i) h_{i-1}`, given the values from [`Self::eval`].
    pub fn derivative(values: &[f64], i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            (i as f64).sqrt() * values[i - 1]
        }
    }
}

fn double_factorial(n: i64) -> f64 {
    // (-1)!! = 0!! = 1
    let mut acc = 1.0;
    let mut k = n;
    while k > 1 {
        acc *= k as f64;
        k -= 2;
    }
    acc
}

/// `n`-th Hermite coefficient `<ReLU, h_n>` under the standard Gaussian:
/// `1/sqrt(2pi)` for n = 0, `1/2` for n = 1, zero for odd n >= 3, and
/// `(-1)^(n/2+1) (n-3)!! / sqrt(2 pi n!)` for even n >= 2.
pub fn relu_hermite_coeff(n: usize) -> f64 {
    match n {
        0 => 1.0 / (2.0 * PI).sqrt(),
        1 => 0.5,
        n if n % 2 == 1 => 0.0,
        n => {
            let sign = if (n / 2) % 2 == 0 { -1.0 } else { 1.0 };
            sign * double_factorial(n as i64 - 3) / (2.0 * PI * factorial(n)).sqrt()
        }
    }
}

/// `[f_0, ..., f_d]` for ReLU.
pub fn relu_hermite_coeffs(degree: usize) -> Vec<f64> {
    (0..=degree).map(relu_hermite_coeff).collect()
}

/// `sum_{n > degree} f_n^2`, the mean squared error of the degree-`d`
/// truncated expansion against ReLU under N(0, 1). Summed to `terms` and
/// completed with the `n^(-5/2)` tail asymptote.
pub fn relu_expansion_tail(degree: usize, terms: usize) -> f64 {
    // For even n: f_{n+2}^2 / f_n^2 = (n-1)^2 / ((n+1)(n+2)).
    let mut n = if degree < 2 { 2 } else { degree + 1 + (degree + 1) % 2 };
    let mut sq = relu_hermite_coeff(n).powi(2);
    let mut total = if degree < 1 { 0.25 } else { 0.0 };
    let last = n + 2 * terms;
    while n < last {
        total += sq;
        let nf = n as f64;
        sq *= (nf - 1.0).powi(2) / ((nf + 1.0) * (nf + 2.0));
        n += 2;
    }
    // f_n^2 ~ C n^(-5/2) over even n: remaining sum ~ sq * n / 3.
    total + sq * n as f64 / 3.0
}
