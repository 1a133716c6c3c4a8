//! Gauss quadrature rules for the standard Gaussian measure.
//!
//! Nodes and weights come from the Golub-Welsch eigenvalue method applied to
//! the three-term recurrence of the measure. The full-line rule uses the
//! monic Hermite recurrence directly; the half-line rule derives its
//! recurrence from closed-form moments with the Chebyshev algorithm.
//! Both are independent of the Hermite evaluators in [`crate::hermite`].

use nalgebra::{DMatrix, SymmetricEigen};
use std::f64::consts::PI;

/// An `n`-point rule: `sum(w_i * g(x_i))` approximates `integral g dmu`.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn integrate<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * g(x))
            .sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn golub_welsch(alpha: &[f64], beta: &[f64], mass: f64) -> GaussRule {
    let n = alpha.len();
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        jac[(i, i)] = alpha[i];
        if i + 1 < n {
            let off = beta[i + 1].sqrt();
            jac[(i, i + 1)] = off;
            jac[(i + 1, i)] = off;
        }
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], mass * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    GaussRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// `n`-point Gauss-Hermite rule for `N(0, 1)` (weights sum to 1).
pub fn gauss_hermite(n: usize) -> GaussRule {
    let alpha = vec![0.0; n];
    // Monic probabilists' recurrence: p_{k+1} = x p_k - k p_{k-1}.
    let beta: Vec<f64> = (0..n).map(|k| k as f64).collect();
    golub_welsch(&alpha, &beta, 1.0)
}

/// `int_0^inf x^k phi(x) dx` with `phi` the standard normal density.
fn half_moment(k: usize) -> f64 {
    let kf = k as f64;
    2f64.powf((kf - 1.0) / 2.0) * gamma_half_integer(k + 1) / (2.0 * PI).sqrt()
}

/// `Gamma(m / 2)` for positive integer `m`.
fn gamma_half_integer(m: usize) -> f64 {
    assert!(m > 0);
    // Gamma(1/2) = sqrt(pi), Gamma(1) = 1, Gamma(z + 1) = z Gamma(z).
    let (mut z, mut g) = if m.is_multiple_of(2) { (1.0, 1.0) } else { (0.5, PI.sqrt()) };
    let target = m as f64 / 2.0;
    while z < target {
        g *= z;
        z += 1.0;
    }
    g
}

/// `n`-point Gauss rule for `phi(x) dx` restricted to `[0, inf)`
/// (weights sum to 1/2). Exact for polynomials of degree `< 2n`.
///
/// Built from moments, so keep `n` modest (`n <= 12` is well conditioned).
pub fn half_gauss_hermite(n: usize) -> GaussRule {
    let m: Vec<f64> = (0..2 * n).map(half_moment).collect();
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    alpha[0] = m[1] / m[0];
    beta[0] = m[0];
    let mut sig_prev = vec![0.0; 2 * n];
    let mut sig = m.clone();
    for k in 1..n {
        let mut next = vec![0.0; 2 * n];
        for l in k..(2 * n - k) {
            next[l] = sig[l + 1] - alpha[k - 1] * sig[l] - beta[k - 1] * sig_prev[l];
        }
        alpha[k] = next[k + 1] / next[k] - sig[k] / sig[k - 1];
        beta[k] = next[k] / sig[k - 1];
        sig_prev = sig;
        sig = next;
    }
    golub_welsch(&alpha, &beta, beta[0])
}

/// `E[g(X)]` for `X ~ N(0,1)` when `g` is a polynomial on each half-line
/// (kinks at 0 allowed), using two mirrored half-line rules.
pub fn piecewise_gaussian_expectation<F: Fn(f64) -> f64>(g: F, points: usize) -> f64 {
    let rule = half_gauss_hermite(points);
    rule.integrate(&g) + rule.integrate(|x| g(-x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_moments() {
        let rule = gauss_hermite(128);
        assert!((rule.integrate(|_| 1.0) - 1.0).abs() < 1e-12);
        assert!(rule.integrate(|x| x).abs() < 1e-12);
        assert!((rule.integrate(|x| x * x) - 1.0).abs() < 1e-10);
        assert!((rule.integrate(|x| x.powi(4)) - 3.0).abs() < 1e-9);
        assert!((rule.integrate(|x| x.powi(6)) - 15.0).abs() < 1e-8);
    }

    #[test]
    fn half_line_moments() {
        let rule = half_gauss_hermite(10);
        assert!((rule.integrate(|_| 1.0) - 0.5).abs() < 1e-14);
        let phi0 = 1.0 / (2.0 * PI).sqrt();
        assert!((rule.integrate(|x| x) - phi0).abs() < 1e-14);
        assert!((rule.integrate(|x| x * x) - 0.5).abs() < 1e-13);
        assert!((rule.integrate(|x| x.powi(3)) - 2.0 * phi0).abs() < 1e-13);
        assert!(rule.nodes.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn gamma_values() {
        assert!((gamma_half_integer(1) - PI.sqrt()).abs() < 1e-15);
        assert_eq!(gamma_half_integer(2), 1.0);
        assert_eq!(gamma_half_integer(6), 2.0);
        assert!((gamma_half_integer(5) - 0.75 * PI.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn relu_second_moment() {
        let e = piecewise_gaussian_expectation(|x| x.max(0.0).powi(2), 8);
        assert!((e - 0.5).abs() < 1e-14);
    }
}
