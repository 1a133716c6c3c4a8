//! Two-class 2-D toy datasets.

use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

/// Spiral turns over the parameter range `t in [0, 1]`.
pub const SPIRAL_TURNS: f64 = 1.75;
/// Outer spiral radius.
pub const SPIRAL_RADIUS: f64 = 3.0;
/// Blob centres sit at `(+-BLOB_OFFSET, 0)`.
pub const BLOB_OFFSET: f64 = 2.5;
pub const RING_RADII: [f64; 2] = [1.0, 2.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    TwoSpirals,
    GaussianBlobs,
    Rings,
}

impl Generator {
    pub const ALL: [Generator; 3] = [
        Generator::TwoSpirals,
        Generator::GaussianBlobs,
        Generator::Rings,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Generator::TwoSpirals => "two-spirals",
            Generator::GaussianBlobs => "gaussian-blobs",
            Generator::Rings => "rings",
        }
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Generator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Generator::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| format!("unknown dataset {s:?} (two-spirals, gaussian-blobs, rings)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyDataset {
    pub generator: Generator,
    pub n_train: usize,
    pub n_test: usize,
    /// Standard deviation of the Gaussian noise added to each point
    /// (for blobs, the cluster spread).
    pub noise: f64,
    pub seed: u64,
}

impl ToyDataset {
    pub fn new(generator: Generator, n_train: usize, n_test: usize, noise: f64, seed: u64) -> Self {
        ToyDataset {
            generator,
            n_train,
            n_test,
            noise,
            seed,
        }
    }

    /// The default ablation dataset: 512 + 512 spiral points, noise 0.1.
    pub fn spirals(seed: u64) -> Self {
        ToyDataset::new(Generator::TwoSpirals, 512, 512, 0.1, seed)
    }
}

/// Points `[n, 2]` with labels in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub x: Tensor,
    pub y: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn point(&self, i: usize) -> [f64; 2] {
        let d = self.x.data();
        [d[2 * i], d[2 * i + 1]]
    }

    /// Rows `idx` as a batch.
    pub fn gather(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let mut data = Vec::with_capacity(2 * idx.len());
        for &i in idx {
            data.extend_from_slice(&self.point(i));
        }
        let x = Tensor::new(vec![idx.len(), 2], data).expect("two columns per row");
        (x, idx.iter().map(|&i| self.y[i]).collect())
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        self.y.iter().for_each(|&y| c[y] += 1);
        c
    }
}

/// Noise-free point of class `class` at parameter `t in [0, 1]`.
pub fn spiral_point(class: usize, t: f64) -> [f64; 2] {
    let r = SPIRAL_RADIUS * t;
    let theta = 2.0 * PI * SPIRAL_TURNS * t + PI * class as f64;
    [r * theta.cos(), r * theta.sin()]
}

/// Deterministic train/test split.
///
/// Every class gets `n_train + n_test` distinct positions (stratified
/// parameters for the spirals and rings, independent draws for the blobs);
/// a seeded permutation assigns each position to exactly one split, so the
/// splits never share a sample. Classes alternate, keeping counts within one.
pub fn make_dataset(spec: &ToyDataset) -> (Split, Split) {
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("finite noise");
    let counts = |n: usize| [n.div_ceil(2), n / 2];
    let (tr, te) = (counts(spec.n_train), counts(spec.n_test));

    let mut per_class: Vec<Vec<[f64; 2]>> = Vec::with_capacity(2);
    for class in 0..2 {
        let m = tr[class] + te[class];
        let mut pts: Vec<[f64; 2]> = (0..m)
            .map(|j| {
                let u: f64 = rng.random();
                let t = (j as f64 + u) / m as f64;
                let mut jitter = || if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                match spec.generator {
                    Generator::TwoSpirals => {
                        let [a, b] = spiral_point(class, t);
                        [a + jitter(), b + jitter()]
                    }
                    Generator::Rings => {
                        let r = RING_RADII[class] + jitter();
                        let th = 2.0 * PI * t;
                        [r * th.cos(), r * th.sin()]
                    }
                    Generator::GaussianBlobs => {
                        let sign = if class == 0 { -1.0 } else { 1.0 };
                        [sign * BLOB_OFFSET + jitter(), jitter()]
                    }
                }
            })
            .collect();
        pts.shuffle(&mut rng);
        per_class.push(pts);
    }

    let build = |n: usize, take: [usize; 2], skip: [usize; 2]| {
        let mut data = Vec::with_capacity(2 * n);
        let mut y = Vec::with_capacity(n);
        let mut next = skip;
        for i in 0..n {
            let mut c = i % 2;
            if next[c] - skip[c] >= take[c] {
                c = 1 - c;
            }
            data.extend_from_slice(&per_class[c][next[c]]);
            y.push(c);
            next[c] += 1;
        }
        Split {
            x: Tensor::new(vec![n, 2], data).expect("two columns per row"),
            y,
        }
    };
    (build(spec.n_train, tr, [0, 0]), build(spec.n_test, te, tr))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_spirals_lie_on_the_curves() {
        let spec = ToyDataset::new(Generator::TwoSpirals, 101, 40, 0.0, 3);
        let (train, test) = make_dataset(&spec);
        for s in [&train, &test] {
            for i in 0..s.len() {
                let [x, y] = s.point(i);
                let r = x.hypot(y);
                let t = r / SPIRAL_RADIUS;
                let [ex, ey] = spiral_point(s.y[i], t);
                assert!((ex - x).abs() < 1e-9 && (ey - y).abs() < 1e-9, "{i}: ({x}, {y})");
            }
        }
    }

    #[test]
    fn balanced_deterministic_disjoint() {
        for g in Generator::ALL {
            let spec = ToyDataset::new(g, 75, 31, 0.2, 9);
            let (a, b) = make_dataset(&spec);
            assert_eq!(make_dataset(&spec), (a.clone(), b.clone()));
            assert_eq!((a.len(), b.len()), (75, 31));
            for s in [&a, &b] {
                let [c0, c1] = s.class_counts();
                assert!(c0.abs_diff(c1) <= 1, "{g}: {c0} vs {c1}");
            }
            for i in 0..a.len() {
                for j in 0..b.len() {
                    assert_ne!(a.point(i), b.point(j), "{g}");
                }
            }
        }
    }

    #[test]
    fn seeds_differ_and_names_parse() {
        let a = make_dataset(&ToyDataset::new(Generator::Rings, 20, 10, 0.1, 1));
        let b = make_dataset(&ToyDataset::new(Generator::Rings, 20, 10, 0.1, 2));
        assert_ne!(a, b);
        for g in Generator::ALL {
            assert_eq!(g.name().parse::<Generator>().unwrap(), g);
        }
        assert!("moons".parse::<Generator>().is_err());
    }
}
