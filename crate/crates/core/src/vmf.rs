//! Von Mises–Fisher distributions on `S^2`.
//!
//! Densities are with respect to the normalized area measure, so the uniform
//! distribution has density 1.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::manifold::Point;
use crate::math;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VonMisesFisher {
    /// Unit mean direction in `R^3`.
    pub mean: [f64; 3],
    /// Concentration `κ ≥ 0`.
    pub kappa: f64,
}

impl VonMisesFisher {
    pub fn new(mean: [f64; 3], kappa: f64) -> Result<Self> {
        let n = math::sqrt(mean.iter().map(|x| x * x).sum());
        if !(n > 0.0) || !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidArgument(alloc::format!("vMF needs a nonzero mean and finite κ ≥ 0, got κ = {kappa}")));
        }
        Ok(VonMisesFisher { mean: [mean[0] / n, mean[1] / n, mean[2] / n], kappa })
    }

    /// `log f(x)` with `f = 2κ e^{κ(μ·x - 1)} / (1 - e^{-2κ})`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let dot = self.mean[0] * x[0] + self.mean[1] * x[1] + self.mean[2] * x[2];
        if self.kappa < 1e-10 {
            return 0.0;
        }
        math::ln(2.0 * self.kappa) + self.kappa * (dot - 1.0) - math::ln(-math::exp_m1(-2.0 * self.kappa))
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        math::exp(self.log_density(x))
    }

    /// Wood's rejection-free sampler specialised to `S^2`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let u: f64 = rng.random();
        let w = if self.kappa < 1e-10 {
            2.0 * u - 1.0
        } else {
            // inverse CDF of the cosine to the mean: w = 1 + log(u + (1-u) e^{-2κ}) / κ
            (1.0 + math::ln(u + (1.0 - u) * math::exp(-2.0 * self.kappa)) / self.kappa).clamp(-1.0, 1.0)
        };
        let (e1, e2) = orthonormal_complement(&self.mean);
        let (a, b): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
        let r = math::sqrt(a * a + b * b).max(1e-300);
        let s = math::sqrt((1.0 - w * w).max(0.0));
        let mut p = Point::zeros(3);
        for k in 0..3 {
            p[k] = w * self.mean[k] + s * (a / r * e1[k] + b / r * e2[k]);
        }
        crate::manifold::Manifold::sphere(2).canonicalize(&mut p);
        p
    }

    /// Maximum-likelihood fit: `μ = Σx / |Σx|`, `κ` solving `coth κ - 1/κ = R̄`.
    pub fn fit(points: &[Point]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut sum = [0.0; 3];
        for p in points {
            for k in 0..3 {
                sum[k] += p[k];
            }
        }
        let norm = math::sqrt(sum.iter().map(|x| x * x).sum());
        let r_bar = (norm / points.len() as f64).min(1.0 - 1e-12);
        if norm == 0.0 {
            return VonMisesFisher::new([0.0, 0.0, 1.0], 0.0);
        }
        let kappa = solve_kappa(r_bar);
        VonMisesFisher::new(sum, kappa)
    }
}

/// Mean resultant length `A(κ) = coth κ - 1/κ`.
fn mean_resultant(kappa: f64) -> f64 {
    if kappa < 1e-4 {
        return kappa / 3.0;
    }
    let coth = if kappa > 20.0 { 1.0 } else { 1.0 / math::tanh(kappa) };
    coth - 1.0 / kappa
}

fn solve_kappa(r_bar: f64) -> f64 {
    if r_bar < 1e-8 {
        return 0.0;
    }
    // A is increasing from 0 to 1; bisection on a bracket then a few Newton polishes.
    let (mut lo, mut hi) = (0.0, 1.0);
    while mean_resultant(hi) < r_bar {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_resultant(mid) < r_bar {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn orthonormal_complement(mu: &[f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if mu[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let dot = helper[0] * mu[0] + helper[1] * mu[1] + helper[2] * mu[2];
    let mut e1 = [helper[0] - dot * mu[0], helper[1] - dot * mu[1], helper[2] - dot * mu[2]];
    let n = math::sqrt(e1.iter().map(|x| x * x).sum());
    for x in e1.iter_mut() {
        *x /= n;
    }
    let e2 = [
        mu[1] * e1[2] - mu[2] * e1[1],
        mu[2] * e1[0] - mu[0] * e1[2],
        mu[0] * e1[1] - mu[1] * e1[0],
    ];
    (e1, e2)
}

/// Finite mixture of vMF components.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VmfMixture {
    pub components: Vec<VonMisesFisher>,
    pub weights: Vec<f64>,
}

impl VmfMixture {
    pub fn new(components: Vec<VonMisesFisher>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if components.is_empty() || components.len() != weights.len() || !(total > 0.0) || weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidArgument(alloc::string::String::from(
                "mixture needs matching nonempty components and nonnegative weights",
            )));
        }
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(VmfMixture { components, weights })
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.components.iter().zip(&self.weights).map(|(c, w)| w * c.density(x)).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (c, w) in self.components.iter().zip(&self.weights) {
            acc += w;
            if u < acc {
                return c.sample(rng);
            }
        }
        self.components.last().unwrap().sample(rng)
    }
}
