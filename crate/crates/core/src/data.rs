//! Toy targets on `T^2`, a synthetic spherical dataset, and train/validation splits.
//!
//! Toy samplers draw in `[-4, 4]^2` and map into the unit torus by
//! `x -> (x + 4) / 8`. Shape constants:
//!
//! | shape        | parameters                                                    |
//! |--------------|---------------------------------------------------------------|
//! | checkerboard | 4x4 cells of side 2, cells with even `i + j` filled            |
//! | two_spirals  | radius `3.5 t / 3π`, `t = 3π sqrt(u)`, uniform noise ±0.2      |
//! | four_circles | centers `(±2, ±2)`, radius 1, ring half-width 0.1             |
//! | spin_wheel   | 5 arms, radial σ 0.3, tangential σ 0.05, twist 0.25, scale 2  |

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::manifold::{latlon_to_sphere, Manifold, Point};
use crate::math;
use crate::rng::stream_rng;
use crate::vmf::{VmfMixture, VonMisesFisher};

pub const SPIRAL_NOISE: f64 = 0.2;
pub const CIRCLE_CENTERS: [[f64; 2]; 4] = [[2.0, 2.0], [-2.0, 2.0], [-2.0, -2.0], [2.0, -2.0]];
pub const CIRCLE_RADIUS: f64 = 1.0;
pub const CIRCLE_HALF_WIDTH: f64 = 0.1;
pub const WHEEL_ARMS: usize = 5;

/// Points on a manifold with a train/validation partition.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    pub name: String,
    pub manifold: Manifold,
    pub points: Vec<Point>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl Dataset {
    /// Canonicalizes every point; the whole set is the training split.
    pub fn new(name: impl Into<String>, manifold: Manifold, mut points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for p in points.iter_mut() {
            manifold.check_dim(p)?;
            manifold.canonicalize(p);
        }
        let train = (0..points.len()).collect();
        Ok(Dataset { name: name.into(), manifold, points, train, val: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Seeded shuffle, then the last `round(n * val_fraction)` indices become validation.
    pub fn split(mut self, val_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::InvalidArgument(format!("validation fraction {val_fraction} not in [0, 1)")));
        }
        let n = self.points.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut stream_rng(seed, 0x73706c74));
        let n_val = math::round(n as f64 * val_fraction) as usize;
        self.val = idx.split_off(n - n_val);
        self.train = idx;
        Ok(self)
    }

    pub fn train_points(&self) -> Vec<Point> {
        self.train.iter().map(|&i| self.points[i].clone()).collect()
    }

    pub fn val_points(&self) -> Vec<Point> {
        self.val.iter().map(|&i| self.points[i].clone()).collect()
    }
}

/// Named 2-D toy distributions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Toy {
    Checkerboard,
    TwoSpirals,
    FourCircles,
    SpinWheel,
}

impl Toy {
    pub const ALL: [Toy; 4] = [Toy::Checkerboard, Toy::TwoSpirals, Toy::FourCircles, Toy::SpinWheel];

    pub fn as_str(&self) -> &'static str {
        match self {
            Toy::Checkerboard => "checkerboard",
            Toy::TwoSpirals => "two_spirals",
            Toy::FourCircles => "four_circles",
            Toy::SpinWheel => "spin_wheel",
        }
    }
}

impl FromStr for Toy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Toy::ALL.into_iter().find(|t| t.as_str() == s).ok_or_else(|| Error::UnknownToy(s.to_string()))
    }
}

impl core::fmt::Display for Toy {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `x -> (x + 4) / 8`, wrapped.
pub fn to_unit_square(x: f64, y: f64) -> Point {
    let mut p = Point::new(&[(x + 4.0) / 8.0, (y + 4.0) / 8.0]);
    Manifold::torus(2).canonicalize(&mut p);
    p
}

/// `n` samples of a toy distribution on `T^2`, all in the training split.
pub fn gen_toy(toy: Toy, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument(String::from("toy sample count must be positive")));
    }
    let mut rng = stream_rng(seed, 0x746f79);
    let mut points = Vec::with_capacity(n);
    match toy {
        Toy::Checkerboard => {
            for _ in 0..n {
                let cell = rng.random_range(0..8usize);
                let i = cell / 2;
                let j = 2 * (cell % 2) + (i % 2);
                let x = -4.0 + 2.0 * (i as f64 + rng.random::<f64>());
                let y = -4.0 + 2.0 * (j as f64 + rng.random::<f64>());
                points.push(to_unit_square(x, y));
            }
        }
        Toy::TwoSpirals => {
            for k in 0..n {
                let t = 3.0 * math::PI * math::sqrt(rng.random::<f64>());
                let r = 3.5 * t / (3.0 * math::PI);
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                let x = sign * r * math::cos(t) + SPIRAL_NOISE * (2.0 * rng.random::<f64>() - 1.0);
                let y = sign * r * math::sin(t) + SPIRAL_NOISE * (2.0 * rng.random::<f64>() - 1.0);
                points.push(to_unit_square(x, y));
            }
        }
        Toy::FourCircles => {
            for _ in 0..n {
                let c = CIRCLE_CENTERS[rng.random_range(0..4usize)];
                let r = CIRCLE_RADIUS + CIRCLE_HALF_WIDTH * (2.0 * rng.random::<f64>() - 1.0);
                let th = math::TAU * rng.random::<f64>();
                points.push(to_unit_square(c[0] + r * math::cos(th), c[1] + r * math::sin(th)));
            }
        }
        Toy::SpinWheel => {
            while points.len() < n {
                let arm = rng.random_range(0..WHEEL_ARMS);
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                let (u, v) = (1.0 + 0.3 * a, 0.05 * b);
                let angle = math::TAU * arm as f64 / WHEEL_ARMS as f64 + 0.25 * math::exp(u);
                let (c, s) = (math::cos(angle), math::sin(angle));
                let (x, y) = (2.0 * (c * u - s * v), 2.0 * (s * u + c * v));
                if x.abs() < 4.0 && y.abs() < 4.0 {
                    points.push(to_unit_square(x, y));
                }
            }
        }
    }
    Dataset::new(toy.as_str(), Manifold::torus(2), points)
}

/// 1 on the filled cells of the 4x4 checkerboard (the cell containing the origin corner is filled), else 0.
pub fn checkerboard_reward(s: &[f64]) -> f64 {
    let i = (crate::manifold::wrap_unit(s[0]) * 4.0) as usize;
    let j = (crate::manifold::wrap_unit(s[1]) * 4.0) as usize;
    if (i.min(3) + j.min(3)) % 2 == 0 {
        1.0
    } else {
        0.0
    }
}

/// Three-component vMF mixture standing in for clustered earth-science point sets.
pub fn volcano_like_mixture() -> VmfMixture {
    let comps = [((38.0, 15.0), 40.0), ((-8.0, 112.0), 25.0), ((46.0, -122.0), 60.0)];
    let components = comps
        .iter()
        .map(|&((lat, lon), kappa)| {
            let m = latlon_to_sphere(lat, lon).expect("constant coordinates are valid");
            VonMisesFisher::new([m[0], m[1], m[2]], kappa).expect("constant parameters are valid")
        })
        .collect();
    VmfMixture::new(components, alloc::vec![0.5, 0.3, 0.2]).expect("constant weights are valid")
}

/// `n` draws from [`volcano_like_mixture`] on `S^2`.
pub fn gen_volcano_like(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument(String::from("sample count must be positive")));
    }
    let mix = volcano_like_mixture();
    let mut rng = stream_rng(seed, 0x766d66);
    let points = (0..n).map(|_| mix.sample(&mut rng)).collect();
    Dataset::new("volcano_like", Manifold::sphere(2), points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkerboard_reward_examples() {
        assert_eq!(checkerboard_reward(&[0.1, 0.1]), 1.0);
        assert_eq!(checkerboard_reward(&[0.1, 0.3]), 0.0);
        for s in [[0.1, 0.3], [0.3, 0.3], [0.77, 0.02]] {
            assert_eq!(checkerboard_reward(&s), checkerboard_reward(&[s[0] + 0.5, s[1] + 0.5]));
        }
    }

    #[test]
    fn toys_are_deterministic_and_in_domain() {
        for toy in Toy::ALL {
            let a = gen_toy(toy, 2000, 9).unwrap();
            assert_eq!(a, gen_toy(toy, 2000, 9).unwrap());
            assert_ne!(a.points, gen_toy(toy, 2000, 10).unwrap().points);
            assert_eq!(a.len(), 2000);
            assert!(a.points.iter().all(|p| p.iter().all(|&x| (0.0..1.0).contains(&x))));
        }
        assert!(matches!("moons".parse::<Toy>(), Err(Error::UnknownToy(_))));
    }

    #[test]
    fn checkerboard_samples_are_on_filled_cells() {
        let d = gen_toy(Toy::Checkerboard, 10_000, 1).unwrap();
        assert!(d.points.iter().all(|p| checkerboard_reward(p) == 1.0));
    }

    #[test]
    fn spirals_split_evenly() {
        for n in [1, 2, 7, 1000] {
            let d = gen_toy(Toy::TwoSpirals, n, 3).unwrap();
            assert_eq!(d.len(), n);
            let first = n.div_ceil(2);
            assert!((first as i64 - (n - first) as i64).abs() <= 1);
        }
    }

    #[test]
    fn circles_stay_in_rings() {
        let d = gen_toy(Toy::FourCircles, 5000, 2).unwrap();
        for p in &d.points {
            let (x, y) = (p[0] * 8.0 - 4.0, p[1] * 8.0 - 4.0);
            let dist = CIRCLE_CENTERS
                .iter()
                .map(|c| math::sqrt((x - c[0]).powi(2) + (y - c[1]).powi(2)))
                .fold(f64::INFINITY, f64::min);
            assert!((dist - CIRCLE_RADIUS).abs() <= CIRCLE_HALF_WIDTH + 1e-9);
        }
    }

    #[test]
    fn split_partitions() {
        let d = gen_toy(Toy::FourCircles, 1000, 2).unwrap().split(0.1, 5).unwrap();
        assert_eq!((d.train.len(), d.val.len()), (900, 100));
        let mut all: Vec<usize> = d.train.iter().chain(&d.val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
    }
}
