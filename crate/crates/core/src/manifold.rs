//! State spaces: the flat torus `T^d` of side 1 and the round sphere `S^d`.
//!
//! Both carry their natural volume measure normalized to total mass 1, so a
//! uniform density is identically 1. Torus points are canonical
//! representatives in `[0, 1)^d`; sphere points are unit vectors in `R^{d+1}`
//! (never angles, to avoid pole singularities).

use core::ops::{Deref, DerefMut};

use rand::Rng;
use rand_distr::StandardNormal;
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::math;

/// Coordinates within this distance below 1.0 wrap to 0.0.
pub const WRAP_TOLERANCE: f64 = 1e-12;

/// A state: `d` coordinates on the torus, `d + 1` on the sphere.
#[derive(Clone, Debug, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Point(pub SmallVec<[f64; 4]>);

impl Point {
    pub fn new(coords: &[f64]) -> Self {
        Point(SmallVec::from_slice(coords))
    }

    pub fn zeros(len: usize) -> Self {
        Point(SmallVec::from_elem(0.0, len))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.0.iter().map(|x| x * x).sum())
    }
}

impl Deref for Point {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Point {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<&[f64]> for Point {
    fn from(c: &[f64]) -> Self {
        Point::new(c)
    }
}

impl<const N: usize> From<[f64; N]> for Point {
    fn from(c: [f64; N]) -> Self {
        Point::new(&c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase"))]
pub enum Manifold {
    Torus { dim: usize },
    Sphere { dim: usize },
}

impl Manifold {
    pub fn torus(dim: usize) -> Self {
        Manifold::Torus { dim }
    }

    pub fn sphere(dim: usize) -> Self {
        Manifold::Sphere { dim }
    }

    /// Intrinsic dimension `d`.
    pub fn dim(&self) -> usize {
        match *self {
            Manifold::Torus { dim } | Manifold::Sphere { dim } => dim,
        }
    }

    /// Number of stored coordinates: `d` for the torus, `d + 1` for the sphere.
    pub fn ambient_dim(&self) -> usize {
        match *self {
            Manifold::Torus { dim } => dim,
            Manifold::Sphere { dim } => dim + 1,
        }
    }

    pub fn is_torus(&self) -> bool {
        matches!(self, Manifold::Torus { .. })
    }

    pub fn check_dim(&self, p: &[f64]) -> Result<()> {
        if p.len() == self.ambient_dim() {
            Ok(())
        } else {
            Err(Error::DimMismatch { expected: self.ambient_dim(), got: p.len() })
        }
    }

    /// Canonical representative: mod-1 reduction on the torus, renormalization on the sphere.
    pub fn wrap(&self, raw: &[f64]) -> Result<Point> {
        self.check_dim(raw)?;
        let mut p = Point::new(raw);
        self.canonicalize(&mut p);
        Ok(p)
    }

    /// In-place canonicalization; the caller guarantees the dimension.
    #[inline]
    pub fn canonicalize(&self, p: &mut [f64]) {
        match self {
            Manifold::Torus { .. } => {
                for x in p.iter_mut() {
                    *x = wrap_unit(*x);
                }
            }
            Manifold::Sphere { .. } => {
                let n = math::sqrt(p.iter().map(|x| x * x).sum());
                if n > 0.0 {
                    for x in p.iter_mut() {
                        *x /= n;
                    }
                }
            }
        }
    }

    /// Membership test: torus points in `[0,1)^d`, sphere points of unit norm within 1e-12.
    pub fn contains(&self, p: &[f64]) -> bool {
        if p.len() != self.ambient_dim() {
            return false;
        }
        match self {
            Manifold::Torus { .. } => p.iter().all(|&x| (0.0..1.0).contains(&x)),
            Manifold::Sphere { .. } => {
                let n: f64 = p.iter().map(|x| x * x).sum();
                (math::sqrt(n) - 1.0).abs() <= 1e-12
            }
        }
    }

    /// One draw from the normalized volume measure.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let mut p = Point::zeros(self.ambient_dim());
        match self {
            Manifold::Torus { .. } => {
                for x in p.iter_mut() {
                    *x = rng.random::<f64>();
                }
            }
            Manifold::Sphere { .. } => loop {
                for x in p.iter_mut() {
                    *x = rng.sample(StandardNormal);
                }
                let n = p.norm();
                if n > 1e-300 {
                    for x in p.iter_mut() {
                        *x /= n;
                    }
                    break;
                }
            },
        }
        p
    }

    /// Unnormalized Riemannian volume: 1 for the unit torus, `|S^d|` for the sphere.
    pub fn volume(&self) -> f64 {
        match *self {
            Manifold::Torus { .. } => 1.0,
            Manifold::Sphere { dim } => sphere_area(dim),
        }
    }

    /// Log of [`Manifold::volume`]; the offset between normalized and volume-mode NLL.
    pub fn log_volume(&self) -> f64 {
        math::ln(self.volume())
    }
}

/// Mod-1 reduction into `[0, 1)`, clamping values within [`WRAP_TOLERANCE`] of 1 to 0.
#[inline]
pub fn wrap_unit(x: f64) -> f64 {
    let mut y = x - math::floor(x);
    if y >= 1.0 - WRAP_TOLERANCE {
        y = 0.0;
    }
    y
}

/// Surface area of the unit sphere `S^d` in `R^{d+1}`.
pub fn sphere_area(dim: usize) -> f64 {
    // |S^0| = 2, |S^1| = 2π, |S^d| = 2π/(d-1) |S^{d-2}|
    let mut area = if dim % 2 == 0 { 2.0 } else { math::TAU };
    let mut d = if dim % 2 == 0 { 0 } else { 1 };
    while d < dim {
        d += 2;
        area *= math::TAU / (d as f64 - 1.0);
    }
    area
}

/// `n` i.i.d. uniform draws, deterministic given `seed`.
pub fn uniform_sample(manifold: Manifold, n: usize, seed: u64) -> alloc::vec::Vec<Point> {
    let mut rng = crate::rng::stream_rng(seed, 0);
    (0..n).map(|_| manifold.sample_uniform(&mut rng)).collect()
}

/// Unit vector for a latitude/longitude pair given in degrees.
pub fn latlon_to_sphere(lat_deg: f64, lon_deg: f64) -> Result<Point> {
    if !(-90.0..=90.0).contains(&lat_deg) || !(-180.0..=180.0).contains(&lon_deg) {
        return Err(Error::BadLatLon { lat: lat_deg, lon: lon_deg });
    }
    let lat = lat_deg.to_radians();
    let lon = lon_deg.to_radians();
    let mut p = Point::new(&[
        math::cos(lat) * math::cos(lon),
        math::cos(lat) * math::sin(lon),
        math::sin(lat),
    ]);
    Manifold::sphere(2).canonicalize(&mut p);
    Ok(p)
}

/// Latitude/longitude in degrees of a point on `S^2`.
pub fn sphere_to_latlon(p: &[f64]) -> (f64, f64) {
    let lat = math::asin(p[2].clamp(-1.0, 1.0)).to_degrees();
    let lon = math::atan2(p[1], p[0]).to_degrees();
    (lat, lon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn wrap_examples() {
        let t = Manifold::torus(2);
        assert_eq!(t.wrap(&[1.25, -0.5]).unwrap().coords(), &[0.25, 0.5]);
        assert_eq!(t.wrap(&[0.0, 0.999]).unwrap().coords(), &[0.0, 0.999]);
        assert_eq!(t.wrap(&[-1e-16, 0.3]).unwrap().coords(), &[0.0, 0.3]);
        assert_eq!(
            t.wrap(&[0.1]).unwrap_err(),
            Error::DimMismatch { expected: 2, got: 1 }
        );
    }

    #[test]
    fn wrap_is_idempotent_on_random_raws() {
        use rand::Rng;
        let t = Manifold::torus(2);
        let mut rng = crate::rng::stream_rng(7, 0);
        for _ in 0..1_000_000 {
            let raw = [rng.random_range(-5.0..5.0), rng.random_range(-1e-11..1e-11)];
            let once = t.wrap(&raw).unwrap();
            assert!(t.contains(&once));
            assert_eq!(t.wrap(&once).unwrap(), once);
        }
    }

    #[test]
    fn latlon_examples() {
        let n = latlon_to_sphere(90.0, 0.0).unwrap();
        assert!((n[0]).abs() < 1e-15 && (n[1]).abs() < 1e-15 && (n[2] - 1.0).abs() < 1e-15);
        assert_eq!(latlon_to_sphere(0.0, 0.0).unwrap().coords(), &[1.0, 0.0, 0.0]);
        // independent evaluation: cos45 cos45 = 1/2, sin45 = √2/2
        let p = latlon_to_sphere(45.0, 45.0).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert!((p[1] - 0.5).abs() < 1e-12);
        assert!((p[2] - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(latlon_to_sphere(91.0, 0.0), Err(Error::BadLatLon { .. })));
        assert!(matches!(latlon_to_sphere(0.0, -180.5), Err(Error::BadLatLon { .. })));
    }

    #[test]
    fn latlon_round_trip() {
        for &(lat, lon) in &[(10.0, 20.0), (-33.5, 151.2), (0.0, -179.0)] {
            let (a, b) = sphere_to_latlon(&latlon_to_sphere(lat, lon).unwrap());
            assert!((a - lat).abs() < 1e-10 && (b - lon).abs() < 1e-10);
        }
    }

    #[test]
    fn uniform_torus_and_sphere_means() {
        let n = 100_000;
        let pts = uniform_sample(Manifold::torus(2), n, 1);
        for k in 0..2 {
            let m: f64 = pts.iter().map(|p| p[k]).sum::<f64>() / n as f64;
            assert!((m - 0.5).abs() < 0.005, "torus mean {m}");
        }
        let pts = uniform_sample(Manifold::sphere(2), n, 2);
        for k in 0..3 {
            let m: f64 = pts.iter().map(|p| p[k]).sum::<f64>() / n as f64;
            assert!(m.abs() < 0.01, "sphere mean {m}");
        }
        assert!(pts.iter().all(|p| Manifold::sphere(2).contains(p)));
    }

    #[test]
    fn uniform_is_deterministic() {
        assert_eq!(
            uniform_sample(Manifold::sphere(2), 1, 42),
            uniform_sample(Manifold::sphere(2), 1, 42)
        );
        assert_ne!(
            uniform_sample(Manifold::torus(2), 1, 42),
            uniform_sample(Manifold::torus(2), 1, 43)
        );
    }

    #[test]
    fn kolmogorov_smirnov_per_coordinate() {
        // Critical value at α = 0.01 is 1.628 / √n.
        let n = 20_000;
        for seed in [3u64, 4, 5] {
            let pts = uniform_sample(Manifold::torus(2), n, seed);
            for k in 0..2 {
                let mut xs: Vec<f64> = pts.iter().map(|p| p[k]).collect();
                xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let d = xs
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let hi = (i + 1) as f64 / n as f64 - x;
                        let lo = x - i as f64 / n as f64;
                        hi.max(lo)
                    })
                    .fold(0.0, f64::max);
                assert!(d < 1.628 / (n as f64).sqrt(), "KS statistic {d}");
            }
        }
    }

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(1) - core::f64::consts::TAU).abs() < 1e-12);
        assert!((sphere_area(2) - 4.0 * core::f64::consts::PI).abs() < 1e-12);
        assert!((sphere_area(3) - 2.0 * core::f64::consts::PI.powi(2)).abs() < 1e-12);
        assert!((Manifold::sphere(2).log_volume() - 2.531).abs() < 1e-3);
        assert_eq!(Manifold::torus(3).log_volume(), 0.0);
    }
}
