//! Finite families of λ-preserving diffeomorphisms.
//!
//! Torus maps are affine, `x ↦ A x + b (mod 1)` with `A ∈ SL_d(Z)`; sphere maps
//! are rotations `x ↦ R x` with `R ∈ SO_{d+1}`. Families are closed under
//! inversion and record, for each index, the index of its inverse.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::manifold::{wrap_unit, Manifold, Point};
use crate::math;

/// Tolerance for orthogonality and `det = 1` checks on rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub enum Transform {
    /// `x ↦ wrap(A x + b)`. The translation is stored unwrapped so it can be
    /// optimized as a free real vector.
    ToroidalAffine { dim: usize, matrix: Vec<i64>, inverse_matrix: Vec<i64>, translation: Vec<f64> },
    /// `x ↦ R x` on unit vectors of `R^n`.
    SphericalRotation { n: usize, matrix: Vec<f64> },
}

impl Transform {
    /// Affine torus map; `matrix` is row-major `d x d` and must have determinant 1.
    pub fn affine(dim: usize, matrix: &[i64], translation: &[f64]) -> Result<Self> {
        if matrix.len() != dim * dim || translation.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "affine map on T^{dim} needs a {dim}x{dim} matrix and {dim} translation entries"
            )));
        }
        let det = linalg::int_det(dim, matrix);
        if det != 1 {
            return Err(Error::NotSl { det });
        }
        Ok(Transform::ToroidalAffine {
            dim,
            matrix: matrix.to_vec(),
            inverse_matrix: linalg::int_adjugate(dim, matrix),
            translation: translation.to_vec(),
        })
    }

    pub fn translation(offset: &[f64]) -> Self {
        let d = offset.len();
        let mut eye = vec![0i64; d * d];
        for k in 0..d {
            eye[k * d + k] = 1;
        }
        Transform::ToroidalAffine {
            dim: d,
            matrix: eye.clone(),
            inverse_matrix: eye,
            translation: offset.to_vec(),
        }
    }

    /// Rotation of `S^{n-1}`; `matrix` is row-major `n x n`.
    pub fn rotation(n: usize, matrix: &[f64]) -> Result<Self> {
        if matrix.len() != n * n {
            return Err(Error::ShapeMismatch(format!("rotation of R^{n} needs {} entries", n * n)));
        }
        let defect = linalg::orthogonality_defect(n, n, matrix);
        if !(defect < ROTATION_TOLERANCE) {
            return Err(Error::NotRotation(format!("|R^T R - I| = {defect:e}")));
        }
        let det = linalg::det(n, matrix);
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::NotRotation(format!("det R = {det}")));
        }
        Ok(Transform::SphericalRotation { n, matrix: matrix.to_vec() })
    }

    /// Rotation of `S^2` by `angle` radians about coordinate axis `axis` (0, 1 or 2).
    pub fn axis_rotation(axis: usize, angle: f64) -> Result<Self> {
        if axis > 2 {
            return Err(Error::InvalidArgument(format!("rotation axis {axis} is not 0, 1 or 2")));
        }
        let (s, c) = (math::sin(angle), math::cos(angle));
        let (i, j) = ((axis + 1) % 3, (axis + 2) % 3);
        let mut r = vec![0.0; 9];
        r[axis * 3 + axis] = 1.0;
        r[i * 3 + i] = c;
        r[j * 3 + j] = c;
        r[j * 3 + i] = s;
        r[i * 3 + j] = -s;
        Transform::rotation(3, &r)
    }

    pub fn identity(manifold: Manifold) -> Self {
        match manifold {
            Manifold::Torus { dim } => Transform::translation(&vec![0.0; dim]),
            Manifold::Sphere { dim } => {
                let n = dim + 1;
                let mut r = vec![0.0; n * n];
                for k in 0..n {
                    r[k * n + k] = 1.0;
                }
                Transform::SphericalRotation { n, matrix: r }
            }
        }
    }

    /// Number of stored coordinates the map acts on.
    pub fn ambient_dim(&self) -> usize {
        match self {
            Transform::ToroidalAffine { dim, .. } => *dim,
            Transform::SphericalRotation { n, .. } => *n,
        }
    }

    pub fn manifold(&self) -> Manifold {
        match self {
            Transform::ToroidalAffine { dim, .. } => Manifold::torus(*dim),
            Transform::SphericalRotation { n, .. } => Manifold::sphere(*n - 1),
        }
    }

    /// Writes `Φ(s)` into `out`; both slices have the ambient dimension.
    #[inline]
    pub fn apply_into(&self, s: &[f64], out: &mut [f64]) {
        match self {
            Transform::ToroidalAffine { dim, matrix, translation, .. } => {
                let d = *dim;
                for r in 0..d {
                    let mut acc = translation[r];
                    for c in 0..d {
                        acc += matrix[r * d + c] as f64 * s[c];
                    }
                    out[r] = wrap_unit(acc);
                }
            }
            Transform::SphericalRotation { n, matrix } => {
                linalg::matvec(*n, *n, matrix, s, out);
                Manifold::sphere(*n - 1).canonicalize(out);
            }
        }
    }

    pub fn apply(&self, s: &[f64]) -> Result<Point> {
        self.manifold().check_dim(s)?;
        let mut out = Point::zeros(s.len());
        self.apply_into(s, &mut out);
        Ok(out)
    }

    /// `Φ^{-1}`: `(A, b) ↦ (A^{-1}, wrap(-A^{-1} b))`, `R ↦ R^T`.
    pub fn inverse(&self) -> Transform {
        match self {
            Transform::ToroidalAffine { dim, matrix, inverse_matrix, translation } => {
                let d = *dim;
                let b = inverse_translation(d, inverse_matrix, translation)
                    .into_iter()
                    .map(wrap_unit)
                    .collect();
                Transform::ToroidalAffine {
                    dim: d,
                    matrix: inverse_matrix.clone(),
                    inverse_matrix: matrix.clone(),
                    translation: b,
                }
            }
            Transform::SphericalRotation { n, matrix } => {
                Transform::SphericalRotation { n: *n, matrix: linalg::transpose(*n, matrix) }
            }
        }
    }

    /// `log |det J_s Φ|`; identically zero for both supported kinds.
    pub fn log_abs_det_jacobian(&self, _s: &[f64]) -> f64 {
        0.0
    }

    /// Whether `other` equals `self^{-1}` (translations compared mod 1).
    pub fn is_inverse_of(&self, other: &Transform) -> bool {
        match (self, other) {
            (
                Transform::ToroidalAffine { dim, inverse_matrix, translation, .. },
                Transform::ToroidalAffine { dim: d2, matrix: m2, translation: b2, .. },
            ) => {
                if dim != d2 || inverse_matrix != m2 {
                    return false;
                }
                let want = inverse_translation(*dim, inverse_matrix, translation);
                want.iter().zip(b2).all(|(w, b)| {
                    let diff = wrap_unit(w - b);
                    diff.min(1.0 - diff) < 1e-12
                })
            }
            (
                Transform::SphericalRotation { n, matrix },
                Transform::SphericalRotation { n: n2, matrix: m2 },
            ) => {
                n == n2
                    && (0..*n).all(|i| {
                        (0..*n).all(|j| (matrix[j * n + i] - m2[i * n + j]).abs() < ROTATION_TOLERANCE)
                    })
            }
            _ => false,
        }
    }

    /// Largest row sum of `|A|` for affine maps (how many cells a grid cell can smear over), 1 for rotations.
    pub fn stretch(&self) -> f64 {
        match self {
            Transform::ToroidalAffine { dim, matrix, .. } => (0..*dim)
                .map(|r| matrix[r * dim..(r + 1) * dim].iter().map(|a| a.abs()).sum::<i64>() as f64)
                .fold(0.0, f64::max),
            Transform::SphericalRotation { .. } => 1.0,
        }
    }
}

/// `-A^{-1} b` without wrapping.
fn inverse_translation(d: usize, inverse_matrix: &[i64], b: &[f64]) -> Vec<f64> {
    (0..d)
        .map(|r| -(0..d).map(|c| inverse_matrix[r * d + c] as f64 * b[c]).sum::<f64>())
        .collect()
}

/// Named families used by the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Preset {
    /// Six translation pairs plus `S`, `T` and their inverses on `T^2`.
    #[cfg_attr(feature = "serde", serde(rename = "torus-rl-16"))]
    TorusRl16,
    /// `S = [[1,1],[0,1]]`, `T = [[1,0],[1,1]]`, `S^{-1}`, `T^{-1}` on `T^2`.
    #[cfg_attr(feature = "serde", serde(rename = "torus-il-4"))]
    TorusIl4,
    /// Rotations by `±π/4` about the three coordinate axes of `R^3`.
    #[cfg_attr(feature = "serde", serde(rename = "sphere-6"))]
    Sphere6,
}

impl Preset {
    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::TorusRl16 => "torus-rl-16",
            Preset::TorusIl4 => "torus-il-4",
            Preset::Sphere6 => "sphere-6",
        }
    }

    pub fn manifold(&self) -> Manifold {
        match self {
            Preset::TorusRl16 | Preset::TorusIl4 => Manifold::torus(2),
            Preset::Sphere6 => Manifold::sphere(2),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "torus-rl-16" => Ok(Preset::TorusRl16),
            "torus-il-4" => Ok(Preset::TorusIl4),
            "sphere-6" => Ok(Preset::Sphere6),
            other => Err(Error::InvalidArgument(format!("unknown family preset {other:?}"))),
        }
    }
}

/// One explicitly listed map.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields))]
pub enum TransformSpec {
    Affine {
        matrix: Vec<Vec<i64>>,
        #[cfg_attr(feature = "serde", serde(default))]
        translation: Vec<f64>,
    },
    Translation { offset: Vec<f64> },
    Rotation { matrix: Vec<Vec<f64>> },
    AxisRotation { axis: usize, angle: f64 },
}

impl TransformSpec {
    pub fn build(&self) -> Result<Transform> {
        match self {
            TransformSpec::Affine { matrix, translation } => {
                let d = matrix.len();
                if matrix.iter().any(|row| row.len() != d) {
                    return Err(Error::ShapeMismatch(String::from("affine matrix is not square")));
                }
                let flat: Vec<i64> = matrix.iter().flatten().copied().collect();
                let b = if translation.is_empty() { vec![0.0; d] } else { translation.clone() };
                Transform::affine(d, &flat, &b)
            }
            TransformSpec::Translation { offset } => Ok(Transform::translation(offset)),
            TransformSpec::Rotation { matrix } => {
                let n = matrix.len();
                if matrix.iter().any(|row| row.len() != n) {
                    return Err(Error::ShapeMismatch(String::from("rotation matrix is not square")));
                }
                let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
                Transform::rotation(n, &flat)
            }
            TransformSpec::AxisRotation { axis, angle } => Transform::axis_rotation(*axis, *angle),
        }
    }
}

/// Declarative description of a family: a preset or an explicit list.
#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FamilySpec {
    pub preset: Option<Preset>,
    pub transforms: Vec<TransformSpec>,
    /// Make the translation parts of torus maps optimizable.
    pub trainable_translations: bool,
    /// Draw the translations of `torus-rl-16` uniformly from this seed instead of
    /// the default low-discrepancy offsets.
    pub seed: Option<u64>,
}

impl FamilySpec {
    pub fn preset(preset: Preset) -> Self {
        FamilySpec { preset: Some(preset), ..Default::default() }
    }

    pub fn explicit(transforms: Vec<TransformSpec>) -> Self {
        FamilySpec { transforms, ..Default::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformFamily {
    manifold: Manifold,
    transforms: Vec<Transform>,
    inverses: Vec<Transform>,
    inverse_index: Vec<usize>,
    trainable: Vec<bool>,
}

impl TransformFamily {
    /// Builds a family from maps on `manifold`, appending any missing inverse.
    pub fn new(manifold: Manifold, mut transforms: Vec<Transform>) -> Result<Self> {
        if transforms.is_empty() {
            return Err(Error::InvalidArgument(String::from("a family needs at least one transform")));
        }
        for t in &transforms {
            if t.manifold() != manifold {
                return Err(Error::DimMismatch {
                    expected: manifold.ambient_dim(),
                    got: t.ambient_dim(),
                });
            }
        }
        let original = transforms.len();
        let mut inverse_index = vec![usize::MAX; original];
        for i in 0..original {
            if inverse_index[i] != usize::MAX {
                continue;
            }
            match (i..transforms.len()).find(|&j| transforms[i].is_inverse_of(&transforms[j])) {
                Some(j) => {
                    inverse_index[i] = j;
                    if j < original {
                        inverse_index[j] = i;
                    }
                }
                None => {
                    transforms.push(transforms[i].inverse());
                    inverse_index[i] = transforms.len() - 1;
                    inverse_index.push(i);
                }
            }
        }
        let inverses = inverse_index.iter().map(|&j| transforms[j].clone()).collect();
        let trainable = vec![false; transforms.len()];
        Ok(TransformFamily { manifold, transforms, inverses, inverse_index, trainable })
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    /// Number of maps `p`.
    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }

    pub fn get(&self, i: usize) -> &Transform {
        &self.transforms[i]
    }

    /// `Φ_i^{-1}`, which is also `Φ_{inverse_index(i)}`.
    pub fn inverse_of(&self, i: usize) -> &Transform {
        &self.inverses[i]
    }

    pub fn inverse_index(&self) -> &[usize] {
        &self.inverse_index
    }

    #[inline]
    pub fn apply_into(&self, i: usize, s: &[f64], out: &mut [f64]) {
        self.transforms[i].apply_into(s, out);
    }

    #[inline]
    pub fn apply_inverse_into(&self, i: usize, s: &[f64], out: &mut [f64]) {
        self.inverses[i].apply_into(s, out);
    }

    /// Marks the translations of every torus map that is not its own inverse as trainable.
    pub fn make_translations_trainable(&mut self) {
        for i in 0..self.len() {
            self.trainable[i] = self.manifold.is_torus() && self.inverse_index[i] != i;
        }
    }

    pub fn has_trainable(&self) -> bool {
        self.trainable.iter().any(|&t| t)
    }

    /// Indices whose translation is a free parameter: the smaller index of each trainable pair.
    fn free_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.trainable[i] && i < self.inverse_index[i])
    }

    pub fn translation_param_count(&self) -> usize {
        self.free_indices().count() * self.manifold.ambient_dim()
    }

    /// Concatenated free translations (unwrapped).
    pub fn translation_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for i in self.free_indices() {
            if let Transform::ToroidalAffine { translation, .. } = &self.transforms[i] {
                out.extend_from_slice(translation);
            }
        }
        out
    }

    /// Sets the free translations; each partner becomes `b_j = -A_i^{-1} b_i`.
    pub fn set_translation_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.translation_param_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} translation parameters, got {}",
                self.translation_param_count(),
                params.len()
            )));
        }
        let d = self.manifold.ambient_dim();
        let free: Vec<usize> = self.free_indices().collect();
        for (k, &i) in free.iter().enumerate() {
            let b = &params[k * d..(k + 1) * d];
            let j = self.inverse_index[i];
            let partner_b = match &mut self.transforms[i] {
                Transform::ToroidalAffine { translation, inverse_matrix, .. } => {
                    translation.copy_from_slice(b);
                    inverse_translation(d, inverse_matrix, b)
                }
                Transform::SphericalRotation { .. } => continue,
            };
            if let Transform::ToroidalAffine { translation, .. } = &mut self.transforms[j] {
                translation.copy_from_slice(&partner_b);
            }
        }
        self.inverses = self.inverse_index.iter().map(|&j| self.transforms[j].clone()).collect();
        Ok(())
    }

    /// Maps gradients with respect to every map's own translation (`p x d`,
    /// row-major) to gradients of the free parameters.
    pub fn project_translation_grads(&self, per_transform: &[f64]) -> Vec<f64> {
        let d = self.manifold.ambient_dim();
        let mut out = Vec::with_capacity(self.translation_param_count());
        for i in self.free_indices() {
            let j = self.inverse_index[i];
            let gi = &per_transform[i * d..(i + 1) * d];
            let gj = &per_transform[j * d..(j + 1) * d];
            if let Transform::ToroidalAffine { inverse_matrix, .. } = &self.transforms[i] {
                for c in 0..d {
                    // d b_j / d b_i = -A_i^{-1}, so the chain rule uses its transpose.
                    let back: f64 = (0..d).map(|r| inverse_matrix[r * d + c] as f64 * gj[r]).sum();
                    out.push(gi[c] - back);
                }
            }
        }
        out
    }
}

/// Builds a family from a declarative spec on `manifold`.
pub fn build_family(manifold: Manifold, spec: &FamilySpec) -> Result<TransformFamily> {
    let mut family = match (spec.preset, spec.transforms.is_empty()) {
        (Some(_), false) => {
            return Err(Error::InvalidArgument(String::from(
                "family spec sets both a preset and explicit transforms",
            )))
        }
        (None, true) => {
            return Err(Error::InvalidArgument(String::from("family spec is empty")));
        }
        (Some(preset), true) => {
            if preset.manifold() != manifold {
                return Err(Error::InvalidArgument(format!(
                    "preset {preset} does not act on the configured manifold"
                )));
            }
            preset_family(preset, spec.seed)?
        }
        (None, false) => {
            let ts = spec.transforms.iter().map(TransformSpec::build).collect::<Result<Vec<_>>>()?;
            TransformFamily::new(manifold, ts)?
        }
    };
    if spec.trainable_translations {
        family.make_translations_trainable();
    }
    Ok(family)
}

const S: [i64; 4] = [1, 1, 0, 1];
const T: [i64; 4] = [1, 0, 1, 1];

fn preset_family(preset: Preset, seed: Option<u64>) -> Result<TransformFamily> {
    let manifold = preset.manifold();
    let sl_pair = || -> Result<Vec<Transform>> {
        Ok(vec![Transform::affine(2, &S, &[0.0, 0.0])?, Transform::affine(2, &T, &[0.0, 0.0])?])
    };
    let ts = match preset {
        Preset::TorusIl4 => sl_pair()?,
        Preset::TorusRl16 => {
            let offsets: Vec<[f64; 2]> = match seed {
                None => (1..=6)
                    .map(|k| {
                        let k = k as f64;
                        [math::frac(k * core::f64::consts::SQRT_2), math::frac(k * math::sqrt(3.0))]
                    })
                    .collect(),
                Some(seed) => {
                    let mut rng = crate::rng::stream_rng(seed, 0);
                    (0..6).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect()
                }
            };
            // Translations first, inverses of all six are appended after S and T.
            let mut ts: Vec<Transform> = offsets.iter().map(|b| Transform::translation(b)).collect();
            ts.extend(sl_pair()?);
            ts
        }
        Preset::Sphere6 => {
            let q = core::f64::consts::FRAC_PI_4;
            (0..3).map(|a| Transform::axis_rotation(a, q)).collect::<Result<Vec<_>>>()?
        }
    };
    TransformFamily::new(manifold, ts)
}
