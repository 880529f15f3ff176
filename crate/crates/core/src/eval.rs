//! Quantitative evaluation: quadrature grids, NLL, total variation, flow
//! mass, the density filter scan and the L²-mixing diagnostic.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::flow::Density;
use crate::manifold::{wrap_unit, Manifold, Point};
use crate::math;
use crate::model::FlowModel;
use crate::transforms::{Transform, TransformFamily};

/// Reference NLLs (volume mode) reported for earth-science datasets on `S^2`.
pub mod reference {
    pub const VOLCANO_NLL: f64 = -2.31;
    pub const EARTHQUAKE_NLL: f64 = -0.12;
    pub const FLOOD_NLL: f64 = 0.56;
}

/// Cell layout of a [`DensityGrid`].
#[derive(Clone, Debug, PartialEq)]
pub enum GridLayout {
    /// `n^d` equal cubes of side `1/n`, row-major with the last coordinate fastest.
    Torus { dim: usize, n: usize },
    /// Latitude bands of equal angular height on `S^2`; band `b` has `lon_counts[b]`
    /// equal longitude sectors. Bands run from the south pole northwards.
    Sphere { lon_counts: Vec<usize> },
}

/// Per-cell values and λ-masses on a regular partition of the manifold.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    pub manifold: Manifold,
    pub layout: GridLayout,
    /// Cell centers, `cells x ambient`.
    pub centers: Vec<f64>,
    /// λ-mass of each cell; sums to 1.
    pub masses: Vec<f64>,
    /// Density value of each cell.
    pub values: Vec<f64>,
    band_offsets: Vec<usize>,
}

impl DensityGrid {
    /// `n^d` cells on `T^d`.
    pub fn torus(dim: usize, n: usize) -> Result<Self> {
        if dim == 0 || n == 0 {
            return Err(Error::InvalidArgument(format!("torus grid needs dim, n >= 1 (got {dim}, {n})")));
        }
        let cells = n.checked_pow(dim as u32).ok_or_else(|| Error::InvalidArgument(String::from("grid too large")))?;
        let mut centers = Vec::with_capacity(cells * dim);
        for c in 0..cells {
            let mut rem = c;
            let mut coords = vec![0.0; dim];
            for k in (0..dim).rev() {
                coords[k] = ((rem % n) as f64 + 0.5) / n as f64;
                rem /= n;
            }
            centers.extend(coords);
        }
        Ok(DensityGrid {
            manifold: Manifold::torus(dim),
            layout: GridLayout::Torus { dim, n },
            centers,
            masses: vec![1.0 / cells as f64; cells],
            values: vec![0.0; cells],
            band_offsets: Vec::new(),
        })
    }

    /// About `target_cells` cells on `S^2`: `round(sqrt(π N / 4))` latitude
    /// bands, each with longitude count proportional to its mid-latitude circumference.
    pub fn sphere(target_cells: usize) -> Result<Self> {
        if target_cells == 0 {
            return Err(Error::InvalidArgument(String::from("sphere grid needs at least one cell")));
        }
        let bands = (math::round(math::sqrt(math::PI * target_cells as f64 / 4.0)) as usize).max(1);
        let lon_counts: Vec<usize> = (0..bands)
            .map(|b| {
                let mid = -math::PI / 2.0 + (b as f64 + 0.5) * math::PI / bands as f64;
                (math::round(2.0 * bands as f64 * math::cos(mid)) as usize).max(1)
            })
            .collect();
        Self::sphere_with_bands(lon_counts)
    }

    pub fn sphere_with_bands(lon_counts: Vec<usize>) -> Result<Self> {
        let bands = lon_counts.len();
        if bands == 0 || lon_counts.contains(&0) {
            return Err(Error::InvalidArgument(String::from("every band needs at least one cell")));
        }
        let mut centers = Vec::new();
        let mut masses = Vec::new();
        let mut band_offsets = Vec::with_capacity(bands + 1);
        for (b, &m) in lon_counts.iter().enumerate() {
            band_offsets.push(masses.len());
            let lo = -math::PI / 2.0 + b as f64 * math::PI / bands as f64;
            let hi = lo + math::PI / bands as f64;
            // normalized area between two latitudes is (sin hi - sin lo) / 2
            let band_mass = (math::sin(hi) - math::sin(lo)) / 2.0;
            let lat = 0.5 * (lo + hi);
            for k in 0..m {
                let lon = -math::PI + (k as f64 + 0.5) * math::TAU / m as f64;
                centers.extend([math::cos(lat) * math::cos(lon), math::cos(lat) * math::sin(lon), math::sin(lat)]);
                masses.push(band_mass / m as f64);
            }
        }
        band_offsets.push(masses.len());
        let cells = masses.len();
        Ok(DensityGrid {
            manifold: Manifold::sphere(2),
            layout: GridLayout::Sphere { lon_counts },
            centers,
            masses,
            values: vec![0.0; cells],
            band_offsets,
        })
    }

    /// Default quadrature grid: `n x n` on `T^2`, `n²` target cells on `S^2`.
    pub fn for_manifold(manifold: Manifold, n: usize) -> Result<Self> {
        match manifold {
            Manifold::Torus { dim } => Self::torus(dim, n),
            Manifold::Sphere { dim: 2 } => Self::sphere(n * n),
            Manifold::Sphere { dim } => Err(Error::Unsupported(format!("grids on S^{dim}"))),
        }
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn center(&self, c: usize) -> &[f64] {
        let amb = self.manifold.ambient_dim();
        &self.centers[c * amb..(c + 1) * amb]
    }

    /// Index of the cell containing `s`.
    pub fn cell_of(&self, s: &[f64]) -> usize {
        match &self.layout {
            GridLayout::Torus { dim, n } => {
                let mut idx = 0;
                for &x in s.iter().take(*dim) {
                    let k = ((wrap_unit(x) * *n as f64) as usize).min(n - 1);
                    idx = idx * n + k;
                }
                idx
            }
            GridLayout::Sphere { lon_counts } => {
                let bands = lon_counts.len();
                let lat = math::asin(s[2].clamp(-1.0, 1.0));
                let b = (((lat + math::PI / 2.0) / math::PI * bands as f64) as usize).min(bands - 1);
                let m = lon_counts[b];
                let lon = math::atan2(s[1], s[0]);
                let k = (((lon + math::PI) / math::TAU * m as f64) as usize).min(m - 1);
                self.band_offsets[b] + k
            }
        }
    }

    /// Grid with values `f(center)`.
    pub fn filled(mut self, f: &dyn Density) -> Self {
        self.values = f.density_batch(self.manifold.ambient_dim(), &self.centers);
        self
    }

    /// Empirical density of `points`: counts divided by `N` times the cell mass.
    pub fn histogram(mut self, points: &[Point]) -> Self {
        let mut counts = vec![0usize; self.len()];
        for p in points {
            counts[self.cell_of(p)] += 1;
        }
        let n = points.len().max(1) as f64;
        self.values = counts.iter().zip(&self.masses).map(|(&c, &m)| c as f64 / (n * m)).collect();
        self
    }

    /// Midpoint-rule integral `Σ value * mass`.
    pub fn integral(&self) -> f64 {
        self.values.iter().zip(&self.masses).map(|(v, m)| v * m).sum()
    }

    /// Cell probabilities after normalizing the integral to one.
    pub fn probabilities(&self) -> Result<Vec<f64>> {
        let z = self.integral();
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::DegenerateDensity(z));
        }
        Ok(self.values.iter().zip(&self.masses).map(|(v, m)| v * m / z).collect())
    }

    fn same_cells(&self, other: &DensityGrid) -> bool {
        self.manifold == other.manifold && self.layout == other.layout
    }
}

/// `½ Σ |a_c - b_c|` over normalized cell masses.
pub fn tv_grid(a: &DensityGrid, b: &DensityGrid) -> Result<f64> {
    if !a.same_cells(b) {
        return Err(Error::GridMismatch(String::from("grids have different layouts")));
    }
    let (pa, pb) = (a.probabilities()?, b.probabilities()?);
    Ok(0.5 * pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

/// Which measure the reported likelihood is relative to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum NllMode {
    /// Relative to λ of total mass one: the uniform density scores 0.
    #[default]
    Normalized,
    /// Relative to the Riemannian volume: adds `log vol(M)`.
    Volume,
}

/// `-mean log(f(x) / Z)` (+ `log vol` in volume mode) from density values at the points.
pub fn nll_from_values(manifold: Manifold, values: &[f64], integral: f64, mode: NllMode) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(integral > 0.0) || !integral.is_finite() {
        return Err(Error::DegenerateDensity(integral));
    }
    let mean_log = values.iter().map(|&v| math::ln(v / integral)).sum::<f64>() / values.len() as f64;
    let offset = match mode {
        NllMode::Normalized => 0.0,
        NllMode::Volume => manifold.log_volume(),
    };
    Ok(-mean_log + offset)
}

/// NLL of `density` at `points`, normalized by quadrature on `grid`.
pub fn nll(density: &dyn Density, points: &[Point], grid: &DensityGrid, mode: NllMode) -> Result<f64> {
    let amb = grid.manifold.ambient_dim();
    let flat: Vec<f64> = points.iter().flat_map(|p| p.iter().copied()).collect();
    let values = density.density_batch(amb, &flat);
    let integral = grid.clone().filled(density).integral();
    nll_from_values(grid.manifold, &values, integral, mode)
}

/// Monte-Carlo estimate of `F*(S) = ∫ f* dλ` with its standard error.
pub fn flow_mass<M: FlowModel, R: Rng + ?Sized>(model: &M, manifold: Manifold, n_mc: usize, rng: &mut R) -> (f64, f64) {
    let n = n_mc.max(2);
    let pts: Vec<f64> = (0..n).flat_map(|_| manifold.sample_uniform(rng).0.into_iter()).collect();
    mean_and_stderr(&model.evaluate(&pts).fstar)
}

/// Sample mean and its standard error.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, math::sqrt(var / n))
}

/// Threshold `f_sat = m - kσ` below which the density is zeroed.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FilterSpec {
    /// Standard-deviation multiplier; `f64::INFINITY` is the no-op filter.
    pub k: f64,
    pub f_sat: f64,
    pub mean: f64,
    pub std: f64,
}

impl FilterSpec {
    /// `f_sat = mean - k std`; `k = +∞` gives `f_sat = -∞`.
    pub fn new(k: f64, mean: f64, std: f64) -> Self {
        let f_sat = if k == f64::INFINITY { f64::NEG_INFINITY } else { mean - k * std };
        FilterSpec { k, f_sat, mean, std }
    }

    pub fn apply(&self, value: f64) -> f64 {
        if value >= self.f_sat {
            value
        } else {
            0.0
        }
    }

    /// `f_sat` for use as a sampler threshold; `None` for the no-op filter.
    pub fn threshold(&self) -> Option<f64> {
        self.f_sat.is_finite().then_some(self.f_sat)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterScan {
    pub best: FilterSpec,
    pub best_nll: f64,
    /// One NLL per entry of the k grid, in order; `+∞` where the filter removes everything.
    pub curve: Vec<f64>,
    pub unfiltered_nll: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterScanOptions {
    /// λ-samples used for the mean and standard deviation of the density.
    pub n_lambda: usize,
    pub seed: u64,
    pub mode: NllMode,
}

impl Default for FilterScanOptions {
    fn default() -> Self {
        FilterScanOptions { n_lambda: 100_000, seed: 0, mode: NllMode::Normalized }
    }
}

/// Mean and standard deviation of `density` under λ from `n_lambda` samples.
pub fn density_moments(density: &dyn Density, manifold: Manifold, n_lambda: usize, seed: u64) -> (f64, f64) {
    let mut rng = crate::rng::stream_rng(seed, 0x66696c);
    let lambda: Vec<f64> = (0..n_lambda.max(2)).flat_map(|_| manifold.sample_uniform(&mut rng).0.into_iter()).collect();
    let v = density.density_batch(manifold.ambient_dim(), &lambda);
    let (m, se) = mean_and_stderr(&v);
    (m, se * math::sqrt(v.len() as f64))
}

/// Scores `1_{f ≥ m - kσ} f` on `validation` for each `k`; ties go to the larger `k`.
pub fn filter_scan(
    density: &dyn Density,
    validation: &[Point],
    k_grid: &[f64],
    grid: &DensityGrid,
    opts: &FilterScanOptions,
) -> Result<FilterScan> {
    if k_grid.is_empty() {
        return Err(Error::InvalidArgument(String::from("k grid is empty")));
    }
    let manifold = grid.manifold;
    let amb = manifold.ambient_dim();
    let (mean, std) = density_moments(density, manifold, opts.n_lambda, opts.seed);
    let flat: Vec<f64> = validation.iter().flat_map(|p| p.iter().copied()).collect();
    let val_values = density.density_batch(amb, &flat);
    let grid_values = grid.clone().filled(density);

    let score = |spec: &FilterSpec| -> f64 {
        let z: f64 = grid_values.values.iter().zip(&grid_values.masses).map(|(&v, m)| spec.apply(v) * m).sum();
        let vals: Vec<f64> = val_values.iter().map(|&v| spec.apply(v)).collect();
        match nll_from_values(manifold, &vals, z, opts.mode) {
            Ok(v) if v.is_finite() => v,
            _ => f64::INFINITY,
        }
    };
    let unfiltered_nll = score(&FilterSpec::new(f64::INFINITY, mean, std));
    let mut curve = Vec::with_capacity(k_grid.len());
    let mut best: Option<(FilterSpec, f64)> = None;
    for &k in k_grid {
        let spec = FilterSpec::new(k, mean, std);
        let v = score(&spec);
        curve.push(v);
        if v.is_infinite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some((b, bv)) => v < *bv || (v == *bv && k > b.k),
        };
        if better {
            best = Some((spec, v));
        }
    }
    let (best, best_nll) = best.ok_or(Error::DegenerateDensity(0.0))?;
    Ok(FilterScan { best, best_nll, curve, unfiltered_nll })
}

/// Output of [`mixing_diagnostic`].
#[derive(Clone, Debug, PartialEq)]
pub struct MixingReport {
    /// `γ̂_0` (1 for the normalized dictionary).
    pub gamma0: f64,
    /// `γ̂_1, ..., γ̂_n`.
    pub gammas: Vec<f64>,
    /// Per-step values for every dictionary element, `(n_steps + 1) x |dictionary|`.
    pub per_mode: Vec<Vec<f64>>,
    pub dictionary: Vec<String>,
    pub warnings: Vec<String>,
}

/// Lower bound `γ̂_n = max_φ ‖T^n φ‖²` of the L²-mixing coefficients under the
/// uniform policy, where `T φ = (1/p) Σ_i φ ∘ Φ_i^{-1}` is discretized on `grid`.
pub fn mixing_diagnostic(family: &TransformFamily, n_steps: usize, grid: &DensityGrid) -> Result<MixingReport> {
    mixing_diagnostic_of(family.manifold(), family.transforms(), n_steps, grid)
}

/// As [`mixing_diagnostic`] for an arbitrary list of λ-preserving maps (not necessarily closed under inversion).
pub fn mixing_diagnostic_of(
    manifold: Manifold,
    transforms: &[Transform],
    n_steps: usize,
    grid: &DensityGrid,
) -> Result<MixingReport> {
    if grid.manifold != manifold {
        return Err(Error::GridMismatch(String::from("grid and family live on different manifolds")));
    }
    if transforms.is_empty() {
        return Err(Error::InvalidArgument(String::from("no transforms")));
    }
    let mut warnings = Vec::new();
    let operator = TransferOperator::build(transforms, grid, &mut warnings)?;
    let (names, dict) = dictionary(grid)?;
    let masses = &grid.masses;
    let norm2 = |v: &[f64]| v.iter().zip(masses).map(|(x, m)| x * x * m).sum::<f64>();
    let mut per_mode = vec![dict.iter().map(|phi| norm2(phi)).collect::<Vec<f64>>()];
    let mut current = dict;
    for _ in 0..n_steps {
        current = current.iter().map(|phi| operator.apply(phi)).collect();
        per_mode.push(current.iter().map(|phi| norm2(phi)).collect());
    }
    let max = |row: &Vec<f64>| row.iter().copied().fold(0.0, f64::max);
    let gamma0 = max(&per_mode[0]);
    let gammas = per_mode[1..].iter().map(max).collect();
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(MixingReport { gamma0, gammas, per_mode, dictionary: names, warnings })
}

/// Sparse row-stochastic matrix `(T φ)_c = Σ_{c'} w_{c c'} φ_{c'}`.
struct TransferOperator {
    rows: Vec<Vec<(usize, f64)>>,
}

impl TransferOperator {
    fn build(transforms: &[Transform], grid: &DensityGrid, warnings: &mut Vec<String>) -> Result<Self> {
        let p = transforms.len() as f64;
        let inverses: Vec<Transform> = transforms.iter().map(Transform::inverse).collect();
        let amb = grid.manifold.ambient_dim();
        match &grid.layout {
            GridLayout::Torus { n, .. } => {
                if transforms.iter().any(|t| t.stretch() > 4.0) {
                    warnings.push(String::from("grid-aliasing: a cell image spans more than 4 cells"));
                }
                // Lattice corners j/n are mapped exactly by integer matrices, so
                // evaluating on them (not at centers) keeps the SL part a permutation.
                let n = *n;
                let mut rows = Vec::with_capacity(grid.len());
                let mut y = vec![0.0; amb];
                for c in 0..grid.len() {
                    let corner: Vec<f64> = grid.center(c).iter().map(|&x| x - 0.5 / n as f64).collect();
                    let mut row: Vec<(usize, f64)> = Vec::with_capacity(inverses.len());
                    for inv in &inverses {
                        inv.apply_into(&corner, &mut y);
                        let mut idx = 0;
                        for &x in &y {
                            let k = (math::round(x * n as f64) as i64).rem_euclid(n as i64) as usize;
                            idx = idx * n + k;
                        }
                        push_weight(&mut row, idx, 1.0 / p);
                    }
                    rows.push(row);
                }
                Ok(TransferOperator { rows })
            }
            GridLayout::Sphere { .. } => {
                // Ulam discretization from a few points per cell, then Sinkhorn
                // balancing so that T is λ-stochastic in both directions.
                let mut rng = crate::rng::stream_rng(0, 0x756c616d);
                let per_cell = 8;
                let mut rows = Vec::with_capacity(grid.len());
                let mut y = vec![0.0; amb];
                for c in 0..grid.len() {
                    let mut row: Vec<(usize, f64)> = Vec::new();
                    for _ in 0..per_cell {
                        let s = jitter_in_cell(grid, c, &mut rng);
                        for inv in &inverses {
                            inv.apply_into(&s, &mut y);
                            push_weight(&mut row, grid.cell_of(&y), 1.0 / (p * per_cell as f64));
                        }
                    }
                    rows.push(row);
                }
                let mut op = TransferOperator { rows };
                op.balance(&grid.masses, 200);
                Ok(op)
            }
        }
    }

    fn apply(&self, phi: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|row| row.iter().map(|&(j, w)| w * phi[j]).sum()).collect()
    }

    /// Alternating scaling toward unit row sums and `Σ_c m_c w_{c c'} = m_{c'}`.
    fn balance(&mut self, masses: &[f64], iters: usize) {
        let n = masses.len();
        for _ in 0..iters {
            let mut col = vec![0.0; n];
            for (c, row) in self.rows.iter().enumerate() {
                for &(j, w) in row {
                    col[j] += masses[c] * w;
                }
            }
            for row in self.rows.iter_mut() {
                for (j, w) in row.iter_mut() {
                    if col[*j] > 0.0 {
                        *w *= masses[*j] / col[*j];
                    }
                }
            }
            for row in self.rows.iter_mut() {
                let s: f64 = row.iter().map(|x| x.1).sum();
                if s > 0.0 {
                    row.iter_mut().for_each(|x| x.1 /= s);
                }
            }
        }
    }
}

fn push_weight(row: &mut Vec<(usize, f64)>, idx: usize, w: f64) {
    match row.iter_mut().find(|e| e.0 == idx) {
        Some(e) => e.1 += w,
        None => row.push((idx, w)),
    }
}

fn jitter_in_cell<R: Rng + ?Sized>(grid: &DensityGrid, c: usize, rng: &mut R) -> Vec<f64> {
    let GridLayout::Sphere { lon_counts } = &grid.layout else { unreachable!() };
    let b = grid.band_offsets.partition_point(|&o| o <= c) - 1;
    let bands = lon_counts.len();
    let k = c - grid.band_offsets[b];
    let m = lon_counts[b];
    let lo = -math::PI / 2.0 + b as f64 * math::PI / bands as f64;
    let hi = lo + math::PI / bands as f64;
    // uniform in area: z = sin(lat) uniform on [sin lo, sin hi]
    let z = math::sin(lo) + rng.random::<f64>() * (math::sin(hi) - math::sin(lo));
    let lon = -math::PI + (k as f64 + rng.random::<f64>()) * math::TAU / m as f64;
    let r = math::sqrt((1.0 - z * z).max(0.0));
    vec![r * math::cos(lon), r * math::sin(lon), z]
}

/// Zero-mean test functions of unit `L²(λ)` norm, evaluated per cell and
/// re-normalized on the grid.
fn dictionary(grid: &DensityGrid) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let amb = grid.manifold.ambient_dim();
    let mut names = Vec::new();
    let mut funcs: Vec<Vec<f64>> = Vec::new();
    let mut add = |name: String, f: &dyn Fn(&[f64]) -> f64, origin_shift: f64| {
        let vals: Vec<f64> = (0..grid.len())
            .map(|c| {
                let x: Vec<f64> = grid.center(c).iter().map(|&v| v - origin_shift).collect();
                f(&x)
            })
            .collect();
        names.push(name);
        funcs.push(vals);
    };
    match grid.layout {
        GridLayout::Torus { dim, n } => {
            // values sit on the lattice corners the operator acts on
            let shift = 0.5 / n as f64;
            let freqs: Vec<Vec<i64>> = match dim {
                1 => (1..=4).map(|k| vec![k]).collect(),
                _ => {
                    let mut f = Vec::new();
                    for (a, b) in [(1, 0), (0, 1), (1, 1), (1, -1)] {
                        let mut v = vec![0i64; dim];
                        v[0] = a;
                        v[1] = b;
                        f.push(v);
                    }
                    f
                }
            };
            for k in freqs {
                let kc = k.clone();
                let phase = move |x: &[f64]| math::TAU * x.iter().zip(&kc).map(|(a, b)| a * *b as f64).sum::<f64>();
                let ph = phase.clone();
                add(format!("cos{k:?}"), &move |x| math::sqrt(2.0) * math::cos(ph(x)), shift);
                add(format!("sin{k:?}"), &move |x| math::sqrt(2.0) * math::sin(phase(x)), shift);
            }
        }
        GridLayout::Sphere { .. } => {
            let _ = amb;
            let r3 = math::sqrt(3.0);
            let r15 = math::sqrt(15.0);
            let r5 = math::sqrt(5.0);
            add(String::from("Y1,x"), &|x| r3 * x[0], 0.0);
            add(String::from("Y1,y"), &|x| r3 * x[1], 0.0);
            add(String::from("Y1,z"), &|x| r3 * x[2], 0.0);
            add(String::from("Y2,xy"), &|x| r15 * x[0] * x[1], 0.0);
            add(String::from("Y2,yz"), &|x| r15 * x[1] * x[2], 0.0);
            add(String::from("Y2,zx"), &|x| r15 * x[2] * x[0], 0.0);
            add(String::from("Y2,x2-y2"), &|x| r15 / 2.0 * (x[0] * x[0] - x[1] * x[1]), 0.0);
            add(String::from("Y2,z2"), &|x| r5 / 2.0 * (3.0 * x[2] * x[2] - 1.0), 0.0);
        }
    }
    for f in funcs.iter_mut() {
        let mean: f64 = f.iter().zip(&grid.masses).map(|(v, m)| v * m).sum();
        f.iter_mut().for_each(|v| *v -= mean);
        let norm = math::sqrt(f.iter().zip(&grid.masses).map(|(v, m)| v * v * m).sum());
        if !(norm > 0.0) {
            return Err(Error::InvalidArgument(String::from("grid too coarse for the test dictionary")));
        }
        f.iter_mut().for_each(|v| *v /= norm);
    }
    Ok((names, funcs))
}
