//! Oracles shared by the integration suites.
//!
//! A [`GridFlow`] lives on an `n x n` cell partition of the torus and moves by
//! lattice translations of one cell, so every move maps cells onto cells and
//! the flow-matching equation becomes a finite linear system. Solving it gives
//! flows that match exactly, whose stopping law is also computable exactly.

#![allow(dead_code)]

use egf_core::eval::DensityGrid;
use egf_core::rng::stream_rng;
use egf_core::transforms::{build_family, FamilySpec, Preset, Transform, TransformFamily};
use egf_core::{Egf, EgfModel, FlowModel, InitDensity, Manifold, ModelConfig, ModelOutput, Point};
use rand::Rng;

/// Lattice moves in cell units; the last three undo the first three.
pub const MOVES: [(i64, i64); 6] = [(1, 0), (0, 1), (1, 1), (-1, 0), (0, -1), (-1, -1)];

pub fn random_egf(preset: Preset, layout: &[usize], seed: u64) -> Egf {
    let m = preset.manifold();
    let family = build_family(m, &FamilySpec::preset(preset)).unwrap();
    let model = EgfModel::new(m, family.len(), ModelConfig::new(layout), seed).unwrap();
    Egf::new(family, model, InitDensity::Uniform).unwrap()
}

pub fn cell_index(n: usize, s: &[f64]) -> usize {
    let k = |x: f64| ((x.rem_euclid(1.0) * n as f64) as usize).min(n - 1);
    k(s[0]) * n + k(s[1])
}

/// Policy and outflow that are constant on grid cells.
#[derive(Clone, Debug)]
pub struct GridModel {
    pub n: usize,
    pub alpha: Vec<f64>,
    pub fstar: Vec<f64>,
}

impl FlowModel for GridModel {
    fn num_transforms(&self) -> usize {
        MOVES.len()
    }

    fn evaluate(&self, points: &[f64]) -> ModelOutput {
        let p = MOVES.len();
        let mut out = ModelOutput { p, alpha: Vec::new(), fstar: Vec::new() };
        for s in points.chunks_exact(2) {
            let c = cell_index(self.n, s);
            out.alpha.extend_from_slice(&self.alpha[c * p..(c + 1) * p]);
            out.fstar.push(self.fstar[c]);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct GridFlow {
    pub n: usize,
    pub model: GridModel,
    /// Cell reached from cell `c` by move `i`, at `c * p + i`.
    pub next: Vec<usize>,
    /// Terminal density used for sampling, per cell.
    pub term: Vec<f64>,
    /// `|δf_init|` per cell.
    pub neg: Vec<f64>,
}

pub fn lattice_family(n: usize) -> TransformFamily {
    let moves = MOVES.iter().map(|&(a, b)| Transform::translation(&[a as f64 / n as f64, b as f64 / n as f64])).collect();
    let family = TransformFamily::new(Manifold::torus(2), moves).unwrap();
    assert_eq!(family.len(), MOVES.len());
    family
}

/// Dense Gaussian elimination with partial pivoting; `a` is row-major `k x k`.
pub fn solve(k: usize, mut a: Vec<f64>, mut b: Vec<f64>) -> Vec<f64> {
    for col in 0..k {
        let piv = (col..k).max_by(|&x, &y| a[x * k + col].abs().total_cmp(&a[y * k + col].abs())).unwrap();
        assert!(a[piv * k + col].abs() > 1e-12, "singular system");
        if piv != col {
            for j in 0..k {
                a.swap(piv * k + j, col * k + j);
            }
            b.swap(piv, col);
        }
        for r in col + 1..k {
            let f = a[r * k + col] / a[col * k + col];
            if f != 0.0 {
                for j in col..k {
                    a[r * k + j] -= f * a[col * k + j];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; k];
    for r in (0..k).rev() {
        let s: f64 = (r + 1..k).map(|j| a[r * k + j] * x[j]).sum();
        x[r] = (b[r] - s) / a[r * k + r];
    }
    x
}

fn torus_cell_dist(n: usize, a: usize, b: usize) -> f64 {
    let d = |x: usize, y: usize| {
        let d = (x as i64 - y as i64).unsigned_abs() as usize;
        d.min(n - d) as f64
    };
    d(a / n, b / n).hypot(d(a % n, b % n))
}

impl GridFlow {
    pub fn cells(&self) -> usize {
        self.n * self.n
    }

    pub fn egf(&self) -> Egf<GridModel> {
        Egf::new(lattice_family(self.n), self.model.clone(), InitDensity::Uniform).unwrap()
    }

    pub fn term_at(&self, s: &[f64]) -> f64 {
        self.term[cell_index(self.n, s)]
    }

    /// `∫ f* dλ`.
    pub fn fstar_mass(&self) -> f64 {
        self.model.fstar.iter().sum::<f64>() / self.cells() as f64
    }

    pub fn term_mass(&self) -> f64 {
        self.term.iter().sum::<f64>() / self.cells() as f64
    }

    pub fn neg_mass(&self) -> f64 {
        self.neg.iter().sum::<f64>() / self.cells() as f64
    }

    /// `(P^T v)(c) = Σ_{c', i : next(c', i) = c} α_i(c') v(c')`, the one-step pushforward.
    pub fn push(&self, v: &[f64]) -> Vec<f64> {
        let p = MOVES.len();
        let mut out = vec![0.0; self.cells()];
        for c in 0..self.cells() {
            for i in 0..p {
                out[self.next[c * p + i]] += self.model.alpha[c * p + i] * v[c];
            }
        }
        out
    }

    /// Exact law of the stopping cell for an unbounded horizon.
    pub fn stop_law(&self) -> Vec<f64> {
        let k = self.cells();
        let p = MOVES.len();
        let hazard: Vec<f64> = (0..k).map(|c| self.term[c] / (self.term[c] + self.model.fstar[c])).collect();
        // visits = init + Q^T visits, with Q(c -> c') = (1 - h_c) α_i(c)
        let mut a = vec![0.0; k * k];
        for c in 0..k {
            a[c * k + c] += 1.0;
            for i in 0..p {
                a[self.next[c * p + i] * k + c] -= (1.0 - hazard[c]) * self.model.alpha[c * p + i];
            }
        }
        let visits = solve(k, a, vec![1.0 / k as f64; k]);
        visits.iter().zip(&hazard).map(|(v, h)| v * h).collect()
    }

    /// Random flow that matches a terminal density concentrated on a few cell blocks.
    pub fn exact(n: usize, seed: u64) -> GridFlow {
        let mut rng = stream_rng(seed, 0xF10);
        let k = n * n;
        let p = MOVES.len();
        let family = lattice_family(n);
        let center = |c: usize| [((c / n) as f64 + 0.5) / n as f64, ((c % n) as f64 + 0.5) / n as f64];
        let next: Vec<usize> = (0..k)
            .flat_map(|c| {
                let s = center(c);
                (0..p).map(|i| cell_index(n, &family.get(i).apply(&s).unwrap())).collect::<Vec<_>>()
            })
            .collect();

        let mut term = vec![0.0; k];
        for _ in 0..4 {
            let (r, q) = (rng.random_range(0..n), rng.random_range(0..n));
            let w = rng.random_range(0.5..1.5);
            for (dr, dq) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                term[((r + dr) % n) * n + (q + dq) % n] += w;
            }
        }
        let z = term.iter().sum::<f64>() / k as f64;
        term.iter_mut().for_each(|t| *t /= z);
        let targets: Vec<usize> = (0..k).filter(|&c| term[c] > 0.0).collect();

        let beta = rng.random_range(0.0..0.6);
        let mut alpha = vec![0.0; k * p];
        for c in 0..k {
            let row = &mut alpha[c * p..(c + 1) * p];
            for (i, r) in row.iter_mut().enumerate() {
                let d = targets.iter().map(|&t| torus_cell_dist(n, next[c * p + i], t)).fold(f64::INFINITY, f64::min);
                *r = (-beta * d + 0.5 * rng.random::<f64>()).exp();
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|r| *r /= s);
        }

        // (I - P^T) f = f_init - f_term has a one-dimensional kernel spanned by the
        // stationary law; pin one entry, then shift along the kernel to the smallest
        // nonnegative solution. Its zero sits where f_term = f_init + f*_← > 0.
        let system = |pin: f64, rhs: &dyn Fn(usize) -> f64| {
            let mut a = vec![0.0; k * k];
            let mut b = vec![0.0; k];
            for c in 0..k {
                a[c * k + c] += 1.0;
                for i in 0..p {
                    a[next[c * p + i] * k + c] -= alpha[c * p + i];
                }
                b[c] = rhs(c);
            }
            a[(k - 1) * k..].fill(0.0);
            a[(k - 1) * k + k - 1] = 1.0;
            b[k - 1] = pin;
            solve(k, a, b)
        };
        let particular = system(0.0, &|c| 1.0 - term[c]);
        let stationary = system(1.0, &|_| 0.0);
        assert!(stationary.iter().all(|&m| m > 0.0));
        let shift = (0..k).map(|c| -particular[c] / stationary[c]).fold(f64::NEG_INFINITY, f64::max);
        let fstar: Vec<f64> = (0..k).map(|c| (particular[c] + shift * stationary[c]).max(0.0)).collect();

        GridFlow { n, model: GridModel { n, alpha, fstar }, next, term, neg: vec![0.0; k] }
    }

    /// Adds outflow on a 3x3 block away from the terminal support, so that the
    /// virtual initial error has mass `delta`; the sampling terminal becomes `f̂_term`.
    pub fn perturbed(&self, delta: f64) -> GridFlow {
        let (n, k) = (self.n, self.cells());
        let support: Vec<usize> = (0..k).filter(|&c| self.term[c] > 0.0).collect();
        let far = (0..k)
            .max_by(|&a, &b| {
                let d = |c| support.iter().map(|&t| torus_cell_dist(n, c, t)).fold(f64::INFINITY, f64::min);
                d(a).total_cmp(&d(b))
            })
            .unwrap();
        let mut bump = vec![0.0; k];
        for dr in 0..3 {
            for dq in 0..3 {
                bump[((far / n + dr) % n) * n + (far % n + dq) % n] = 1.0;
            }
        }
        assert!(support.iter().all(|&c| bump[c] == 0.0));
        let pushed = self.push(&bump);
        let unit: f64 = (0..k).map(|c| (bump[c] - pushed[c]).max(0.0)).sum::<f64>() / k as f64;
        let a = delta / unit;
        let fstar: Vec<f64> = (0..k).map(|c| self.model.fstar[c] + a * bump[c]).collect();
        let defect: Vec<f64> = (0..k).map(|c| self.term[c] + a * (pushed[c] - bump[c])).collect();
        GridFlow {
            n,
            model: GridModel { n, alpha: self.model.alpha.clone(), fstar },
            next: self.next.clone(),
            term: defect.iter().map(|d| d.max(0.0)).collect(),
            neg: defect.iter().map(|d| (-d).max(0.0)).collect(),
        }
    }
}

/// Cell probabilities of an empirical sample on `grid`.
pub fn histogram_probs(grid: &DensityGrid, points: &[Point]) -> Vec<f64> {
    let mut counts = vec![0.0; grid.len()];
    for p in points {
        counts[grid.cell_of(p)] += 1.0;
    }
    let n = points.len() as f64;
    counts.iter().map(|c| c / n).collect()
}

pub fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Scale of the deviation of a histogram from its law: `½ Σ_c sd(p̂_c)`.
///
/// The empirical TV differs from the true TV by at most `TV(p̂, p)`, whose
/// expectation is below this sum.
pub fn histogram_tv_se(probs: &[f64], n: usize) -> f64 {
    0.5 * probs.iter().map(|&p| (p * (1.0 - p) / n as f64).sqrt()).sum::<f64>()
}

/// Pushes a coarse per-cell law onto a finer torus grid whose side is a multiple.
pub fn refine(coarse_n: usize, law: &[f64], fine_n: usize) -> Vec<f64> {
    let r = fine_n / coarse_n;
    assert_eq!(r * coarse_n, fine_n);
    let mut out = vec![0.0; fine_n * fine_n];
    for (c, &m) in law.iter().enumerate() {
        let (a, b) = (c / coarse_n, c % coarse_n);
        for da in 0..r {
            for db in 0..r {
                out[(a * r + da) * fine_n + b * r + db] = m / (r * r) as f64;
            }
        }
    }
    out
}
