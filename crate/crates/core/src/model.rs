//! The two policy heads of an EGF as small tanh MLPs with hand-written
//! reverse-mode gradients, plus an AdamW optimizer.
//!
//! Parameters live in one flat `Vec<f64>`; [`TensorSpec`] names the slices.
//! Weight matrices are row-major `out x in`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::gemm;
use crate::manifold::Manifold;
use crate::math;

/// Softmax outputs are clamped from below at this value.
pub const ALPHA_FLOOR: f64 = 1e-30;

/// Rows per forward chunk when only outputs are needed.
const EVAL_CHUNK: usize = 2048;

/// Positivity map applied to the raw scalar head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Link {
    #[default]
    Softplus,
    Exp,
}

impl Link {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Link::Softplus => math::softplus(x),
            Link::Exp => math::exp(x),
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Link::Softplus => math::sigmoid(x),
            Link::Exp => math::exp(x),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Link::Softplus => "softplus",
            Link::Exp => "exp",
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Link {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softplus" => Ok(Link::Softplus),
            "exp" => Ok(Link::Exp),
            other => Err(Error::InvalidArgument(format!("unknown link {other:?}"))),
        }
    }
}

/// Architecture of the two heads.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ModelConfig {
    /// Hidden layer widths, e.g. `[32, 32, 32]`.
    pub layout: Vec<usize>,
    pub link: Link,
    /// One tanh trunk feeding two linear heads instead of two separate MLPs.
    pub shared_trunk: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { layout: vec![32; 3], link: Link::Softplus, shared_trunk: false }
    }
}

impl ModelConfig {
    pub fn new(layout: &[usize]) -> Self {
        ModelConfig { layout: layout.to_vec(), ..Default::default() }
    }
}

/// A named slice of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    inp: usize,
    out: usize,
    w: usize,
    b: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Mlp {
    layers: Vec<Layer>,
    tanh_last: bool,
}

impl Mlp {
    fn build(
        name: &str,
        widths: &[usize],
        tanh_last: bool,
        tensors: &mut Vec<TensorSpec>,
        offset: &mut usize,
    ) -> Mlp {
        let mut layers = Vec::new();
        for (l, pair) in widths.windows(2).enumerate() {
            let (inp, out) = (pair[0], pair[1]);
            let w = *offset;
            tensors.push(TensorSpec { name: format!("{name}.{l}.weight"), rows: out, cols: inp, offset: w });
            *offset += out * inp;
            let b = *offset;
            tensors.push(TensorSpec { name: format!("{name}.{l}.bias"), rows: 1, cols: out, offset: b });
            *offset += out;
            layers.push(Layer { inp, out, w, b });
        }
        Mlp { layers, tanh_last }
    }

    fn is_tanh(&self, l: usize) -> bool {
        l + 1 < self.layers.len() || self.tanh_last
    }

    /// Returns the output of every layer.
    fn forward(&self, params: &[f64], x: &[f64], n: usize) -> Vec<Vec<f64>> {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { x } else { &acts[l - 1] };
            let mut z = vec![0.0; n * layer.out];
            let w = &params[layer.w..layer.w + layer.out * layer.inp];
            gemm(n, layer.inp, layer.out, 1.0, input, false, w, true, 0.0, &mut z);
            let bias = &params[layer.b..layer.b + layer.out];
            let tanh = self.is_tanh(l);
            for row in z.chunks_exact_mut(layer.out) {
                for (v, b) in row.iter_mut().zip(bias) {
                    *v += b;
                    if tanh {
                        *v = math::tanh(*v);
                    }
                }
            }
            acts.push(z);
        }
        acts
    }

    /// Accumulates parameter gradients; returns the gradient with respect to `x` if asked.
    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        acts: &[Vec<f64>],
        n: usize,
        mut d_out: Vec<f64>,
        grads: &mut [f64],
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if self.is_tanh(l) {
                for (d, a) in d_out.iter_mut().zip(&acts[l]) {
                    *d *= 1.0 - a * a;
                }
            }
            let input = if l == 0 { x } else { &acts[l - 1] };
            let gw = &mut grads[layer.w..layer.w + layer.out * layer.inp];
            gemm(layer.out, n, layer.inp, 1.0, &d_out, true, input, false, 1.0, gw);
            let gb = &mut grads[layer.b..layer.b + layer.out];
            for row in d_out.chunks_exact(layer.out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l == 0 && !want_dx {
                return None;
            }
            let w = &params[layer.w..layer.w + layer.out * layer.inp];
            let mut d_in = vec![0.0; n * layer.inp];
            gemm(n, layer.out, layer.inp, 1.0, &d_out, false, w, false, 0.0, &mut d_in);
            d_out = d_in;
        }
        Some(d_out)
    }
}

/// Batched outputs of a policy model for `n` points.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelOutput {
    pub p: usize,
    /// `n x p`, row-major; each row sums to one.
    pub alpha: Vec<f64>,
    /// Nonnegative outflow density at each point.
    pub fstar: Vec<f64>,
}

impl ModelOutput {
    pub fn len(&self) -> usize {
        self.fstar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fstar.is_empty()
    }

    pub fn alpha_row(&self, i: usize) -> &[f64] {
        &self.alpha[i * self.p..(i + 1) * self.p]
    }

    fn append(&mut self, other: ModelOutput) {
        self.p = other.p;
        self.alpha.extend(other.alpha);
        self.fstar.extend(other.fstar);
    }
}

/// Anything that yields a forward policy and an outflow density at points.
pub trait FlowModel {
    /// Number of transforms `p` the softmax head ranges over.
    fn num_transforms(&self) -> usize;

    /// Evaluates `n = points.len() / ambient_dim` points stored contiguously.
    fn evaluate(&self, points: &[f64]) -> ModelOutput;
}

/// Intermediate values of a batched forward pass, kept for [`EgfModel::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    n: usize,
    points: Vec<f64>,
    feats: Vec<f64>,
    trunk: Vec<Vec<f64>>,
    alpha_acts: Vec<Vec<f64>>,
    fstar_acts: Vec<Vec<f64>>,
    pub output: ModelOutput,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Parameters and topology of the softmax head `α` and the scalar head `f*`.
#[derive(Clone, Debug, PartialEq)]
pub struct EgfModel {
    manifold: Manifold,
    p: usize,
    config: ModelConfig,
    seed: u64,
    params: Vec<f64>,
    tensors: Vec<TensorSpec>,
    trunk: Option<Mlp>,
    alpha: Mlp,
    fstar: Mlp,
}

impl EgfModel {
    /// Orthogonally initialized model, deterministic in `seed`.
    pub fn new(manifold: Manifold, p: usize, config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(manifold, p, config, seed)?;
        let mut rng = crate::rng::stream_rng(seed, 0x6d6f64656c);
        for spec in &model.tensors {
            if spec.name.ends_with("weight") {
                let w = orthogonal(spec.rows, spec.cols, &mut rng);
                model.params[spec.range()].copy_from_slice(&w);
            }
        }
        Ok(model)
    }

    /// Same topology as [`EgfModel::new`] with every parameter zero.
    pub fn zeroed(manifold: Manifold, p: usize, config: ModelConfig, seed: u64) -> Result<Self> {
        if p == 0 {
            return Err(Error::BadLayout(String::from("the softmax head needs p >= 1")));
        }
        if config.layout.is_empty() || config.layout.contains(&0) {
            return Err(Error::BadLayout(format!("hidden widths {:?} must be nonempty and positive", config.layout)));
        }
        let in_width = feature_width(manifold);
        let mut tensors = Vec::new();
        let mut offset = 0;
        let (trunk, alpha, fstar) = if config.shared_trunk {
            let mut widths = vec![in_width];
            widths.extend_from_slice(&config.layout);
            let trunk = Mlp::build("trunk", &widths, true, &mut tensors, &mut offset);
            let h = *config.layout.last().unwrap();
            let alpha = Mlp::build("alpha", &[h, p], false, &mut tensors, &mut offset);
            let fstar = Mlp::build("fstar", &[h, 1], false, &mut tensors, &mut offset);
            (Some(trunk), alpha, fstar)
        } else {
            let mut widths = vec![in_width];
            widths.extend_from_slice(&config.layout);
            widths.push(p);
            let alpha = Mlp::build("alpha", &widths, false, &mut tensors, &mut offset);
            *widths.last_mut().unwrap() = 1;
            let fstar = Mlp::build("fstar", &widths, false, &mut tensors, &mut offset);
            (None, alpha, fstar)
        };
        Ok(EgfModel {
            manifold,
            p,
            config,
            seed,
            params: vec![0.0; offset],
            tensors,
            trunk,
            alpha,
            fstar,
        })
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn link(&self) -> Link {
        self.config.link
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &self.params[t.range()])
    }

    /// Output for a single point; fails if any output is non-finite.
    pub fn forward(&self, s: &[f64]) -> Result<ModelOutput> {
        self.manifold.check_dim(s)?;
        let out = self.evaluate(s);
        if out.fstar.iter().chain(&out.alpha).any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow("model forward"));
        }
        Ok(out)
    }

    /// Batched forward pass keeping the activations for [`EgfModel::backward`].
    pub fn forward_cached(&self, points: &[f64]) -> ForwardCache {
        let amb = self.manifold.ambient_dim();
        let n = points.len() / amb;
        let feats = featurize(self.manifold, points);
        let trunk = match &self.trunk {
            Some(t) => t.forward(&self.params, &feats, n),
            None => Vec::new(),
        };
        let head_in: &[f64] = trunk.last().map_or(&feats, |v| v);
        let alpha_acts = self.alpha.forward(&self.params, head_in, n);
        let fstar_acts = self.fstar.forward(&self.params, head_in, n);
        let logits = alpha_acts.last().unwrap();
        let raw = fstar_acts.last().unwrap();
        let mut alpha = vec![0.0; n * self.p];
        for (row, out) in logits.chunks_exact(self.p).zip(alpha.chunks_exact_mut(self.p)) {
            softmax(row, out);
        }
        let fstar = raw.iter().map(|&r| self.config.link.apply(r)).collect();
        ForwardCache {
            n,
            points: points.to_vec(),
            feats,
            trunk,
            alpha_acts,
            fstar_acts,
            output: ModelOutput { p: self.p, alpha, fstar },
        }
    }

    /// Reverse pass: accumulates `∂L/∂θ` into `grads` given `∂L/∂α` (`n x p`) and
    /// `∂L/∂f*` (`n`). When `d_points` is given, also writes `∂L/∂s` for each input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_alpha: &[f64],
        d_fstar: &[f64],
        grads: &mut [f64],
        d_points: Option<&mut [f64]>,
    ) -> Result<()> {
        let n = cache.n;
        if d_alpha.len() != n * self.p || d_fstar.len() != n || grads.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "backward for {n} points with p = {} and {} params got {} / {} / {}",
                self.p,
                self.params.len(),
                d_alpha.len(),
                d_fstar.len(),
                grads.len()
            )));
        }
        let alpha = &cache.output.alpha;
        let mut d_logits = vec![0.0; n * self.p];
        for ((a, da), dl) in alpha
            .chunks_exact(self.p)
            .zip(d_alpha.chunks_exact(self.p))
            .zip(d_logits.chunks_exact_mut(self.p))
        {
            let masked = |j: usize| if a[j] > ALPHA_FLOOR { da[j] } else { 0.0 };
            let dot: f64 = (0..self.p).map(|j| a[j] * masked(j)).sum();
            for j in 0..self.p {
                dl[j] = a[j] * (masked(j) - dot);
            }
        }
        let raw = cache.fstar_acts.last().unwrap();
        let d_raw: Vec<f64> =
            raw.iter().zip(d_fstar).map(|(&r, &g)| g * self.config.link.derivative(r)).collect();

        let want_dx = d_points.is_some();
        let head_in: &[f64] = cache.trunk.last().map_or(&cache.feats, |v| v);
        let need_head_dx = want_dx || self.trunk.is_some();
        let da_in = self.alpha.backward(&self.params, head_in, &cache.alpha_acts, n, d_logits, grads, need_head_dx);
        let df_in = self.fstar.backward(&self.params, head_in, &cache.fstar_acts, n, d_raw, grads, need_head_dx);
        let d_feats = match (da_in, df_in) {
            (Some(mut a), Some(f)) => {
                for (x, y) in a.iter_mut().zip(&f) {
                    *x += y;
                }
                match &self.trunk {
                    Some(t) => t.backward(&self.params, &cache.feats, &cache.trunk, n, a, grads, want_dx),
                    None => Some(a),
                }
            }
            _ => None,
        };
        if let (Some(out), Some(df)) = (d_points, d_feats) {
            featurize_backward(self.manifold, &cache.points, &df, out);
        }
        Ok(())
    }
}

impl FlowModel for EgfModel {
    fn num_transforms(&self) -> usize {
        self.p
    }

    fn evaluate(&self, points: &[f64]) -> ModelOutput {
        let amb = self.manifold.ambient_dim();
        let mut out = ModelOutput { p: self.p, ..Default::default() };
        for chunk in points.chunks(EVAL_CHUNK * amb) {
            out.append(self.forward_cached(chunk).output);
        }
        out
    }
}

/// Input width after featurization: `(cos 2πx_k, sin 2πx_k)` pairs on the torus, raw coordinates on the sphere.
pub fn feature_width(manifold: Manifold) -> usize {
    match manifold {
        Manifold::Torus { dim } => 2 * dim,
        Manifold::Sphere { dim } => dim + 1,
    }
}

fn featurize(manifold: Manifold, points: &[f64]) -> Vec<f64> {
    match manifold {
        Manifold::Torus { .. } => points
            .iter()
            .flat_map(|&x| {
                let t = math::TAU * x;
                [math::cos(t), math::sin(t)]
            })
            .collect(),
        Manifold::Sphere { .. } => points.to_vec(),
    }
}

fn featurize_backward(manifold: Manifold, points: &[f64], d_feats: &[f64], out: &mut [f64]) {
    match manifold {
        Manifold::Torus { .. } => {
            for (k, &x) in points.iter().enumerate() {
                let t = math::TAU * x;
                out[k] = math::TAU * (-math::sin(t) * d_feats[2 * k] + math::cos(t) * d_feats[2 * k + 1]);
            }
        }
        Manifold::Sphere { .. } => out.copy_from_slice(d_feats),
    }
}

fn softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = math::exp(l - max);
        sum += *o;
    }
    for o in out.iter_mut() {
        *o = (*o / sum).max(ALPHA_FLOOR);
    }
}

/// A `rows x cols` matrix with orthonormal rows (if `rows <= cols`) or columns.
fn orthogonal<R: rand::Rng>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    let (long, short) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    // `short` orthonormal vectors of length `long`, by twice-applied Gram-Schmidt.
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(short);
    while q.len() < short {
        let mut v: Vec<f64> = (0..long).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for u in &q {
                let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(u) {
                    *x -= dot * y;
                }
            }
        }
        let norm = math::sqrt(v.iter().map(|x| x * x).sum());
        if norm > 1e-6 {
            q.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let mut w = vec![0.0; rows * cols];
    for (k, u) in q.iter().enumerate() {
        for (l, &x) in u.iter().enumerate() {
            if rows >= cols {
                w[l * cols + k] = x;
            } else {
                w[k * cols + l] = x;
            }
        }
    }
    w
}

/// Exponential interpolation from `lr0` to `lr_min` over `decay_steps`, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LrSchedule {
    pub lr0: f64,
    pub lr_min: f64,
    pub decay_steps: u64,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule { lr0: lr, lr_min: lr, decay_steps: 1 }
    }

    pub fn at(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || self.lr0 <= 0.0 || self.lr_min <= 0.0 {
            return self.lr0;
        }
        let frac = step.min(self.decay_steps) as f64 / self.decay_steps as f64;
        self.lr0 * math::powf(self.lr_min / self.lr0, frac)
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamW {
    pub fn new(n_params: usize, schedule: LrSchedule, weight_decay: f64) -> Self {
        AdamW {
            schedule,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// Learning rate the next update will use.
    pub fn lr(&self) -> f64 {
        self.schedule.at(self.step)
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tracks {} parameters, got {} / {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        let lr = self.lr();
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - powi(self.beta1, t);
        let bc2 = 1.0 - powi(self.beta2, t);
        for i in 0..params.len() {
            let g = grads[i];
            params[i] -= lr * self.weight_decay * params[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (math::sqrt(v_hat) + self.eps);
        }
        Ok(())
    }
}

fn powi(x: f64, n: i32) -> f64 {
    math::powf(x, n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthogonality_defect;

    fn count(in_w: usize, hidden: &[usize], out: usize) -> usize {
        let mut widths = vec![in_w];
        widths.extend_from_slice(hidden);
        widths.push(out);
        widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    #[test]
    fn parameter_count() {
        let m = EgfModel::new(Manifold::torus(2), 16, ModelConfig::new(&[32; 5]), 0).unwrap();
        assert_eq!(m.num_params(), count(4, &[32; 5], 16) + count(4, &[32; 5], 1));
        assert_eq!(m.num_params(), 4 * 32 + 32 + 4 * (32 * 32 + 32) + 32 * 16 + 16 + 4 * 32 + 32 + 4 * (32 * 32 + 32) + 33);
        let mut cfg = ModelConfig::new(&[8, 8]);
        cfg.shared_trunk = true;
        let m = EgfModel::new(Manifold::sphere(2), 6, cfg, 0).unwrap();
        assert_eq!(m.num_params(), count(3, &[8], 8) + (8 * 6 + 6) + (8 + 1));
    }

    #[test]
    fn bad_layouts() {
        assert!(matches!(
            EgfModel::new(Manifold::torus(2), 4, ModelConfig::new(&[]), 0),
            Err(Error::BadLayout(_))
        ));
        assert!(matches!(
            EgfModel::new(Manifold::torus(2), 4, ModelConfig::new(&[8, 0]), 0),
            Err(Error::BadLayout(_))
        ));
    }

    #[test]
    fn init_is_orthogonal_and_deterministic() {
        let a = EgfModel::new(Manifold::torus(2), 16, ModelConfig::new(&[32; 5]), 3).unwrap();
        let b = EgfModel::new(Manifold::torus(2), 16, ModelConfig::new(&[32; 5]), 3).unwrap();
        assert_eq!(a.params(), b.params());
        for t in a.tensors().iter().filter(|t| t.name.ends_with("weight")) {
            let w = &a.params()[t.range()];
            let defect = if t.rows >= t.cols {
                orthogonality_defect(t.rows, t.cols, w)
            } else {
                orthogonality_defect(t.cols, t.rows, &crate::linalg::transpose_rect(t.rows, t.cols, w))
            };
            assert!(defect < 1e-8, "{}: {defect}", t.name);
        }
        for t in a.tensors().iter().filter(|t| t.name.ends_with("bias")) {
            assert!(a.params()[t.range()].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn zero_weights_give_uniform_policy() {
        let m = EgfModel::zeroed(Manifold::torus(2), 4, ModelConfig::new(&[8]), 0).unwrap();
        let out = m.forward(&[0.3, 0.9]).unwrap();
        assert!(out.alpha.iter().all(|&a| (a - 0.25).abs() < 1e-15));
        assert!((out.fstar[0] - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn outputs_are_valid() {
        let m = EgfModel::new(Manifold::torus(2), 16, ModelConfig::new(&[32; 3]), 5).unwrap();
        let pts = crate::manifold::uniform_sample(Manifold::torus(2), 10_000, 1);
        let flat: Vec<f64> = pts.iter().flat_map(|p| p.iter().copied()).collect();
        let out = m.evaluate(&flat);
        for i in 0..out.len() {
            assert!((out.alpha_row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(out.fstar[i] >= 0.0);
        }
    }

    #[test]
    fn single_linear_layer_gradient() {
        // L = f*², so the last weight row gets 2 f* softplus'(raw) h.
        let m = EgfModel::new(Manifold::sphere(2), 1, ModelConfig::new(&[3]), 1).unwrap();
        let x = [0.6, 0.0, 0.8];
        let cache = m.forward_cached(&x);
        let raw = cache.fstar_acts.last().unwrap()[0];
        let sig = math::sigmoid(raw);
        let f = cache.output.fstar[0];
        let mut g = vec![0.0; m.num_params()];
        m.backward(&cache, &[0.0], &[2.0 * f], &mut g, None).unwrap();
        let last = m.tensors().iter().find(|t| t.name == "fstar.1.weight").unwrap().clone();
        let h = &cache.fstar_acts[0];
        for k in 0..3 {
            assert!((g[last.offset + k] - 2.0 * f * sig * h[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let m = EgfModel::new(Manifold::torus(2), 4, ModelConfig::new(&[8, 8]), 2).unwrap();
        let pts = [0.1, 0.2, 0.7, 0.4];
        let cache = m.forward_cached(&pts);
        let mut g = vec![0.0; m.num_params()];
        let mut dx = vec![1.0; 4];
        m.backward(&cache, &[0.0; 8], &[0.0; 2], &mut g, Some(&mut dx)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adamw_single_step() {
        let mut opt = AdamW::new(1, LrSchedule::constant(0.1), 0.0);
        let mut w = [1.0];
        opt.update(&mut w, &[1.0]).unwrap();
        assert!((w[0] - 0.9).abs() < 1e-8);
        let mut opt = AdamW::new(2, LrSchedule::constant(0.1), 0.0);
        let mut w = [1.0, -2.0];
        opt.update(&mut w, &[0.0, 0.0]).unwrap();
        assert_eq!(w, [1.0, -2.0]);
    }

    #[test]
    fn schedule_endpoints() {
        let s = LrSchedule { lr0: 1e-3, lr_min: 1e-5, decay_steps: 3000 };
        assert_eq!(s.at(0), 1e-3);
        assert!((s.at(3000) - 1e-5).abs() < 1e-18);
        assert!((s.at(10_000) - 1e-5).abs() < 1e-18);
        let mut prev = f64::INFINITY;
        for k in 0..=3000 {
            assert!(s.at(k) <= prev);
            prev = s.at(k);
        }
    }
}
