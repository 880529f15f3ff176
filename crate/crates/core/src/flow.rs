//! An EGF assembled from a transform family, a policy model and an initial density.
//!
//! With `y_i = Φ_i^{-1}(s)` the star inflow is
//! `f*_←(s) = Σ_i α^i(y_i) f*(y_i) |det J_s Φ_i^{-1}|` and the backward policy
//! is `α_←^i(s) = α^i(y_i) f*(y_i) |J| / f*_←(s)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::manifold::{Manifold, Point};
use crate::math;
use crate::model::{EgfModel, FlowModel, ModelOutput};
use crate::transforms::TransformFamily;
use crate::vmf::VonMisesFisher;

/// A nonnegative function on the manifold evaluated on contiguous batches of points.
pub trait Density {
    /// Values at `points.len() / ambient` points.
    fn density_batch(&self, ambient: usize, points: &[f64]) -> Vec<f64>;
}

impl<F: Fn(&[f64]) -> f64> Density for F {
    fn density_batch(&self, ambient: usize, points: &[f64]) -> Vec<f64> {
        points.chunks_exact(ambient).map(self).collect()
    }
}

/// The initial density `f_init`, always of total mass 1.
#[derive(Clone, Debug, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields))]
pub enum InitDensity {
    /// The normalized volume measure itself.
    #[default]
    Uniform,
    /// vMF bump on `S^2`.
    VonMisesFisher { mean: [f64; 3], kappa: f64 },
    /// Product of wrapped normals on the torus.
    WrappedGaussian { mean: Vec<f64>, sigma: f64 },
}

/// Images summed on each side when evaluating a wrapped normal.
const WRAP_IMAGES: i32 = 4;

impl InitDensity {
    pub fn validate(&self, manifold: Manifold) -> Result<()> {
        match self {
            InitDensity::Uniform => Ok(()),
            InitDensity::VonMisesFisher { mean, kappa } => {
                if manifold != Manifold::sphere(2) {
                    return Err(Error::Unsupported(alloc::string::String::from("vMF initial density needs S^2")));
                }
                VonMisesFisher::new(*mean, *kappa).map(|_| ())
            }
            InitDensity::WrappedGaussian { mean, sigma } => {
                if !manifold.is_torus() {
                    return Err(Error::Unsupported(alloc::string::String::from(
                        "wrapped Gaussian initial density needs a torus",
                    )));
                }
                manifold.check_dim(mean)?;
                if !(*sigma > 0.0) {
                    return Err(Error::InvalidArgument(alloc::format!("wrapped Gaussian sigma {sigma} must be positive")));
                }
                Ok(())
            }
        }
    }

    pub fn density(&self, s: &[f64]) -> f64 {
        match self {
            InitDensity::Uniform => 1.0,
            InitDensity::VonMisesFisher { mean, kappa } => VonMisesFisher { mean: *mean, kappa: *kappa }.density(s),
            InitDensity::WrappedGaussian { mean, sigma } => {
                let norm = 1.0 / (sigma * math::sqrt(math::TAU));
                s.iter()
                    .zip(mean)
                    .map(|(&x, &m)| {
                        (-WRAP_IMAGES..=WRAP_IMAGES)
                            .map(|k| {
                                let z = (x - m + k as f64) / sigma;
                                norm * math::exp(-0.5 * z * z)
                            })
                            .sum::<f64>()
                    })
                    .product()
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, manifold: Manifold, rng: &mut R) -> Point {
        match self {
            InitDensity::Uniform => manifold.sample_uniform(rng),
            InitDensity::VonMisesFisher { mean, kappa } => VonMisesFisher { mean: *mean, kappa: *kappa }.sample(rng),
            InitDensity::WrappedGaussian { mean, sigma } => {
                let mut p = Point::zeros(mean.len());
                for (x, m) in p.iter_mut().zip(mean) {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    *x = m + sigma * z;
                }
                manifold.canonicalize(&mut p);
                p
            }
        }
    }
}

/// Everything the flow defines at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalFlowState {
    pub alpha_fwd: Vec<f64>,
    pub fstar_fwd: f64,
    /// Star inflow `f*_←(s)`.
    pub fstar_bwd: f64,
    /// Backward policy; `None` where the inflow vanishes.
    pub alpha_bwd: Option<Vec<f64>>,
    pub f_init: f64,
    /// Negative part `min(0, f_init + f*_← - f*)`.
    pub delta_init: f64,
    /// Positive part `max(0, f_init + f*_← - f*)`.
    pub f_hat_term: f64,
}

/// Forward outputs plus inflow quantities for a batch of states.
#[derive(Clone, Debug, PartialEq)]
pub struct InflowEval {
    pub p: usize,
    pub alpha_fwd: Vec<f64>,
    pub fstar_fwd: Vec<f64>,
    pub fstar_bwd: Vec<f64>,
    /// `n x p`; rows are zero where the inflow vanishes.
    pub alpha_bwd: Vec<f64>,
}

impl InflowEval {
    pub fn len(&self) -> usize {
        self.fstar_fwd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fstar_fwd.is_empty()
    }
}

/// Hazard `f_term / (f_term + f*)` of stopping at a state.
pub fn stop_probability(f_term: f64, fstar_fwd: f64) -> Result<f64> {
    let total = f_term + fstar_fwd;
    if total <= 0.0 {
        return Err(Error::DegenerateState);
    }
    Ok(f_term / total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Egf<M = EgfModel> {
    pub family: TransformFamily,
    pub model: M,
    pub init: InitDensity,
}

impl<M: FlowModel> Egf<M> {
    pub fn new(family: TransformFamily, model: M, init: InitDensity) -> Result<Self> {
        if model.num_transforms() != family.len() {
            return Err(Error::ShapeMismatch(alloc::format!(
                "model has {} policy outputs for a family of {} transforms",
                model.num_transforms(),
                family.len()
            )));
        }
        init.validate(family.manifold())?;
        Ok(Egf { family, model, init })
    }

    pub fn manifold(&self) -> Manifold {
        self.family.manifold()
    }

    pub fn p(&self) -> usize {
        self.family.len()
    }

    pub fn f_init(&self, s: &[f64]) -> f64 {
        self.init.density(s)
    }

    /// `Φ_i^{-1}(s_j)` for every state `j` and transform `i`, in row `j * p + i`.
    pub fn preimages(&self, points: &[f64]) -> Vec<f64> {
        let amb = self.manifold().ambient_dim();
        let p = self.p();
        let n = points.len() / amb;
        let mut out = vec![0.0; n * p * amb];
        for (j, s) in points.chunks_exact(amb).enumerate() {
            for i in 0..p {
                let row = (j * p + i) * amb;
                self.family.apply_inverse_into(i, s, &mut out[row..row + amb]);
            }
        }
        out
    }

    /// Jacobian factor `|det J_s Φ_i^{-1}|`.
    #[inline]
    pub fn inverse_jacobian(&self, i: usize, s: &[f64]) -> f64 {
        math::exp(self.family.inverse_of(i).log_abs_det_jacobian(s))
    }

    /// Combines model outputs at the states and their preimages.
    pub(crate) fn assemble_inflow(&self, points: &[f64], at_states: &ModelOutput, at_pre: &ModelOutput) -> InflowEval {
        let amb = self.manifold().ambient_dim();
        let p = self.p();
        let n = at_states.len();
        let mut fstar_bwd = vec![0.0; n];
        let mut alpha_bwd = vec![0.0; n * p];
        for j in 0..n {
            let s = &points[j * amb..(j + 1) * amb];
            let row = &mut alpha_bwd[j * p..(j + 1) * p];
            let mut total = 0.0;
            for (i, r) in row.iter_mut().enumerate() {
                let k = j * p + i;
                *r = at_pre.alpha[k * p + i] * at_pre.fstar[k] * self.inverse_jacobian(i, s);
                total += *r;
            }
            fstar_bwd[j] = total;
            if total > 0.0 {
                for r in row.iter_mut() {
                    *r /= total;
                }
            } else {
                row.fill(0.0);
            }
        }
        InflowEval { p, alpha_fwd: at_states.alpha.clone(), fstar_fwd: at_states.fstar.clone(), fstar_bwd, alpha_bwd }
    }

    /// Forward outputs, star inflow and backward policy at each state.
    pub fn evaluate_inflow(&self, points: &[f64]) -> InflowEval {
        let at_states = self.model.evaluate(points);
        let at_pre = self.model.evaluate(&self.preimages(points));
        self.assemble_inflow(points, &at_states, &at_pre)
    }

    pub fn inflow_density(&self, s: &[f64]) -> Result<f64> {
        self.manifold().check_dim(s)?;
        Ok(self.evaluate_inflow(s).fstar_bwd[0])
    }

    pub fn backward_policy(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.manifold().check_dim(s)?;
        let ev = self.evaluate_inflow(s);
        if ev.fstar_bwd[0] > 0.0 {
            Ok(ev.alpha_bwd)
        } else {
            Err(Error::NoInflow)
        }
    }

    pub fn local_states(&self, points: &[f64]) -> Vec<LocalFlowState> {
        let amb = self.manifold().ambient_dim();
        let p = self.p();
        let ev = self.evaluate_inflow(points);
        points
            .chunks_exact(amb)
            .enumerate()
            .map(|(j, s)| {
                let f_init = self.f_init(s);
                let (f_hat_term, delta_init) = defect_parts(f_init, ev.fstar_bwd[j], ev.fstar_fwd[j]);
                LocalFlowState {
                    alpha_fwd: ev.alpha_fwd[j * p..(j + 1) * p].to_vec(),
                    fstar_fwd: ev.fstar_fwd[j],
                    fstar_bwd: ev.fstar_bwd[j],
                    alpha_bwd: (ev.fstar_bwd[j] > 0.0).then(|| ev.alpha_bwd[j * p..(j + 1) * p].to_vec()),
                    f_init,
                    delta_init,
                    f_hat_term,
                }
            })
            .collect()
    }

    pub fn local_state(&self, s: &[f64]) -> Result<LocalFlowState> {
        self.manifold().check_dim(s)?;
        Ok(self.local_states(s).remove(0))
    }

    /// `f̂_term` as a [`Density`], optionally zeroed below `threshold`.
    pub fn virtual_terminal(&self, threshold: Option<f64>) -> VirtualTerminal<'_, M> {
        VirtualTerminal { egf: self, threshold }
    }

    /// `δf_init` at each state.
    pub fn delta_init_batch(&self, points: &[f64]) -> Vec<f64> {
        let amb = self.manifold().ambient_dim();
        let ev = self.evaluate_inflow(points);
        points
            .chunks_exact(amb)
            .enumerate()
            .map(|(j, s)| defect_parts(self.f_init(s), ev.fstar_bwd[j], ev.fstar_fwd[j]).1)
            .collect()
    }
}

/// `(max(0, D), min(0, D))` for the defect `D = f_init + f*_← - f*`.
#[inline]
pub fn defect_parts(f_init: f64, fstar_bwd: f64, fstar_fwd: f64) -> (f64, f64) {
    let d = f_init + fstar_bwd - fstar_fwd;
    if d >= 0.0 {
        (d, 0.0)
    } else {
        (0.0, d)
    }
}

/// The virtual terminal density of an EGF.
pub struct VirtualTerminal<'a, M> {
    egf: &'a Egf<M>,
    threshold: Option<f64>,
}

impl<M: FlowModel> Density for VirtualTerminal<'_, M> {
    fn density_batch(&self, ambient: usize, points: &[f64]) -> Vec<f64> {
        let ev = self.egf.evaluate_inflow(points);
        points
            .chunks_exact(ambient)
            .enumerate()
            .map(|(j, s)| {
                let f = defect_parts(self.egf.f_init(s), ev.fstar_bwd[j], ev.fstar_fwd[j]).0;
                match self.threshold {
                    Some(t) if f < t => 0.0,
                    _ => f,
                }
            })
            .collect()
    }
}
