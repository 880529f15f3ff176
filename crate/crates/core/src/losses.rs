//! Training objectives and their parameter gradients.
//!
//! Every loss is a sum of per-state terms `g(f*(s), f*_←(s))`. A term's
//! derivative with respect to `f*_←(s)` is distributed over the preimage rows
//! `Φ_i^{-1}(s)`, where it reaches both heads and, for trainable families,
//! the translations. States, trajectory weights and target densities are
//! treated as constants.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::flow::{Density, Egf};
use crate::math;
use crate::model::FlowModel;
use crate::sampler::{Direction, Trajectory};

/// States per chunk in a forward/backward sweep.
const STATE_CHUNK: usize = 256;

/// Weights of the loss terms.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LossConfig {
    /// Exponent of the stable FM loss; the defect is taken in absolute value.
    pub q: u32,
    /// Coefficient `b` on the weak-FM term.
    pub weakfm_coeff: f64,
    /// Coefficient on the cross-entropy term.
    pub ce_coeff: f64,
    /// Coefficient on the outflow regularizer.
    pub reg_coeff: f64,
    /// Weak-FM penalty `|δf_init|^e`, `e ∈ {1, 2}`.
    pub weakfm_exponent: u32,
    /// Clamp applied to densities inside logarithms and ratios.
    pub eps_log: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { q: 2, weakfm_coeff: 1.0, ce_coeff: 1.0, reg_coeff: 0.0, weakfm_exponent: 2, eps_log: 1e-30 }
    }
}

/// Gradients of a loss with respect to model parameters and to every map's own translation.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    /// `p x d`, row-major; zero unless the family has trainable translations.
    pub translations: Vec<f64>,
}

impl Gradients {
    pub fn zeros<M: FlowModel>(egf: &Egf<M>, n_params: usize) -> Self {
        Gradients { params: vec![0.0; n_params], translations: vec![0.0; egf.p() * egf.manifold().ambient_dim()] }
    }

    pub fn add_scaled(&mut self, other: &Gradients, c: f64) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            *a += c * b;
        }
        for (a, b) in self.translations.iter_mut().zip(&other.translations) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.params.iter_mut().chain(self.translations.iter_mut()).for_each(|x| *x *= c);
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.params.iter().chain(&self.translations).map(|x| x * x).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().chain(&self.translations).all(|x| x.is_finite())
    }
}

/// Values and derivative of one per-state term.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Term {
    pub value: f64,
    pub d_fstar: f64,
    pub d_inflow: f64,
}

/// Sums `term(j, f*(s_j), f*_←(s_j))` over the states and accumulates its gradient.
pub(crate) fn state_objective<F>(
    egf: &Egf,
    points: &[f64],
    need_inflow: bool,
    grads: &mut Gradients,
    term: F,
) -> f64
where
    F: Fn(usize, f64, f64) -> Term,
{
    let amb = egf.manifold().ambient_dim();
    let p = egf.p();
    let n = points.len() / amb;
    let trainable = need_inflow && egf.family.has_trainable();
    let mut total = 0.0;
    for start in (0..n).step_by(STATE_CHUNK) {
        let end = (start + STATE_CHUNK).min(n);
        let m = end - start;
        let states = &points[start * amb..end * amb];
        let mut rows = states.to_vec();
        if need_inflow {
            rows.extend(egf.preimages(states));
        }
        let cache = egf.model.forward_cached(&rows);
        let out = &cache.output;
        let n_rows = out.len();
        let mut d_alpha = vec![0.0; n_rows * p];
        let mut d_fstar = vec![0.0; n_rows];
        for j in 0..m {
            let s = &states[j * amb..(j + 1) * amb];
            let mut inflow = 0.0;
            if need_inflow {
                for i in 0..p {
                    let r = m + j * p + i;
                    inflow += out.alpha[r * p + i] * out.fstar[r] * egf.inverse_jacobian(i, s);
                }
            }
            let t = term(start + j, out.fstar[j], inflow);
            total += t.value;
            d_fstar[j] += t.d_fstar;
            if need_inflow && t.d_inflow != 0.0 {
                for i in 0..p {
                    let r = m + j * p + i;
                    let jac = egf.inverse_jacobian(i, s);
                    d_alpha[r * p + i] += t.d_inflow * out.fstar[r] * jac;
                    d_fstar[r] += t.d_inflow * out.alpha[r * p + i] * jac;
                }
            }
        }
        let mut d_rows = trainable.then(|| vec![0.0; n_rows * amb]);
        egf.model
            .backward(&cache, &d_alpha, &d_fstar, &mut grads.params, d_rows.as_deref_mut())
            .expect("gradient buffers are sized from the model");
        if let Some(d_rows) = d_rows {
            // Row m + j p + i holds Φ_i^{-1}(s_j) = Φ_{inv(i)}(s_j), whose translation enters additively.
            for j in 0..m {
                for i in 0..p {
                    let r = m + j * p + i;
                    let owner = egf.family.inverse_index()[i];
                    for c in 0..amb {
                        grads.translations[owner * amb + c] += d_rows[r * amb + c];
                    }
                }
            }
        }
    }
    total
}

fn flatten_states(trajs: &[Trajectory]) -> (Vec<f64>, usize) {
    let mut flat = Vec::new();
    let mut n = 0;
    for t in trajs {
        for s in &t.states {
            flat.extend_from_slice(s);
            n += 1;
        }
    }
    (flat, n)
}

/// `mean_s |f_init + f*_← - f_term - f*|^q` over the given states.
pub fn stable_fm_loss(egf: &Egf, f_term: &dyn Density, points: &[f64], q: u32) -> (f64, Gradients) {
    let amb = egf.manifold().ambient_dim();
    let n = points.len() / amb;
    let mut grads = Gradients::zeros(egf, egf.model.num_params());
    if n == 0 {
        return (0.0, grads);
    }
    let term_vals = f_term.density_batch(amb, points);
    let f_init: Vec<f64> = points.chunks_exact(amb).map(|s| egf.f_init(s)).collect();
    let q = q.max(1) as f64;
    let scale = 1.0 / n as f64;
    let total = state_objective(egf, points, true, &mut grads, |j, fs, inflow| {
        let d = f_init[j] + inflow - term_vals[j] - fs;
        let a = d.abs();
        let value = math::powf(a, q);
        let slope = if a == 0.0 { 0.0 } else { q * math::powf(a, q - 1.0) * d.signum() };
        Term { value: scale * value, d_fstar: -scale * slope, d_inflow: scale * slope }
    });
    (total, grads)
}

/// Mean over trajectories of `Σ_t log((f*_← + f_init) / (f* + f_term))²`.
pub fn divergence_fm_loss(egf: &Egf, f_term: &dyn Density, trajs: &[Trajectory], eps_log: f64) -> (f64, Gradients) {
    let amb = egf.manifold().ambient_dim();
    let (points, n) = flatten_states(trajs);
    let mut grads = Gradients::zeros(egf, egf.model.num_params());
    if n == 0 {
        return (0.0, grads);
    }
    let term_vals = f_term.density_batch(amb, &points);
    let f_init: Vec<f64> = points.chunks_exact(amb).map(|s| egf.f_init(s)).collect();
    let scale = 1.0 / trajs.len() as f64;
    let total = state_objective(egf, &points, true, &mut grads, |j, fs, inflow| {
        let num_raw = inflow + f_init[j];
        let den_raw = fs + term_vals[j];
        let num = num_raw.max(eps_log);
        let den = den_raw.max(eps_log);
        let l = math::ln(num / den);
        Term {
            value: scale * l * l,
            d_inflow: if num_raw > eps_log { scale * 2.0 * l / num } else { 0.0 },
            d_fstar: if den_raw > eps_log { -scale * 2.0 * l / den } else { 0.0 },
        }
    });
    (total, grads)
}

/// Mean over trajectories of `Σ_t f*(s_t)²`.
pub fn flow_regularizer(egf: &Egf, trajs: &[Trajectory]) -> (f64, Gradients) {
    let (points, n) = flatten_states(trajs);
    let mut grads = Gradients::zeros(egf, egf.model.num_params());
    if n == 0 {
        return (0.0, grads);
    }
    let scale = 1.0 / trajs.len() as f64;
    let total = state_objective(egf, &points, false, &mut grads, |_, fs, _| Term {
        value: scale * fs * fs,
        d_fstar: scale * 2.0 * fs,
        d_inflow: 0.0,
    });
    (total, grads)
}

/// Replay-buffer weights `p_t` recomputed from the current flow.
///
/// Forward: `Π_{t'<t} (1 + f̂_term / f*)^{-1}`; backward: `Π_{t'<t} (1 + |δf_init| / f*_←)^{-1}`.
pub fn trajectory_weights<M: FlowModel>(egf: &Egf<M>, traj: &Trajectory, eps: f64) -> Vec<f64> {
    let flat: Vec<f64> = traj.states.iter().flat_map(|s| s.iter().copied()).collect();
    let mut w = 1.0;
    egf.local_states(&flat)
        .into_iter()
        .map(|st| {
            let cur = w;
            let ratio = match traj.direction {
                Direction::Forward => st.f_hat_term / st.fstar_fwd.max(eps),
                Direction::Backward => -st.delta_init / st.fstar_bwd.max(eps),
            };
            w /= 1.0 + ratio;
            cur
        })
        .collect()
}

/// Components of the KL-weakFM objective.
#[derive(Clone, Debug, PartialEq)]
pub struct KlWeakFm {
    pub total: f64,
    /// `(1 / (|B→| + |B←|)) Σ_traj Σ_t |δf_init(s_t)|^e p_t`, before the coefficient.
    pub weakfm: f64,
    /// `-mean log f̂_term` over the target batch, before the coefficient.
    pub ce: f64,
    /// Every target point had `f̂_term` at or below the clamp.
    pub dead_reward: bool,
    pub grads: Gradients,
}

/// `b · weakFM + c · CE` over the replay buffers and a batch of target points.
pub fn kl_weakfm_loss(
    egf: &Egf,
    forward: &[Trajectory],
    backward: &[Trajectory],
    kappa: &[f64],
    cfg: &LossConfig,
) -> Result<KlWeakFm> {
    let amb = egf.manifold().ambient_dim();
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for t in forward.iter().chain(backward) {
        for (s, w) in t.states.iter().zip(t.survival_weights()) {
            points.extend_from_slice(s);
            weights.push(w);
        }
    }
    let n_traj = forward.len() + backward.len();
    let n_buffer = weights.len();
    let n_kappa = kappa.len() / amb;
    points.extend_from_slice(kappa);
    let f_init: Vec<f64> = points.chunks_exact(amb).map(|s| egf.f_init(s)).collect();
    let e = cfg.weakfm_exponent.max(1) as f64;
    let eps = cfg.eps_log;
    let wf_scale = if n_traj > 0 { 1.0 / n_traj as f64 } else { 0.0 };
    let ce_scale = if n_kappa > 0 { 1.0 / n_kappa as f64 } else { 0.0 };
    let mut grads = Gradients::zeros(egf, egf.model.num_params());
    let parts = core::cell::Cell::new((0.0f64, 0.0f64, 0usize));
    state_objective(egf, &points, true, &mut grads, |j, fs, inflow| {
        let d = f_init[j] + inflow - fs;
        let (wf, ce, dead) = parts.get();
        if j < n_buffer {
            if d >= 0.0 {
                return Term::default();
            }
            let a = -d;
            let w = weights[j] * wf_scale;
            let value = w * math::powf(a, e);
            // d|d|^e/dd = -e |d|^{e-1} for d < 0
            let slope = -w * e * math::powf(a, e - 1.0);
            parts.set((wf + value, ce, dead));
            let c = cfg.weakfm_coeff;
            Term { value: c * value, d_fstar: -c * slope, d_inflow: c * slope }
        } else {
            let f_hat = d.max(0.0);
            let clamped = f_hat <= eps;
            let value = -ce_scale * math::ln(f_hat.max(eps));
            parts.set((wf, ce + value, dead + clamped as usize));
            let slope = if clamped { 0.0 } else { -ce_scale / f_hat };
            let c = cfg.ce_coeff;
            Term { value: c * value, d_fstar: -c * slope, d_inflow: c * slope }
        }
    });
    let (weakfm, ce, dead) = parts.get();
    let dead_reward = n_kappa > 0 && dead == n_kappa;
    if dead_reward {
        log::warn!("dead-reward: f̂_term is at the clamp on every target point");
    }
    Ok(KlWeakFm { total: cfg.weakfm_coeff * weakfm + cfg.ce_coeff * ce, weakfm, ce, dead_reward, grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::InitDensity;
    use crate::manifold::{Manifold, Point};
    use crate::model::{EgfModel, ModelConfig};
    use crate::transforms::{build_family, FamilySpec, Preset};

    fn egf_with(model: EgfModel) -> Egf {
        let fam = build_family(Manifold::torus(2), &FamilySpec::preset(Preset::TorusIl4)).unwrap();
        Egf::new(fam, model, InitDensity::Uniform).unwrap()
    }

    fn traj(states: &[[f64; 2]]) -> Trajectory {
        Trajectory {
            states: states.iter().map(|s| Point::new(s)).collect(),
            transform_indices: vec![0; states.len() - 1],
            stop_probs: vec![0.0; states.len()],
            tau: Some(states.len()),
            direction: Direction::Forward,
            degenerate: false,
        }
    }

    /// A zero-weight model whose outflow is the constant `f`.
    fn constant_flow(f: f64) -> Egf {
        let mut cfg = ModelConfig::new(&[4]);
        cfg.link = crate::model::Link::Exp;
        let mut m = EgfModel::zeroed(Manifold::torus(2), 4, cfg, 0).unwrap();
        let bias = m.tensors().iter().find(|t| t.name == "fstar.1.bias").unwrap().offset;
        m.params_mut()[bias] = f.ln();
        egf_with(m)
    }

    #[test]
    fn stable_fm_constant_defect() {
        // f* = tiny, so f*_← ≈ 0 too, and f_init = 1 with f_term = 0 gives defect 1
        let egf = constant_flow(1e-300);
        let pts = [0.1, 0.2, 0.5, 0.9];
        let zero = |_: &[f64]| 0.0;
        let (l, _) = stable_fm_loss(&egf, &zero, &pts, 2);
        assert!((l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stable_fm_zero_on_exact_flow() {
        // uniform policy, constant outflow, f_term = f_init: flow matching holds
        let egf = constant_flow(3.0);
        let one = |_: &[f64]| 1.0;
        let pts = [0.3, 0.3, 0.7, 0.1];
        let (l, g) = stable_fm_loss(&egf, &one, &pts, 1);
        assert!(l.abs() < 1e-12);
        assert!(g.params.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn divergence_examples() {
        let egf = constant_flow(2.0);
        let one = |_: &[f64]| 1.0;
        let (l, _) = divergence_fm_loss(&egf, &one, &[traj(&[[0.2, 0.4], [0.6, 0.1]])], 1e-30);
        assert!(l.abs() < 1e-12);
        // numerator f*_← + f_init = 2 + 1, denominator f* + f_term chosen as 3 / e
        let f_term = |_: &[f64]| 3.0 / core::f64::consts::E - 2.0;
        let (l, _) = divergence_fm_loss(&egf, &f_term, &[traj(&[[0.2, 0.4]])], 1e-30);
        assert!((l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn divergence_is_scale_free_without_boundary_terms() {
        let zero = |_: &[f64]| 0.0;
        let trajs = [traj(&[[0.2, 0.4], [0.6, 0.1], [0.9, 0.9]])];
        let loss = |shift: f64| {
            let mut cfg = ModelConfig::new(&[8]);
            cfg.link = crate::model::Link::Exp;
            let mut m = EgfModel::new(Manifold::torus(2), 4, cfg, 3).unwrap();
            let bias = m.tensors().iter().find(|t| t.name == "fstar.1.bias").unwrap().offset;
            m.params_mut()[bias] += shift;
            let mut egf = egf_with(m);
            // f_init underflows to 0 away from (0.5, 0.5)
            egf.init = InitDensity::WrappedGaussian { mean: vec![0.5, 0.5], sigma: 1e-3 };
            divergence_fm_loss(&egf, &zero, &trajs, 1e-30).0
        };
        let base = loss(0.0);
        assert!(base > 0.0);
        assert!((loss(5.0f64.ln()) - base).abs() < 1e-10 * base.max(1.0));
    }

    #[test]
    fn regularizer_examples() {
        let egf = constant_flow(2.0);
        let (l, _) = flow_regularizer(&egf, &[traj(&[[0.1, 0.1], [0.2, 0.2], [0.3, 0.3]])]);
        assert!((l - 12.0).abs() < 1e-12);
        let egf = constant_flow(1e-300);
        let (l, _) = flow_regularizer(&egf, &[traj(&[[0.1, 0.1]])]);
        assert_eq!(l, 0.0);
    }

    #[test]
    fn circulation_leaves_divergence_but_grows_regularizer() {
        // f_init = f_term = 1 with a uniform policy flow-matches for any constant outflow c
        let one = |_: &[f64]| 1.0;
        let trajs = [traj(&[[0.1, 0.7], [0.5, 0.5], [0.9, 0.2]])];
        let mut prev_reg = -1.0;
        for c in [0.5, 1.0, 2.0, 4.0] {
            let egf = constant_flow(c);
            let (div, _) = divergence_fm_loss(&egf, &one, &trajs, 1e-30);
            let (reg, _) = flow_regularizer(&egf, &trajs);
            assert!(div.abs() < 1e-12);
            assert!(reg > prev_reg);
            prev_reg = reg;
        }
    }

    #[test]
    fn forward_weights_examples() {
        let egf = constant_flow(1.0);
        // f̂_term = f_init + f*_← - f* = 1 = f*, so each factor is 1/2
        let t = traj(&[[0.1, 0.1], [0.2, 0.3], [0.5, 0.5], [0.7, 0.1]]);
        let w = trajectory_weights(&egf, &t, 1e-30);
        for (k, wk) in w.iter().enumerate() {
            assert!((wk - 0.5f64.powi(k as i32)).abs() < 1e-12);
        }
        // with f_init = 0 the virtual terminal vanishes and every weight is 1
        let mut egf = egf;
        egf.init = InitDensity::WrappedGaussian { mean: vec![0.5, 0.5], sigma: 1e-3 };
        let t = traj(&[[0.1, 0.1], [0.2, 0.3]]);
        assert_eq!(trajectory_weights(&egf, &t, 1e-30), vec![1.0, 1.0]);
        let mut b = t.clone();
        b.direction = Direction::Backward;
        // δf_init = min(0, 0 + 1 - 1) = 0
        assert_eq!(trajectory_weights(&egf, &b, 1e-30), vec![1.0, 1.0]);
    }

    #[test]
    fn kl_weakfm_on_uniform_flow() {
        let egf = constant_flow(0.7);
        let kappa = [0.1, 0.2, 0.3, 0.4, 0.8, 0.9];
        let f = vec![traj(&[[0.1, 0.1], [0.4, 0.4]])];
        let cfg = LossConfig::default();
        let out = kl_weakfm_loss(&egf, &f, &f, &kappa, &cfg).unwrap();
        // δ ≡ 0 and f̂ ≡ 1 = the uniform target density: cross-entropy = entropy = 0
        assert!(out.weakfm.abs() < 1e-15);
        assert!(out.ce.abs() < 1e-12);
        assert!(!out.dead_reward);
    }

    #[test]
    fn kl_weakfm_scales_with_b() {
        let model = EgfModel::new(Manifold::torus(2), 4, ModelConfig::new(&[8]), 8).unwrap();
        let egf = egf_with(model);
        let f = vec![traj(&[[0.1, 0.1], [0.4, 0.4], [0.3, 0.8]])];
        let kappa = [0.1, 0.2];
        let mut cfg = LossConfig::default();
        let a = kl_weakfm_loss(&egf, &f, &f, &kappa, &cfg).unwrap();
        cfg.weakfm_coeff = 2.0;
        let b = kl_weakfm_loss(&egf, &f, &f, &kappa, &cfg).unwrap();
        assert_eq!(a.weakfm, b.weakfm);
        assert!((b.total - a.total - a.weakfm).abs() < 1e-12);
    }

    #[test]
    fn dead_reward_is_flagged() {
        // f_init vanishes at the target points and f*_← = f* exactly, so f̂_term = 0 there
        let mut egf = constant_flow(1.0);
        egf.init = InitDensity::WrappedGaussian { mean: vec![0.5, 0.5], sigma: 1e-3 };
        let out = kl_weakfm_loss(&egf, &[], &[], &[0.1, 0.1], &LossConfig::default()).unwrap();
        assert!(out.dead_reward);
        assert!(out.total.is_finite());
    }
}
