//! Training loops: RL against a known reward density, and imitation learning
//! from samples with forward and backward replay buffers.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::eval::{flow_mass, nll_from_values, DensityGrid, NllMode};
use crate::flow::{Density, Egf};
use crate::losses::{divergence_fm_loss, flow_regularizer, kl_weakfm_loss, stable_fm_loss, Gradients, LossConfig};
use crate::manifold::Point;
use crate::model::{AdamW, LrSchedule};
use crate::rng::stream_rng;
use crate::sampler::{sample_backward_batch, sample_forward_batch, trajectory_rngs, ChainOptions, Empirical, Trajectory};

/// Objective minimized at each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum LossKind {
    StableFm,
    DivergenceFm,
    KlWeakfm,
}

impl core::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stable-fm" => Ok(LossKind::StableFm),
            "divergence-fm" => Ok(LossKind::DivergenceFm),
            "kl-weakfm" => Ok(LossKind::KlWeakfm),
            _ => Err(Error::InvalidArgument(alloc::format!("unknown loss {s:?}"))),
        }
    }
}

/// Where the states of an RL batch come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum TrainDistribution {
    /// Uniform λ samples, each treated as a one-state trajectory.
    Uniform,
    /// States visited by forward chains of the current flow.
    #[default]
    OnTrajectory,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub steps: usize,
    pub loss: LossKind,
    pub distribution: TrainDistribution,
    /// RL: trajectories (or uniform points) per step. IL: target points per step.
    pub batch: usize,
    /// IL: trajectories per replay-buffer side.
    pub buffer: usize,
    /// IL: refill the buffers every this many steps.
    pub refill_every: usize,
    pub t_max: usize,
    /// IL: buffer chains stop once their survival weight drops below this.
    pub weight_floor: f64,
    pub lr0: f64,
    pub lr_min: f64,
    pub decay_steps: usize,
    pub weight_decay: f64,
    pub translation_lr: f64,
    /// Rescale the gradient to at most this norm; 0 disables clipping.
    pub grad_clip: f64,
    pub losses: LossConfig,
    pub eval: EvalConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            loss: LossKind::StableFm,
            distribution: TrainDistribution::OnTrajectory,
            batch: 512,
            buffer: 64,
            refill_every: 1,
            t_max: 64,
            weight_floor: 1e-3,
            lr0: 1e-3,
            lr_min: 1e-5,
            decay_steps: 3000,
            weight_decay: 0.0,
            translation_lr: 1e-3,
            grad_clip: 0.0,
            losses: LossConfig::default(),
            eval: EvalConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(alloc::format!("train config: {what}")));
        if self.batch == 0 || self.t_max == 0 || self.refill_every == 0 {
            return bad("batch, t_max and refill_every must be positive");
        }
        if self.loss == LossKind::KlWeakfm && self.buffer == 0 {
            return bad("buffer must be positive");
        }
        let finite = [self.lr0, self.lr_min, self.weight_decay, self.translation_lr, self.grad_clip, self.weight_floor];
        if finite.iter().any(|x| !x.is_finite() || *x < 0.0) || self.lr0 == 0.0 {
            return bad("learning rates and coefficients must be finite and nonnegative");
        }
        let l = &self.losses;
        if ![l.weakfm_coeff, l.ce_coeff, l.reg_coeff].iter().all(|x| x.is_finite() && *x >= 0.0) {
            return bad("loss coefficients must be finite and nonnegative");
        }
        if !(1..=2).contains(&l.q) || !(1..=2).contains(&l.weakfm_exponent) {
            return bad("q and weakfm_exponent must be 1 or 2");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EvalConfig {
    /// Evaluate every this many steps (and after the last); 0 only at the end.
    pub every: usize,
    /// λ-samples for the flow-mass estimate.
    pub n_mc: usize,
    /// Forward chains used for mean τ, censor rate and sample TV.
    pub n_chains: usize,
    /// Quadrature resolution (torus cells per side; sphere `n²` cells).
    pub grid: usize,
    /// Histogram resolution for sample TV (torus cells per side; sphere `n²` cells).
    pub tv_grid: usize,
    pub nll_mode: NllMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { every: 100, n_mc: 4096, n_chains: 2048, grid: 64, tv_grid: 32, nll_mode: NllMode::Normalized }
    }
}

/// One line of the metrics log. Fields that do not apply to the task are `None`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsRow {
    pub step: usize,
    pub loss_total: f64,
    /// Stable or divergence FM term.
    pub fm: Option<f64>,
    pub weakfm: Option<f64>,
    pub ce: Option<f64>,
    pub reg: Option<f64>,
    pub flow_mass: f64,
    pub flow_mass_se: f64,
    /// Mean stopping time of evaluation chains, censored chains counted as `t_max`.
    pub mean_tau: f64,
    pub censor_rate: f64,
    /// Sample-histogram TV to the target, when a target grid is known.
    pub tv: Option<f64>,
    pub nll_val: Option<f64>,
    /// `∫ f̂_term dλ` by quadrature.
    pub fhat_mass: Option<f64>,
}

/// Loss values of a single step.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct StepLoss {
    pub total: f64,
    pub fm: Option<f64>,
    pub weakfm: Option<f64>,
    pub ce: Option<f64>,
    pub reg: Option<f64>,
}

/// Reward density rescaled by a constant.
struct Scaled<'a> {
    inner: &'a dyn Density,
    scale: f64,
}

impl Density for Scaled<'_> {
    fn density_batch(&self, ambient: usize, points: &[f64]) -> Vec<f64> {
        let mut v = self.inner.density_batch(ambient, points);
        v.iter_mut().for_each(|x| *x *= self.scale);
        v
    }
}

enum Task<'a> {
    Rl { reward: Scaled<'a> },
    Il { train: &'a [Point], val: &'a [Point] },
}

// stream tags of the training run
const TAG_TRAJ: u8 = 2;
const TAG_UNIFORM: u8 = 3;
const TAG_FORWARD_BUF: u8 = 4;
const TAG_BACKWARD_BUF: u8 = 5;
const TAG_KAPPA: u8 = 6;
const TAG_EVAL: u8 = 7;
const TAG_MASS: u8 = 8;

/// Stateful optimizer loop over an [`Egf`].
pub struct Trainer<'a> {
    pub egf: Egf,
    cfg: TrainConfig,
    task: Task<'a>,
    opt: AdamW,
    translation_opt: Option<AdamW>,
    step: usize,
    forward_buf: Vec<Trajectory>,
    backward_buf: Vec<Trajectory>,
    quadrature: DensityGrid,
    tv_target: Option<DensityGrid>,
    pub metrics: Vec<MetricsRow>,
}

impl<'a> Trainer<'a> {
    /// RL against `reward`, which is rescaled to unit λ-mass so that it balances `F_init`.
    pub fn rl(egf: Egf, reward: &'a dyn Density, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.loss == LossKind::KlWeakfm {
            return Err(Error::InvalidArgument(String::from("kl-weakfm needs a dataset; use Trainer::il")));
        }
        let quadrature = DensityGrid::for_manifold(egf.manifold(), cfg.eval.grid)?;
        let z = quadrature.clone().filled(reward).integral();
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::DegenerateDensity(z));
        }
        let init_mass = quadrature.clone().filled(&|s: &[f64]| egf.f_init(s)).integral();
        let tv_target = Some(DensityGrid::for_manifold(egf.manifold(), cfg.eval.tv_grid)?.filled(reward));
        let task = Task::Rl { reward: Scaled { inner: reward, scale: init_mass / z } };
        Ok(Self::build(egf, cfg, task, quadrature, tv_target))
    }

    /// Imitation learning from `train` points, validated on `val`.
    pub fn il(egf: Egf, train: &'a [Point], val: &'a [Point], cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.loss != LossKind::KlWeakfm {
            return Err(Error::InvalidArgument(String::from("imitation learning uses the kl-weakfm loss")));
        }
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let quadrature = DensityGrid::for_manifold(egf.manifold(), cfg.eval.grid)?;
        Ok(Self::build(egf, cfg, Task::Il { train, val }, quadrature, None))
    }

    fn build(
        egf: Egf,
        cfg: TrainConfig,
        task: Task<'a>,
        quadrature: DensityGrid,
        tv_target: Option<DensityGrid>,
    ) -> Self {
        let schedule = LrSchedule { lr0: cfg.lr0, lr_min: cfg.lr_min, decay_steps: cfg.decay_steps as u64 };
        let opt = AdamW::new(egf.model.num_params(), schedule, cfg.weight_decay);
        let translation_opt = egf.family.has_trainable().then(|| {
            let sched = LrSchedule::constant(cfg.translation_lr);
            AdamW::new(egf.family.translation_param_count(), sched, 0.0)
        });
        Trainer {
            egf,
            cfg,
            task,
            opt,
            translation_opt,
            step: 0,
            forward_buf: Vec::new(),
            backward_buf: Vec::new(),
            quadrature,
            tv_target,
            metrics: Vec::new(),
        }
    }

    /// Replaces the sample-TV target grid (by default the reward for RL, none for IL).
    pub fn set_tv_target(&mut self, target: Option<DensityGrid>) {
        self.tv_target = target;
    }

    /// Factor applied to the RL reward so that it has the λ-mass of `F_init`.
    pub fn reward_scale(&self) -> Option<f64> {
        match &self.task {
            Task::Rl { reward } => Some(reward.scale),
            Task::Il { .. } => None,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// One gradient step. Leaves the model untouched if the loss is not finite.
    pub fn step(&mut self) -> Result<StepLoss> {
        let step = self.step as u64;
        let (loss, mut grads) = match &self.task {
            Task::Rl { reward } => self.rl_objective(reward, step),
            Task::Il { train, .. } => self.il_objective(train, step)?,
        };
        if !loss.total.is_finite() || !grads.is_finite() {
            return Err(Error::TrainingDiverged { step: self.step + 1 });
        }
        if self.cfg.grad_clip > 0.0 {
            let norm = grads.norm();
            if norm > self.cfg.grad_clip {
                grads.scale(self.cfg.grad_clip / norm);
            }
        }
        self.opt.update(self.egf.model.params_mut(), &grads.params)?;
        if let Some(topt) = &mut self.translation_opt {
            let g = self.egf.family.project_translation_grads(&grads.translations);
            let mut b = self.egf.family.translation_params();
            topt.update(&mut b, &g)?;
            self.egf.family.set_translation_params(&b)?;
        }
        self.step += 1;
        Ok(loss)
    }

    fn rl_objective(&self, reward: &Scaled<'_>, step: u64) -> (StepLoss, Gradients) {
        let egf = &self.egf;
        let cfg = &self.cfg;
        let manifold = egf.manifold();
        let trajs: Vec<Trajectory> = match cfg.distribution {
            TrainDistribution::OnTrajectory => {
                let mut rngs = trajectory_rngs(cfg.seed, TAG_TRAJ, step, 0, cfg.batch);
                sample_forward_batch(egf, reward, &ChainOptions::stopping(cfg.t_max), &mut rngs)
            }
            TrainDistribution::Uniform => {
                let mut rng = stream_rng(cfg.seed, crate::rng::stream_id(TAG_UNIFORM, step, 0));
                (0..cfg.batch).map(|_| Trajectory::single(manifold.sample_uniform(&mut rng))).collect()
            }
        };
        let (fm, mut grads) = match cfg.loss {
            LossKind::StableFm => {
                let flat: Vec<f64> = trajs.iter().flat_map(|t| t.states.iter().flat_map(|s| s.iter().copied())).collect();
                stable_fm_loss(egf, reward, &flat, cfg.losses.q)
            }
            _ => divergence_fm_loss(egf, reward, &trajs, cfg.losses.eps_log),
        };
        let mut total = fm;
        let mut reg = None;
        if cfg.losses.reg_coeff > 0.0 {
            let (r, g) = flow_regularizer(egf, &trajs);
            total += cfg.losses.reg_coeff * r;
            grads.add_scaled(&g, cfg.losses.reg_coeff);
            reg = Some(r);
        }
        (StepLoss { total, fm: Some(fm), reg, ..StepLoss::default() }, grads)
    }

    fn il_objective(&mut self, train: &[Point], step: u64) -> Result<(StepLoss, Gradients)> {
        let cfg = &self.cfg;
        if self.step % cfg.refill_every == 0 || self.forward_buf.is_empty() {
            let opts = ChainOptions::weighted(cfg.t_max, cfg.weight_floor);
            let vt = self.egf.virtual_terminal(None);
            let mut rngs = trajectory_rngs(cfg.seed, TAG_FORWARD_BUF, step, 0, cfg.buffer);
            self.forward_buf = sample_forward_batch(&self.egf, &vt, &opts, &mut rngs);
            let mut rngs = trajectory_rngs(cfg.seed, TAG_BACKWARD_BUF, step, 0, cfg.buffer);
            self.backward_buf = sample_backward_batch(&self.egf, &Empirical(train), &opts, &mut rngs)?;
        }
        let mut rng = stream_rng(cfg.seed, crate::rng::stream_id(TAG_KAPPA, step, 0));
        let kappa: Vec<f64> =
            (0..cfg.batch).flat_map(|_| train[rng.random_range(0..train.len())].iter().copied()).collect();
        let out = kl_weakfm_loss(&self.egf, &self.forward_buf, &self.backward_buf, &kappa, &cfg.losses)?;
        let loss = StepLoss { total: out.total, weakfm: Some(out.weakfm), ce: Some(out.ce), ..StepLoss::default() };
        Ok((loss, out.grads))
    }

    /// Evaluates the current flow and appends a metrics row.
    pub fn evaluate(&mut self, loss: &StepLoss) -> Result<MetricsRow> {
        let egf = &self.egf;
        let cfg = &self.cfg;
        let manifold = egf.manifold();
        let amb = manifold.ambient_dim();
        let step = self.step as u64;
        let mut rng = stream_rng(cfg.seed, crate::rng::stream_id(TAG_MASS, step, 0));
        let (mass, mass_se) = flow_mass(&egf.model, manifold, cfg.eval.n_mc, &mut rng);

        let vt = egf.virtual_terminal(None);
        let f_term: &dyn Density = match &self.task {
            Task::Rl { reward } => reward,
            Task::Il { .. } => &vt,
        };
        let mut rngs = trajectory_rngs(cfg.seed, TAG_EVAL, step, 0, cfg.eval.n_chains);
        let chains = sample_forward_batch(egf, f_term, &ChainOptions::stopping(cfg.t_max), &mut rngs);
        let censored = chains.iter().filter(|t| t.tau.is_none()).count();
        let mean_tau =
            chains.iter().map(|t| t.tau.unwrap_or(cfg.t_max) as f64).sum::<f64>() / chains.len().max(1) as f64;
        let censor_rate = censored as f64 / chains.len().max(1) as f64;
        let tv = match &self.tv_target {
            Some(target) => {
                let kept: Vec<Point> = chains.iter().filter(|t| t.tau.is_some()).map(|t| t.last().clone()).collect();
                if kept.is_empty() {
                    Some(1.0)
                } else {
                    let hist = target.clone().histogram(&kept);
                    Some(crate::eval::tv_grid(&hist, target)?)
                }
            }
            None => None,
        };
        let (nll_val, fhat_mass) = match &self.task {
            Task::Il { val, .. } => {
                let z = self.quadrature.clone().filled(&vt).integral();
                let nll = if val.is_empty() {
                    None
                } else {
                    let flat: Vec<f64> = val.iter().flat_map(|p| p.iter().copied()).collect();
                    let values = vt.density_batch(amb, &flat);
                    Some(nll_from_values(manifold, &values, z, cfg.eval.nll_mode).unwrap_or(f64::INFINITY))
                };
                (nll, Some(z))
            }
            Task::Rl { .. } => (None, None),
        };
        let row = MetricsRow {
            step: self.step,
            loss_total: loss.total,
            fm: loss.fm,
            weakfm: loss.weakfm,
            ce: loss.ce,
            reg: loss.reg,
            flow_mass: mass,
            flow_mass_se: mass_se,
            mean_tau,
            censor_rate,
            tv,
            nll_val,
            fhat_mass,
        };
        self.metrics.push(row.clone());
        Ok(row)
    }

    /// Runs the remaining step budget, evaluating on the configured cadence.
    /// `on_eval` sees the flow after each evaluation (for checkpoints and logging).
    pub fn run<E: From<Error>>(
        &mut self,
        on_eval: &mut dyn FnMut(&Egf, &MetricsRow) -> core::result::Result<(), E>,
    ) -> core::result::Result<(), E> {
        let every = self.cfg.eval.every;
        while self.step < self.cfg.steps {
            let loss = self.step()?;
            let due = (every > 0 && self.step % every == 0) || self.step == self.cfg.steps;
            if due {
                let row = self.evaluate(&loss)?;
                log::info!(
                    "step {} loss {:.4e} mass {:.3} tau {:.2} tv {:?} nll {:?}",
                    row.step,
                    row.loss_total,
                    row.flow_mass,
                    row.mean_tau,
                    row.tv,
                    row.nll_val
                );
                on_eval(&self.egf, &row)?;
            }
        }
        Ok(())
    }

    pub fn into_egf(self) -> Egf {
        self.egf
    }
}

/// RL training; returns the trained flow and its metrics log.
pub fn train_rl(egf: Egf, reward: &dyn Density, cfg: TrainConfig) -> Result<(Egf, Vec<MetricsRow>)> {
    let mut t = Trainer::rl(egf, reward, cfg)?;
    t.run::<Error>(&mut |_, _| Ok(()))?;
    let metrics = core::mem::take(&mut t.metrics);
    Ok((t.into_egf(), metrics))
}

/// Imitation learning; returns the trained flow and its metrics log.
pub fn train_il(egf: Egf, train: &[Point], val: &[Point], cfg: TrainConfig) -> Result<(Egf, Vec<MetricsRow>)> {
    let mut t = Trainer::il(egf, train, val, cfg)?;
    t.run::<Error>(&mut |_, _| Ok(()))?;
    let metrics = core::mem::take(&mut t.metrics);
    Ok((t.into_egf(), metrics))
}
