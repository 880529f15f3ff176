//! Forward and backward sampling chains.
//!
//! Trajectories in a batch advance in lockstep so the model is evaluated on
//! one matrix per time step, but each trajectory draws only from its own
//! generator: results do not depend on how trajectories are grouped.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::flow::{Density, Egf};
use crate::manifold::Point;
use crate::model::FlowModel;
use crate::rng::{stream_id, stream_rng, StreamRng};

/// Denominator clamp used for stop hazards in weighted (non-stopping) mode.
pub const HAZARD_EPS: f64 = 1e-30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `s_1, s_2, ...`.
    pub states: Vec<Point>,
    /// `i_t` with `s_{t+1} = Φ_{i_t}(s_t)` forward or `Φ_{i_t}^{-1}(s_t)` backward.
    pub transform_indices: Vec<usize>,
    /// Per-state stop hazard. Backward chains record the analogue
    /// `|δf_init| / (|δf_init| + f*_←)`.
    pub stop_probs: Vec<f64>,
    /// Number of states up to and including the stop; `None` if censored.
    pub tau: Option<usize>,
    pub direction: Direction,
    /// The chain hit a state with `f_term = f* = 0` and was stopped there.
    pub degenerate: bool,
}

impl Trajectory {
    /// A forward trajectory made of the single state `s`.
    pub fn single(s: Point) -> Self {
        Trajectory {
            states: alloc::vec![s],
            transform_indices: Vec::new(),
            stop_probs: alloc::vec![1.0],
            tau: Some(1),
            direction: Direction::Forward,
            degenerate: false,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn is_censored(&self) -> bool {
        self.tau.is_none()
    }

    /// The final state.
    pub fn last(&self) -> &Point {
        self.states.last().expect("trajectories hold at least one state")
    }

    /// `p_t = Π_{t' < t} (1 - h_{t'})` from the recorded hazards; `p_1 = 1`.
    pub fn survival_weights(&self) -> Vec<f64> {
        let mut w = 1.0;
        self.stop_probs
            .iter()
            .map(|h| {
                let cur = w;
                w *= 1.0 - h;
                cur
            })
            .collect()
    }
}

/// How chains are run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainOptions {
    /// Maximal number of states per trajectory.
    pub t_max: usize,
    /// Draw the stopping time; otherwise run to `t_max` recording hazards.
    pub stochastic_stop: bool,
    /// In weighted mode, end a trajectory once its survival weight drops below this.
    pub weight_floor: f64,
}

impl ChainOptions {
    pub fn stopping(t_max: usize) -> Self {
        ChainOptions { t_max, stochastic_stop: true, weight_floor: 0.0 }
    }

    pub fn weighted(t_max: usize, weight_floor: f64) -> Self {
        ChainOptions { t_max, stochastic_stop: false, weight_floor }
    }
}

fn categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

struct Running {
    traj: Trajectory,
    weight: f64,
    done: bool,
}

fn flatten(states: &[&Point]) -> Vec<f64> {
    states.iter().flat_map(|p| p.iter().copied()).collect()
}

/// Runs one forward chain per generator in `rngs`, with `s_1 ∼ F_init`.
pub fn sample_forward_batch<M: FlowModel, R: Rng>(
    egf: &Egf<M>,
    f_term: &dyn Density,
    opts: &ChainOptions,
    rngs: &mut [R],
) -> Vec<Trajectory> {
    let manifold = egf.manifold();
    let amb = manifold.ambient_dim();
    let t_max = opts.t_max.max(1);
    let mut runs: Vec<Running> = rngs
        .iter_mut()
        .map(|rng| Running {
            traj: Trajectory {
                states: vec![egf.init.sample(manifold, rng)],
                transform_indices: Vec::new(),
                stop_probs: Vec::new(),
                tau: None,
                direction: Direction::Forward,
                degenerate: false,
            },
            weight: 1.0,
            done: false,
        })
        .collect();
    for t in 1..=t_max {
        let active: Vec<usize> = (0..runs.len()).filter(|&k| !runs[k].done).collect();
        if active.is_empty() {
            break;
        }
        let pts = flatten(&active.iter().map(|&k| runs[k].traj.last()).collect::<Vec<_>>());
        let out = egf.model.evaluate(&pts);
        let term = f_term.density_batch(amb, &pts);
        for (a, &k) in active.iter().enumerate() {
            let run = &mut runs[k];
            let rng = &mut rngs[k];
            let (ft, fs) = (term[a], out.fstar[a]);
            let u: f64 = rng.random();
            let stopped = if opts.stochastic_stop {
                match crate::flow::stop_probability(ft, fs) {
                    Ok(h) => {
                        run.traj.stop_probs.push(h);
                        u < h
                    }
                    Err(_) => {
                        log::warn!("degenerate state reached at step {t}; forcing a stop");
                        run.traj.stop_probs.push(1.0);
                        run.traj.degenerate = true;
                        true
                    }
                }
            } else {
                let h = ft / (ft + fs.max(HAZARD_EPS));
                run.traj.stop_probs.push(h);
                run.weight *= 1.0 - h;
                false
            };
            if stopped {
                run.traj.tau = Some(t);
                run.done = true;
                continue;
            }
            if t == t_max || (!opts.stochastic_stop && run.weight < opts.weight_floor) {
                run.done = true;
                continue;
            }
            let i = categorical(out.alpha_row(a), rng);
            let mut next = Point::zeros(amb);
            egf.family.apply_into(i, run.traj.last(), &mut next);
            run.traj.transform_indices.push(i);
            run.traj.states.push(next);
        }
    }
    runs.into_iter().map(|r| r.traj).collect()
}

/// One forward chain.
pub fn sample_forward<M: FlowModel, R: Rng>(
    egf: &Egf<M>,
    f_term: &dyn Density,
    t_max: usize,
    rng: &mut R,
) -> Trajectory {
    let mut one = [rng];
    sample_forward_batch(egf, f_term, &ChainOptions::stopping(t_max), &mut one).remove(0)
}

/// Source of starting points for backward chains: returns a dataset index and its point.
pub trait Kappa {
    fn draw(&self, rng: &mut StreamRng) -> (usize, Point);
}

impl<F: Fn(&mut StreamRng) -> (usize, Point)> Kappa for F {
    fn draw(&self, rng: &mut StreamRng) -> (usize, Point) {
        self(rng)
    }
}

/// Uniform draws from a list of points.
pub struct Empirical<'a>(pub &'a [Point]);

impl Kappa for Empirical<'_> {
    fn draw(&self, rng: &mut StreamRng) -> (usize, Point) {
        let i = rng.random_range(0..self.0.len());
        (i, self.0[i].clone())
    }
}

/// Start draws allowed before a backward chain gives up.
pub const BACKWARD_START_ATTEMPTS: usize = 100;

/// Runs one backward chain per generator, with `s_1 ∼ κ` and moves `Φ_i^{-1}` drawn from `α_←`.
pub fn sample_backward_batch<M: FlowModel>(
    egf: &Egf<M>,
    kappa: &dyn Kappa,
    opts: &ChainOptions,
    rngs: &mut [StreamRng],
) -> Result<Vec<Trajectory>> {
    let amb = egf.manifold().ambient_dim();
    let p = egf.p();
    let t_max = opts.t_max.max(1);
    let mut starts = Vec::with_capacity(rngs.len());
    for rng in rngs.iter_mut() {
        let mut found = None;
        let mut last_index = 0;
        for _ in 0..BACKWARD_START_ATTEMPTS {
            let (index, s) = kappa.draw(rng);
            last_index = index;
            if egf.evaluate_inflow(&s).fstar_bwd[0] > 0.0 {
                found = Some(s);
                break;
            }
        }
        match found {
            Some(s) => starts.push(s),
            None => return Err(Error::BackwardStuck { attempts: BACKWARD_START_ATTEMPTS, index: last_index }),
        }
    }
    let mut runs: Vec<Running> = starts
        .into_iter()
        .map(|s| Running {
            traj: Trajectory {
                states: vec![s],
                transform_indices: Vec::new(),
                stop_probs: Vec::new(),
                tau: None,
                direction: Direction::Backward,
                degenerate: false,
            },
            weight: 1.0,
            done: false,
        })
        .collect();
    for t in 1..=t_max {
        let active: Vec<usize> = (0..runs.len()).filter(|&k| !runs[k].done).collect();
        if active.is_empty() {
            break;
        }
        let pts = flatten(&active.iter().map(|&k| runs[k].traj.last()).collect::<Vec<_>>());
        let ev = egf.evaluate_inflow(&pts);
        for (a, &k) in active.iter().enumerate() {
            let run = &mut runs[k];
            let rng = &mut rngs[k];
            let s = run.traj.last().clone();
            let (_, delta) = crate::flow::defect_parts(egf.f_init(&s), ev.fstar_bwd[a], ev.fstar_fwd[a]);
            let h = -delta / (-delta + ev.fstar_bwd[a].max(HAZARD_EPS));
            run.traj.stop_probs.push(h);
            run.weight *= 1.0 - h;
            if t == t_max || run.weight < opts.weight_floor || ev.fstar_bwd[a] <= 0.0 {
                run.done = true;
                continue;
            }
            let i = categorical(&ev.alpha_bwd[a * p..(a + 1) * p], rng);
            let mut next = Point::zeros(amb);
            egf.family.apply_inverse_into(i, &s, &mut next);
            run.traj.transform_indices.push(i);
            run.traj.states.push(next);
        }
    }
    Ok(runs.into_iter().map(|r| r.traj).collect())
}

/// One backward chain.
pub fn sample_backward<M: FlowModel>(
    egf: &Egf<M>,
    kappa: &dyn Kappa,
    t_max: usize,
    rng: &mut StreamRng,
) -> Result<Trajectory> {
    let mut one = [rng.clone()];
    let out = sample_backward_batch(egf, kappa, &ChainOptions::weighted(t_max, 0.0), &mut one)?.remove(0);
    *rng = one[0].clone();
    Ok(out)
}

/// Generators for trajectories `first..first + n` of a run.
pub fn trajectory_rngs(seed: u64, tag: u8, step: u64, first: u64, n: usize) -> Vec<StreamRng> {
    (0..n as u64).map(|k| stream_rng(seed, stream_id(tag, step, first + k))).collect()
}

/// Stopped samples with bookkeeping on the discarded chains.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub points: Vec<Point>,
    /// Stopping times of the kept chains.
    pub taus: Vec<usize>,
    pub censored: usize,
    pub degenerate: usize,
}

impl SampleSet {
    pub fn censor_rate(&self) -> f64 {
        let total = self.points.len() + self.censored;
        if total == 0 {
            0.0
        } else {
            self.censored as f64 / total as f64
        }
    }

    pub fn mean_tau(&self) -> f64 {
        self.taus.iter().sum::<usize>() as f64 / self.taus.len().max(1) as f64
    }
}

/// Chains per lockstep batch in [`sample_points`].
const SAMPLE_BATCH: usize = 4096;

/// Draws `n` stopped states `s_τ`, replacing censored chains.
pub fn sample_points<M: FlowModel>(
    egf: &Egf<M>,
    f_term: &dyn Density,
    n: usize,
    t_max: usize,
    seed: u64,
) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::InvalidArgument(alloc::string::String::from("sample count must be positive")));
    }
    let mut set = SampleSet { points: Vec::with_capacity(n), taus: Vec::with_capacity(n), censored: 0, degenerate: 0 };
    let mut next_stream = 0u64;
    while set.points.len() < n {
        let want = (n - set.points.len()).min(SAMPLE_BATCH);
        // overshoot slightly so a few censored chains do not need a second round
        let batch = want + want / 8 + 1;
        let mut rngs = trajectory_rngs(seed, 1, 0, next_stream, batch);
        next_stream += batch as u64;
        for traj in sample_forward_batch(egf, f_term, &ChainOptions::stopping(t_max), &mut rngs) {
            if traj.degenerate {
                set.degenerate += 1;
            }
            match traj.tau {
                Some(tau) if set.points.len() < n => {
                    set.taus.push(tau);
                    set.points.push(traj.last().clone());
                }
                Some(_) => {}
                None => set.censored += 1,
            }
        }
        if set.censored > 16 && set.censor_rate() > 0.5 {
            return Err(Error::FlowNotTerminating { rate: set.censor_rate() });
        }
    }
    if set.censored > 0 {
        log::info!("{} censored chains resampled ({:.2}%)", set.censored, 100.0 * set.censor_rate());
    }
    Ok(set)
}
