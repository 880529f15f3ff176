//! Subcommand implementations, independent of argument parsing.

use std::path::{Path, PathBuf};

use egf_core::data::{checkerboard_reward, gen_toy, gen_volcano_like, volcano_like_mixture, Dataset, Toy};
use egf_core::eval::{self, density_moments, filter_scan, DensityGrid, FilterScanOptions, FilterSpec, NllMode};
use egf_core::sampler::sample_points;
use egf_core::training::{MetricsRow, Trainer};
use egf_core::transforms::build_family;
use egf_core::{Density, Egf, EgfModel, FamilySpec, Manifold, Point};
use serde::Serialize;

use crate::checkpoint::{Checkpoint, Terminal};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{self, DatasetManifest, Report};

/// Built-in reward densities.
pub fn reward_by_name(name: &str) -> Result<Box<dyn Density>> {
    match name {
        "checkerboard" | "toy:checkerboard" => Ok(Box::new(checkerboard_reward)),
        "volcano-like" => {
            let mix = volcano_like_mixture();
            Ok(Box::new(move |s: &[f64]| mix.density(s)))
        }
        other => Err(Error::ConfigSchema(format!("no built-in reward named {other:?}"))),
    }
}

struct ScaledReward {
    inner: Box<dyn Density>,
    scale: f64,
}

impl Density for ScaledReward {
    fn density_batch(&self, ambient: usize, points: &[f64]) -> Vec<f64> {
        let mut v = self.inner.density_batch(ambient, points);
        v.iter_mut().for_each(|x| *x *= self.scale);
        v
    }
}

/// Loads or generates the dataset named by `source`, then splits it.
pub fn load_dataset(
    manifold: Manifold,
    source: &str,
    n: usize,
    seed: u64,
    val_fraction: f64,
    lat_col: &str,
    lon_col: &str,
) -> Result<(Dataset, DatasetManifest)> {
    let (data, path, skipped) = if let Some(name) = source.strip_prefix("toy:") {
        (gen_toy(name.parse::<Toy>()?, n, seed)?, None, 0)
    } else if source == "volcano-like" {
        (gen_volcano_like(n, seed)?, None, 0)
    } else {
        let path = PathBuf::from(source);
        let ing = match manifold {
            Manifold::Sphere { dim: 2 } => io::read_latlon_csv(&path, lat_col, lon_col)?,
            Manifold::Torus { dim } => io::read_torus_csv(&path, dim)?,
            m => return Err(egf_core::Error::Unsupported(format!("datasets on {m:?}")).into()),
        };
        let name = path.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned());
        (Dataset::new(name, manifold, ing.points)?, Some(path), ing.skipped)
    };
    if data.manifold != manifold {
        return Err(Error::ConfigSchema(format!("data source {source:?} does not live on the configured manifold")));
    }
    let data = data.split(val_fraction, seed)?;
    let manifest = DatasetManifest::describe(&data, seed, path.as_deref(), skipped);
    Ok((data, manifest))
}

/// Freshly initialized flow described by the config.
pub fn build_egf(cfg: &RunConfig) -> Result<Egf> {
    let manifold = cfg.resolved_manifold()?;
    let family = build_family(manifold, &cfg.family_spec)?;
    let model = EgfModel::new(manifold, family.len(), cfg.model.clone(), cfg.train.seed)?;
    Ok(Egf::new(family, model, cfg.init.clone())?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    Rl,
    Il,
}

/// Trains, writing `config.json`, `metrics.csv`, per-eval checkpoints under
/// `checkpoints/`, the final `checkpoint.json` and `report.json` into `out_dir`.
pub fn train(cfg: &RunConfig, mode: TrainMode) -> Result<Report> {
    let out = cfg.out_dir.clone();
    io::write_json(&out.join("config.json"), cfg)?;
    let egf = build_egf(cfg)?;
    let manifold = egf.manifold();
    let tcfg = cfg.train_config();
    let dataset;
    let reward;
    let train_pts;
    let val_pts;
    let mut trainer = match mode {
        TrainMode::Rl => {
            reward = reward_by_name(&cfg.data.source)?;
            Trainer::rl(egf, reward.as_ref(), tcfg)?
        }
        TrainMode::Il => {
            let d = &cfg.data;
            let (data, manifest) =
                load_dataset(manifold, &d.source, d.n, d.seed, d.val_fraction, &d.lat_col, &d.lon_col)?;
            io::write_json(&out.join("data-manifest.json"), &manifest)?;
            dataset = data;
            train_pts = dataset.train_points();
            val_pts = dataset.val_points();
            let mut t = Trainer::il(egf, &train_pts, &val_pts, tcfg)?;
            let target = DensityGrid::for_manifold(manifold, cfg.eval.tv_grid)?.histogram(&dataset.points);
            t.set_tv_target(Some(target));
            t
        }
    };
    let terminal = match (mode, trainer.reward_scale()) {
        (TrainMode::Rl, Some(scale)) => Terminal::Reward { name: cfg.data.source.clone(), scale },
        _ => Terminal::Virtual,
    };
    let spec = cfg.family_spec.clone();
    let ck_dir = out.join("checkpoints");
    let mut rows: Vec<MetricsRow> = Vec::new();
    let result = trainer.run::<Error>(&mut |egf, row| {
        rows.push(row.clone());
        io::write_atomic(&out.join("metrics.csv"), &io::metrics_csv(&rows)?)?;
        Checkpoint::capture(egf, &spec, row.step, terminal.clone())
            .save(&ck_dir.join(format!("step-{:06}.json", row.step)))
    });
    io::write_atomic(&out.join("metrics.csv"), &io::metrics_csv(&trainer.metrics)?)?;
    Checkpoint::capture(&trainer.egf, &spec, trainer.step_count(), terminal).save(&out.join("checkpoint.json"))?;
    result?;
    let last = trainer.metrics.last();
    let report = Report {
        steps: trainer.step_count(),
        nll_val: last.and_then(|r| r.nll_val),
        tv_grid: last.and_then(|r| r.tv),
        mean_tau: last.map_or(f64::NAN, |r| r.mean_tau),
        flow_mass: last.map_or(f64::NAN, |r| r.flow_mass),
        censor_rate: last.map_or(f64::NAN, |r| r.censor_rate),
        fhat_mass: last.and_then(|r| r.fhat_mass),
    };
    io::write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

/// Terminal density of a checkpoint, optionally filtered at `m - kσ` of `f̂_term`.
fn terminal_density<'a>(ck: &Checkpoint, egf: &'a Egf, filter_k: Option<f64>, seed: u64) -> Result<Box<dyn Density + 'a>> {
    match &ck.terminal {
        Terminal::Reward { name, scale } => Ok(Box::new(ScaledReward { inner: reward_by_name(name)?, scale: *scale })),
        Terminal::Virtual => {
            let threshold = filter_k.and_then(|k| {
                let (m, sd) = density_moments(&egf.virtual_terminal(None), egf.manifold(), 100_000, seed);
                FilterSpec::new(k, m, sd).threshold()
            });
            Ok(Box::new(egf.virtual_terminal(threshold)))
        }
    }
}

/// Draws `n` stopped states and writes them as CSV; returns the path written.
pub fn sample(checkpoint: &Path, n: usize, t_max: usize, filter_k: Option<f64>, seed: u64, out_dir: &Path) -> Result<PathBuf> {
    let ck = Checkpoint::load(checkpoint)?;
    let egf = ck.restore()?;
    let f_term = terminal_density(&ck, &egf, filter_k, seed)?;
    let set = sample_points(&egf, f_term.as_ref(), n, t_max, seed)?;
    let path = out_dir.join("samples.csv");
    io::write_points(&path, egf.manifold(), &set.points)?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NllReport {
    pub nll: f64,
    pub mode: NllMode,
    pub n: usize,
    pub split: String,
}

/// Dataset used by the evaluation commands: the validation split when it is nonempty.
pub fn eval_points(cfg: &RunConfig, manifold: Manifold, source: &str) -> Result<(Vec<Point>, &'static str)> {
    let d = &cfg.data;
    let (data, _) = load_dataset(manifold, source, d.n, d.seed, d.val_fraction, &d.lat_col, &d.lon_col)?;
    Ok(if data.val.is_empty() { (data.points, "all") } else { (data.val_points(), "val") })
}

pub fn eval_nll(cfg: &RunConfig, checkpoint: &Path, source: &str) -> Result<NllReport> {
    let egf = Checkpoint::load(checkpoint)?.restore()?;
    let (points, split) = eval_points(cfg, egf.manifold(), source)?;
    let grid = DensityGrid::for_manifold(egf.manifold(), cfg.eval.grid)?;
    let nll = eval::nll(&egf.virtual_terminal(None), &points, &grid, cfg.eval.nll_mode)?;
    let report = NllReport { nll, mode: cfg.eval.nll_mode, n: points.len(), split: split.into() };
    io::write_json(&cfg.out_dir.join("nll.json"), &report)?;
    Ok(report)
}

/// Writes `density.csv` and `density.pgm` of `f̂_term`; returns the cell count.
pub fn density_grid(checkpoint: &Path, resolution: usize, out_dir: &Path) -> Result<usize> {
    let egf = Checkpoint::load(checkpoint)?.restore()?;
    let grid = DensityGrid::for_manifold(egf.manifold(), resolution)?.filled(&egf.virtual_terminal(None));
    io::write_grid_csv(&out_dir.join("density.csv"), &grid)?;
    io::write_atomic(&out_dir.join("density.pgm"), &io::grid_pgm(&grid))?;
    Ok(grid.len())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FilterChoice {
    /// `None` when the no-op filter wins.
    pub k: Option<f64>,
    pub f_sat: Option<f64>,
    pub nll: f64,
    pub unfiltered_nll: f64,
}

/// Writes `filter_scan.csv` (one row per k, input order) and `filter.json`.
pub fn filter_scan_cmd(cfg: &RunConfig, checkpoint: &Path, source: &str, k_grid: &[f64]) -> Result<FilterChoice> {
    let egf = Checkpoint::load(checkpoint)?.restore()?;
    let (points, _) = eval_points(cfg, egf.manifold(), source)?;
    let grid = DensityGrid::for_manifold(egf.manifold(), cfg.eval.grid)?;
    let opts = FilterScanOptions { seed: cfg.train.seed, mode: cfg.eval.nll_mode, ..FilterScanOptions::default() };
    let scan = filter_scan(&egf.virtual_terminal(None), &points, k_grid, &grid, &opts)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "nll"])?;
    for (k, v) in k_grid.iter().zip(&scan.curve) {
        w.write_record([k.to_string(), v.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))?;
    io::write_atomic(&cfg.out_dir.join("filter_scan.csv"), &bytes)?;
    let finite = |x: f64| x.is_finite().then_some(x);
    let choice = FilterChoice {
        k: finite(scan.best.k),
        f_sat: finite(scan.best.f_sat),
        nll: scan.best_nll,
        unfiltered_nll: scan.unfiltered_nll,
    };
    io::write_json(&cfg.out_dir.join("filter.json"), &choice)?;
    Ok(choice)
}

/// Family given as a preset name or a JSON file holding a `FamilySpec`.
pub fn family_from_arg(arg: &str, manifold: Option<Manifold>) -> Result<(Manifold, FamilySpec)> {
    if let Ok(preset) = arg.parse::<egf_core::Preset>() {
        return Ok((manifold.unwrap_or(preset.manifold()), FamilySpec::preset(preset)));
    }
    let path = Path::new(arg);
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: FamilySpec = serde_json::from_str(&text).map_err(|e| Error::ConfigSchema(e.to_string()))?;
    let m = manifold
        .or(spec.preset.map(|p| p.manifold()))
        .ok_or_else(|| Error::ConfigSchema(String::from("an explicit family needs --manifold")))?;
    Ok((m, spec))
}

/// Writes `mixing.csv` with `n, gamma` rows (`n = 0..=n_steps`).
pub fn diag_mixing(manifold: Manifold, spec: &FamilySpec, n_steps: usize, resolution: usize, out_dir: &Path) -> Result<eval::MixingReport> {
    let family = build_family(manifold, spec)?;
    let grid = DensityGrid::for_manifold(manifold, resolution)?;
    let report = eval::mixing_diagnostic(&family, n_steps, &grid)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n", "gamma"])?;
    w.write_record(["0".to_string(), report.gamma0.to_string()])?;
    for (k, g) in report.gammas.iter().enumerate() {
        w.write_record([(k + 1).to_string(), g.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))?;
    io::write_atomic(&out_dir.join("mixing.csv"), &bytes)?;
    Ok(report)
}
