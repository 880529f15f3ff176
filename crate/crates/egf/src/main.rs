use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use egf::commands::{self, TrainMode};
use egf::config::RunConfig;
use egf::{Error, Result};
use egf_core::Manifold;

/// Ergodic generative flows on tori and spheres.
///
/// Config keys can be overridden with `--key.path=value`, e.g. `--train.steps=500`.
#[derive(Parser, Debug)]
#[command(name = "egf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Seed (overrides `train.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Upper bound on worker threads.
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train against a built-in reward density (`data.source`).
    TrainRl,
    /// Train from samples (`data.source`) with the KL-weakFM loss.
    TrainIl,
    /// Draw stopped states from a checkpoint into `samples.csv`.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        t_max: usize,
        /// Zero `f̂_term` below `m - kσ` before sampling.
        #[arg(long)]
        filter_k: Option<f64>,
    },
    /// Negative log-likelihood of a dataset under a checkpoint.
    EvalNll {
        #[arg(long)]
        checkpoint: PathBuf,
        /// `toy:<name>`, `volcano-like` or a CSV path.
        #[arg(long)]
        dataset: String,
    },
    /// Tabulate `f̂_term` into `density.csv` and `density.pgm`.
    DensityGrid {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        resolution: usize,
    },
    /// Validation NLL of the filtered density for each k.
    FilterScan {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: String,
        /// Comma-separated multipliers; `inf` is the no-op filter. Defaults to `eval.k_grid`.
        #[arg(long, value_delimiter = ',')]
        k_grid: Option<Vec<f64>>,
    },
    /// Lower bounds on the L²-mixing coefficients of a family under the uniform policy.
    DiagMixing {
        /// Preset name or a JSON file holding a family spec.
        #[arg(long)]
        family: String,
        #[arg(long)]
        n_steps: usize,
        #[arg(long, default_value_t = 128)]
        resolution: usize,
        /// `torus:<d>` or `sphere:<d>`; defaults to the preset's manifold.
        #[arg(long)]
        manifold: Option<String>,
    },
}

/// Splits `--a.b=c` overrides from the arguments clap handles.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        let key = a.strip_prefix("--").map(|k| k.split('=').next().unwrap_or(k));
        match key {
            Some(k) if k.contains('.') => {
                let (k, v) = a[2..]
                    .split_once('=')
                    .ok_or_else(|| Error::ConfigSchema(format!("override {a:?} needs the form --key.path=value")))?;
                overrides.push((k.to_string(), v.to_string()));
            }
            _ => rest.push(a),
        }
    }
    Ok((rest, overrides))
}

fn parse_manifold(s: &str) -> Result<Manifold> {
    let bad = || Error::ConfigSchema(format!("manifold {s:?} is not torus:<d> or sphere:<d>"));
    let (kind, dim) = s.split_once(':').ok_or_else(bad)?;
    let dim: usize = dim.parse().map_err(|_| bad())?;
    match kind {
        "torus" if dim >= 1 => Ok(Manifold::torus(dim)),
        "sphere" if dim >= 1 => Ok(Manifold::sphere(dim)),
        _ => Err(bad()),
    }
}

fn load_config(cli: &Cli, mut overrides: Vec<(String, String)>, required: bool) -> Result<RunConfig> {
    if let Some(seed) = cli.seed {
        overrides.push(("train.seed".into(), seed.to_string()));
    }
    if let Some(dir) = &cli.out_dir {
        overrides.push(("out_dir".into(), serde_json::to_string(dir).expect("paths serialize")));
    }
    match &cli.config {
        Some(path) => RunConfig::load(path, &overrides),
        None if required => Err(Error::ConfigSchema(String::from("--config is required"))),
        None => RunConfig::from_json("{}", &overrides),
    }
}

fn run(cli: Cli, overrides: Vec<(String, String)>) -> Result<()> {
    if let Some(t) = cli.threads {
        log::debug!("thread cap {t}; numerical kernels run on the calling thread");
    }
    match &cli.command {
        Command::TrainRl | Command::TrainIl => {
            let cfg = load_config(&cli, overrides, true)?;
            let mode = if matches!(cli.command, Command::TrainRl) { TrainMode::Rl } else { TrainMode::Il };
            let report = commands::train(&cfg, mode)?;
            println!("{}", serde_json::to_string(&report).expect("reports serialize"));
        }
        Command::Sample { checkpoint, n, t_max, filter_k } => {
            let cfg = load_config(&cli, overrides, false)?;
            let path = commands::sample(checkpoint, *n, *t_max, *filter_k, cfg.train.seed, &cfg.out_dir)?;
            println!("{}", path.display());
        }
        Command::EvalNll { checkpoint, dataset } => {
            let cfg = load_config(&cli, overrides, false)?;
            let report = commands::eval_nll(&cfg, checkpoint, dataset)?;
            println!("{}", report.nll);
        }
        Command::DensityGrid { checkpoint, resolution } => {
            let cfg = load_config(&cli, overrides, false)?;
            let cells = commands::density_grid(checkpoint, *resolution, &cfg.out_dir)?;
            println!("{cells}");
        }
        Command::FilterScan { checkpoint, dataset, k_grid } => {
            let cfg = load_config(&cli, overrides, false)?;
            let ks = k_grid.clone().unwrap_or_else(|| cfg.eval.k_values());
            let choice = commands::filter_scan_cmd(&cfg, checkpoint, dataset, &ks)?;
            println!("{}", serde_json::to_string(&choice).expect("plain data serializes"));
        }
        Command::DiagMixing { family, n_steps, resolution, manifold } => {
            let cfg = load_config(&cli, overrides, false)?;
            let manifold = manifold.as_deref().map(parse_manifold).transpose()?;
            let (m, spec) = commands::family_from_arg(family, manifold)?;
            let report = commands::diag_mixing(m, &spec, *n_steps, *resolution, &cfg.out_dir)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", report.gammas.last().copied().unwrap_or(report.gamma0));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let (args, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let cli = Cli::parse_from(args);
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
