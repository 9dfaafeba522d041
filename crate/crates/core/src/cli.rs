//! Command-line front end. Every subcommand writes tab-separated reports
//! plus a `run.meta` file into its output directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::data::{
    inject_conflict, inject_noise, load_dataset, save_dataset, split, standardize, synthesize,
    ConflictSpec, CorruptionMask, MultiViewDataset, NoiseSpec, SynthSpec, ViewSelection,
};
use crate::error::{Error, Result};
use crate::pipeline::report::{
    ablation_table, ensure_dir, gradcheck_table, learning_rate_table, noise_table, num,
    train_log_table, write_eval_reports, write_run_meta, RunArtifact, Table,
};
use crate::pipeline::{
    ablate, evaluate, gradient_suite, learning_rate_sweep, run_noise_sweep, run_trials, train,
    ForwardOptions, TrainConfig, Variant, GRADCHECK_TOLERANCE, LEARNING_RATE_GRID,
};

#[derive(Debug, Parser)]
#[command(
    name = "trustmv",
    version,
    about = "Trusted multi-view classification with evidential aggregation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic multi-view dataset.
    Synth(SynthArgs),
    /// Split, standardize, train, and evaluate on the held-out part.
    Train(TrainArgs),
    /// Evaluate a saved run, optionally under noise or view conflict.
    Eval(EvalArgs),
    /// Noise-robustness or learning-rate sweeps.
    #[command(subcommand)]
    Sweep(SweepCommand),
    /// Train the full model and its ablated variants under identical seeds.
    Ablate(AblateArgs),
    /// Finite-difference checks of every objective term.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Subcommand)]
pub enum SweepCommand {
    Noise(NoiseSweepArgs),
    Lr(LrSweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [20, 30, 25])]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 1.5)]
    pub separation: f64,
    #[arg(long, default_value_t = 0.3)]
    pub nuisance: f64,
    #[arg(long, default_value_t = 8)]
    pub latent_dim: usize,
}

/// A config file plus flag overrides.
#[derive(Debug, Args, Clone)]
pub struct ConfigArgs {
    /// TOML file whose keys mirror the training config fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub variant: Option<Variant>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(lr) = self.lr {
            cfg.learning_rate = lr;
        }
        if let Some(v) = self.variant {
            cfg = v.apply(&cfg);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    /// Seed of the train/test split; defaults to the training seed.
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Also repeat the whole run with seeds seed..seed+N and report mean and std.
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// `model.json` written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Evaluate every instance instead of the stored held-out split.
    #[arg(long)]
    pub all: bool,
    #[command(flatten)]
    pub corruption: CorruptionArgs,
}

#[derive(Debug, Args, Clone)]
pub struct CorruptionArgs {
    /// Add Gaussian noise with this standard deviation.
    #[arg(long, conflicts_with = "conflict")]
    pub noise: Option<f64>,
    /// Misalign one view with a different-class donor.
    #[arg(long)]
    pub conflict: bool,
    /// View to misalign; drawn per instance when absent.
    #[arg(long, requires = "conflict")]
    pub conflict_view: Option<usize>,
    /// Fraction of instances to corrupt.
    #[arg(long, default_value_t = 0.5)]
    pub fraction: f64,
    /// Noise every view rather than a random half.
    #[arg(long)]
    pub all_views: bool,
    #[arg(long, default_value_t = 0)]
    pub corrupt_seed: u64,
}

impl CorruptionArgs {
    fn views(&self) -> ViewSelection {
        if self.all_views {
            ViewSelection::All
        } else {
            ViewSelection::RandomHalf
        }
    }
}

#[derive(Debug, Args)]
pub struct NoiseSweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 1.0, 10.0, 100.0, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8])]
    pub sigmas: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub fraction: f64,
    #[arg(long)]
    pub all_views: bool,
    #[arg(long, default_value_t = 0)]
    pub corrupt_seed: u64,
}

#[derive(Debug, Args)]
pub struct LrSweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_values_t = LEARNING_RATE_GRID)]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_values_t = Variant::ABLATIONS)]
    pub variants: Vec<Variant>,
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Number of random problems per loss.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    /// Also write `gradcheck.tsv` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Execute a parsed command line. Gradient checks that miss the tolerance
/// yield a failing exit code; contract violations come back as errors.
pub fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth(a) => synth_cmd(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
        Command::Sweep(SweepCommand::Noise(a)) => noise_cmd(&a),
        Command::Sweep(SweepCommand::Lr(a)) => lr_cmd(&a),
        Command::Ablate(a) => ablate_cmd(&a),
        Command::Gradcheck(a) => gradcheck_cmd(&a),
    }
    .map(|ok| {
        if ok {
            ExitCode::SUCCESS
        } else {
            ExitCode::FAILURE
        }
    })
}

fn synth_cmd(a: &SynthArgs) -> Result<bool> {
    let spec = SynthSpec {
        classes: a.classes,
        samples: a.samples,
        dims: a.dims.clone(),
        separation: a.separation,
        nuisance_ratio: a.nuisance,
        latent_dim: a.latent_dim,
        seed: a.seed,
        ..SynthSpec::default()
    };
    let ds = synthesize(&spec)?;
    let manifest = save_dataset(&ds, &a.out)?;
    println!("{}", manifest.display());
    Ok(true)
}

fn train_test(
    ds: &MultiViewDataset,
    fraction: f64,
    seed: u64,
) -> Result<(
    MultiViewDataset,
    MultiViewDataset,
    crate::data::Standardizer,
)> {
    let parts = split(ds, fraction, seed)?;
    standardize(&parts.train, &parts.test)
}

fn train_cmd(a: &TrainArgs) -> Result<bool> {
    let cfg = a.cfg.resolve()?;
    let ds = load_dataset(&a.data)?;
    ensure_dir(&a.out)?;
    let split_seed = a.split_seed.unwrap_or(cfg.seed);
    let (tr, te, stats) = train_test(&ds, a.split, split_seed)?;
    info!(
        "training on {} instances, testing on {}",
        tr.len(),
        te.len()
    );
    let out = train(&tr, &cfg)?;
    let report = evaluate(&out.model, &te, None, ForwardOptions::from(&cfg))?;

    RunArtifact::new(&out.model, cfg.clone(), stats, a.split, split_seed)
        .save(&RunArtifact::default_path(&a.out))?;
    train_log_table(&out.log).write(&a.out.join("train_log.tsv"))?;
    write_eval_reports(&a.out, &report, ds.names())?;
    write_text(&a.out.join("config.toml"), &cfg.to_toml()?)?;

    let mut extra = vec![
        ("split_seed", split_seed.to_string()),
        ("train_fraction", num(a.split)),
        ("epochs_run", out.log.len().to_string()),
    ];
    if a.trials > 1 {
        let summary = run_trials(&ds, &cfg, a.split, a.trials)?;
        let mut t = Table::new(["seed", "accuracy"]);
        for (s, acc) in summary.seeds.iter().zip(&summary.accuracies) {
            t.push([s.to_string(), num(*acc)]);
        }
        t.write(&a.out.join("trials.tsv"))?;
        extra.push(("trials_mean_accuracy", num(summary.mean)));
        extra.push(("trials_std_accuracy", num(summary.std)));
        println!("trials: mean {:.4} std {:.4}", summary.mean, summary.std);
    }
    write_run_meta(&a.out, "train", &cfg, &extra)?;
    println!("test accuracy {:.4}", report.accuracy);
    Ok(true)
}

/// The stored held-out split (or every instance), standardized with the
/// statistics saved at training time.
fn eval_data(run: &RunArtifact, ds: &MultiViewDataset, all: bool) -> Result<MultiViewDataset> {
    let raw = if all {
        ds.clone()
    } else {
        split(ds, run.train_fraction, run.split_seed)?.test
    };
    run.standardizer.apply(&raw)
}

fn eval_cmd(a: &EvalArgs) -> Result<bool> {
    let run = RunArtifact::load(&a.model)?;
    let model = run.model()?;
    let ds = load_dataset(&a.data)?;
    let test = eval_data(&run, &ds, a.all)?;
    ensure_dir(&a.out)?;
    let c = &a.corruption;
    let (data, mask): (MultiViewDataset, Option<CorruptionMask>) = if let Some(sigma) = c.noise {
        let (d, m) = inject_noise(
            &test,
            &NoiseSpec {
                fraction: c.fraction,
                sigma,
                views: c.views(),
                seed: c.corrupt_seed,
            },
        )?;
        (d, Some(m))
    } else if c.conflict {
        let (d, m) = inject_conflict(
            &test,
            &ConflictSpec {
                fraction: c.fraction,
                view: c.conflict_view,
                seed: c.corrupt_seed,
            },
        )?;
        (d, Some(m))
    } else {
        (test, None)
    };
    let report = evaluate(
        &model,
        &data,
        mask.as_ref(),
        ForwardOptions::from(&run.config),
    )?;
    write_eval_reports(&a.out, &report, ds.names())?;
    if let Some(m) = &mask {
        write_text(&a.out.join("corruption_mask.tsv"), &m.to_tsv())?;
    }
    write_run_meta(
        &a.out,
        "eval",
        &run.config,
        &[("instances", report.labels.len().to_string())],
    )?;
    println!("accuracy {:.4}", report.accuracy);
    Ok(true)
}

fn noise_cmd(a: &NoiseSweepArgs) -> Result<bool> {
    let run = RunArtifact::load(&a.model)?;
    let model = run.model()?;
    let test = eval_data(&run, &load_dataset(&a.data)?, false)?;
    ensure_dir(&a.out)?;
    let views = if a.all_views {
        ViewSelection::All
    } else {
        ViewSelection::RandomHalf
    };
    let rows = run_noise_sweep(
        &model,
        &run.config,
        &test,
        &a.sigmas,
        a.fraction,
        views,
        a.corrupt_seed,
    )?;
    let table = noise_table(&rows);
    table.write(&a.out.join("noise_sweep.tsv"))?;
    write_run_meta(
        &a.out,
        "sweep noise",
        &run.config,
        &[("fraction", num(a.fraction))],
    )?;
    print!("{}", table.to_tsv());
    Ok(true)
}

fn lr_cmd(a: &LrSweepArgs) -> Result<bool> {
    let cfg = a.cfg.resolve()?;
    let ds = load_dataset(&a.data)?;
    ensure_dir(&a.out)?;
    let rows = learning_rate_sweep(&ds, &cfg, &a.grid, a.folds)?;
    let table = learning_rate_table(&rows);
    table.write(&a.out.join("lr_sweep.tsv"))?;
    write_run_meta(&a.out, "sweep lr", &cfg, &[("folds", a.folds.to_string())])?;
    print!("{}", table.to_tsv());
    Ok(true)
}

fn ablate_cmd(a: &AblateArgs) -> Result<bool> {
    let cfg = a.cfg.resolve()?;
    let ds = load_dataset(&a.data)?;
    ensure_dir(&a.out)?;
    let (tr, te, _) = train_test(&ds, a.split, cfg.seed)?;
    let rows = ablate(&tr, &te, &cfg, &a.variants)?;
    let table = ablation_table(&rows);
    table.write(&a.out.join("ablation.tsv"))?;
    write_run_meta(&a.out, "ablate", &cfg, &[("train_fraction", num(a.split))])?;
    print!("{}", table.to_tsv());
    Ok(true)
}

fn gradcheck_cmd(a: &GradcheckArgs) -> Result<bool> {
    if a.seeds == 0 {
        return Err(Error::Contract("need at least one seed".into()));
    }
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let rows = gradient_suite(&seeds)?;
    let table = gradcheck_table(&rows, GRADCHECK_TOLERANCE);
    if let Some(dir) = &a.out {
        ensure_dir(dir)?;
        table.write(&dir.join("gradcheck.tsv"))?;
    }
    print!("{}", table.to_tsv());
    Ok(rows.iter().all(|r| r.max_rel_error < GRADCHECK_TOLERANCE))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
