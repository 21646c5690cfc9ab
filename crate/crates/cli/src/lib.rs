//! Command-line driver: data generation, training, evaluation, loss curves,
//! gradient checks and multi-seed comparisons from one TOML config.
//!
//! Output layout under the configured directory:
//!
//! ```text
//! seed_<s>/data/          train.bin eval.bin stats.csv [train.csv eval.csv]
//! seed_<s>/<arm>/train/   model.txt state.txt train_log.csv trajectory.csv
//! seed_<s>/<arm>/eval/    percat.csv groups.csv margins.csv
//! curves/                 curves.csv
//! gradcheck/              gradcheck_<variant>.csv
//! compare/                compare.csv compare_summary.csv runs/seed_<s>/<arm>/...
//! ```
//!
//! Every stage directory also holds a `manifest.json`.

pub mod config;
pub mod error;
pub mod output;

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use efl::experiment::{compare_csv, run_compare, summarize, summary_csv, Arm, CompareRow, ExperimentConfig};
use efl::gradcheck::{run_checks, CheckReport, CheckSpec};
use efl::metrics::{curves_csv, loss_curves, margins, margins_csv, evaluate};
use efl::synth::{imbalance_stats, make_dataset, make_eval_split};
use efl::train::{train, ModelParams};
use efl::{CategoryState, LossHyperParams, SyntheticDataset, Variant};
use log::info;
use rayon::prelude::*;

pub use crate::config::Overrides;
pub use crate::error::CliError;
use crate::output::{require, Manifest, Stage};

#[derive(Debug, Parser)]
#[command(name = "efl", version, about = "Equalized focal loss experiments on synthetic long-tailed data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the train and held-out splits for every seed.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Also export the splits as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Train every configured arm on the generated data.
    Train(Common),
    /// Evaluate trained models on the held-out split.
    Eval(Common),
    /// Emit loss-versus-logit curves.
    Curves {
        #[command(flatten)]
        common: Common,
        /// Comma-separated gamma_v values.
        #[arg(long, value_delimiter = ',', default_value = "0,2,8")]
        gamma_vs: Vec<f64>,
    },
    /// Compare analytical gradients with central differences.
    GradCheck(GradCheckArgs),
    /// Train and evaluate every arm for every seed and tabulate the results.
    Compare(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long, value_name = "DIR")]
    pub out: Option<String>,
    /// Run a single seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Restrict to one loss variant.
    #[arg(long, value_name = "NAME")]
    pub variant: Option<Variant>,
}

#[derive(Debug, Clone, Args)]
pub struct GradCheckArgs {
    /// Loss hyper-parameters are taken from `train.loss` when given.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Write one CSV per variant under DIR/gradcheck.
    #[arg(long, value_name = "DIR")]
    pub out: Option<String>,
    /// Check only this variant (default: all).
    #[arg(long, value_name = "NAME")]
    pub variant: Option<Variant>,
    #[arg(long, value_delimiter = ',')]
    pub xs: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub gamma_vs: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub qualities: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub w_ts: Option<Vec<f64>>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub rtol: Option<f64>,
    #[arg(long)]
    pub atol: Option<f64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            variant: self.variant,
        }
    }

    /// Loads the config and applies the command-line overrides.
    pub fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = config::load(&self.config)?;
        self.overrides().apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { common, csv } => with_config(&common, |cfg| cmd_gen(cfg, csv).map(drop)),
        Command::Train(common) => with_config(&common, |cfg| cmd_train(cfg).map(drop)),
        Command::Eval(common) => with_config(&common, |cfg| cmd_eval(cfg).map(drop)),
        Command::Curves { common, gamma_vs } => with_config(&common, |cfg| cmd_curves(cfg, &gamma_vs).map(drop)),
        Command::Compare(common) => with_config(&common, |cfg| cmd_compare(cfg).map(drop)),
        Command::GradCheck(args) => cmd_gradcheck(&args),
    }
}

fn with_config<F>(common: &Common, f: F) -> Result<(), CliError>
where
    F: FnOnce(&ExperimentConfig) -> Result<(), CliError> + Send,
{
    let cfg = common.load()?;
    in_pool(cfg.workers, || f(&cfg))
}

/// Runs `f` on a pool of `workers` threads.
pub fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> Result<T, CliError> + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {workers} worker threads: {e}")))?;
    pool.install(f)
}

fn manifest(command: &'static str, cfg: &ExperimentConfig) -> Manifest {
    Manifest {
        command,
        config_sha256: Some(config::config_hash(cfg)),
        config: serde_json::to_value(cfg).expect("configs serialize"),
    }
}

fn seed_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    Path::new(&cfg.output_dir).join(format!("seed_{seed}"))
}

fn data_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    seed_dir(cfg, seed).join("data")
}

fn arm_dir(cfg: &ExperimentConfig, seed: u64, arm: Arm) -> PathBuf {
    seed_dir(cfg, seed).join(arm.label())
}

fn read_dataset(path: &Path) -> Result<SyntheticDataset, CliError> {
    require(path, "gen-data")?;
    let file = File::open(path).map_err(CliError::io(path))?;
    Ok(SyntheticDataset::read_from(BufReader::new(file))?)
}

fn read_text(path: &Path, producer: &'static str) -> Result<String, CliError> {
    require(path, producer)?;
    std::fs::read_to_string(path).map_err(CliError::io(path))
}

fn dataset_bytes(d: &SyntheticDataset) -> Vec<u8> {
    let mut buf = Vec::new();
    d.write_to(&mut buf).expect("writing to memory cannot fail");
    buf
}

fn dataset_csv(d: &SyntheticDataset) -> Vec<u8> {
    let mut buf = Vec::new();
    d.write_csv(&mut buf).expect("writing to memory cannot fail");
    buf
}

/// `category,count,group,log_ratio`
pub fn stats_csv(d: &SyntheticDataset) -> Result<String, CliError> {
    let ratios = imbalance_stats(d)?;
    let mut out = String::from("category,count,group,log_ratio\n");
    for (j, r) in ratios.iter().enumerate() {
        writeln!(out, "{j},{},{},{r:?}", d.counts[j], d.groups[j]).unwrap();
    }
    Ok(out)
}

/// Writes `seed_<s>/data` for every seed; returns the stage directories.
pub fn cmd_gen(cfg: &ExperimentConfig, csv: bool) -> Result<Vec<PathBuf>, CliError> {
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let spec = efl::DatasetSpec {
                seed,
                ..cfg.dataset.clone()
            };
            let train_set = make_dataset(&spec)?;
            let eval_set = make_eval_split(&spec, cfg.eval_cap)?;
            let mut stage = Stage::new(data_dir(cfg, seed))?;
            stage.write("train.bin", dataset_bytes(&train_set))?;
            stage.write("eval.bin", dataset_bytes(&eval_set))?;
            stage.write("stats.csv", stats_csv(&train_set)?)?;
            if csv {
                stage.write("train.csv", dataset_csv(&train_set))?;
                stage.write("eval.csv", dataset_csv(&eval_set))?;
            }
            info!("seed {seed}: {} train / {} eval samples", train_set.len(), eval_set.len());
            stage.commit(manifest("gen-data", cfg))
        })
        .collect()
}

fn jobs(cfg: &ExperimentConfig) -> Vec<(u64, Arm)> {
    let arms = cfg.arms();
    cfg.seeds
        .iter()
        .flat_map(|&s| arms.iter().map(move |&a| (s, a)))
        .collect()
}

/// Trains every (seed, arm) on the stored training split.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    jobs(cfg)
        .par_iter()
        .map(|&(seed, arm)| {
            let data = read_dataset(&data_dir(cfg, seed).join("train.bin"))?;
            let (_, train_cfg) = cfg.resolve(arm, seed);
            let outcome = train(&data, &train_cfg)?;
            let mut stage = Stage::new(arm_dir(cfg, seed, arm).join("train"))?;
            stage.write("model.txt", outcome.model.to_text())?;
            stage.write("state.txt", outcome.state.to_text())?;
            stage.write("train_log.csv", outcome.log.to_csv())?;
            stage.write("trajectory.csv", outcome.log.trajectory_csv())?;
            info!("seed {seed} {}: {} iterations", arm.label(), outcome.log.records.len());
            stage.commit(manifest("train", cfg))
        })
        .collect()
}

/// Evaluates every trained (seed, arm) on the held-out split.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    jobs(cfg)
        .par_iter()
        .map(|&(seed, arm)| {
            let eval_set = read_dataset(&data_dir(cfg, seed).join("eval.bin"))?;
            let dir = arm_dir(cfg, seed, arm);
            let model = ModelParams::from_text(&read_text(&dir.join("train/model.txt"), "train")?)?;
            // The state is not needed for scoring but must belong to the same run.
            let state = CategoryState::from_text(&read_text(&dir.join("train/state.txt"), "train")?)?;
            if state.num_categories() != model.num_categories() {
                return Err(efl::Error::Contract("model and state disagree on the category count".into()).into());
            }
            let report = evaluate(&model, &eval_set)?;
            let mut stage = Stage::new(dir.join("eval"))?;
            stage.write("percat.csv", report.percat_csv())?;
            stage.write("groups.csv", report.groups_csv())?;
            stage.write("margins.csv", margins_csv(&margins(&model, &eval_set)?))?;
            stage.commit(manifest("eval", cfg))
        })
        .collect()
}

/// `x_t` from -10 to 10 in steps of 0.1.
pub fn curve_grid() -> Vec<f64> {
    (0..=200).map(|i| (i as f64 - 100.0) / 10.0).collect()
}

pub fn cmd_curves(cfg: &ExperimentConfig, gamma_vs: &[f64]) -> Result<PathBuf, CliError> {
    let hp = cfg.train.loss;
    let grid = curve_grid();
    let mut rows = loss_curves(&hp, gamma_vs, &grid, false)?;
    rows.extend(loss_curves(&hp, gamma_vs, &grid, true)?);
    let mut stage = Stage::new(Path::new(&cfg.output_dir).join("curves"))?;
    stage.write("curves.csv", curves_csv(&rows))?;
    stage.commit(manifest("curves", cfg))
}

/// Train, evaluate and tabulate every (seed, arm).
pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let runs = run_compare(cfg)?;
    let rows: Vec<CompareRow> = runs.iter().map(CompareRow::from_run).collect();
    let mut stage = Stage::new(Path::new(&cfg.output_dir).join("compare"))?;
    stage.write("compare.csv", compare_csv(&rows))?;
    stage.write("compare_summary.csv", summary_csv(&summarize(&rows)))?;
    for run in &runs {
        let dir = PathBuf::from("runs")
            .join(format!("seed_{}", run.seed))
            .join(run.arm.label());
        let counts = cfg.resolve(run.arm, run.seed).0.counts()?;
        stage.write(dir.join("percat.csv"), run.report.percat_csv())?;
        stage.write(dir.join("groups.csv"), run.report.groups_csv())?;
        stage.write(
            dir.join("margins.csv"),
            margins_csv(&efl::metrics::margin_table(&run.report, &counts)?),
        )?;
        stage.write(dir.join("train_log.csv"), run.outcome.log.to_csv())?;
        stage.write(dir.join("trajectory.csv"), run.outcome.log.trajectory_csv())?;
    }
    stage.commit(manifest("compare", cfg))
}

/// Builds the check grid for one variant from the arguments.
pub fn gradcheck_spec(args: &GradCheckArgs, hp: LossHyperParams, variant: Variant) -> CheckSpec {
    let mut spec = CheckSpec::new(variant);
    spec.hp = hp.with_variant(variant);
    if let Some(v) = &args.xs {
        spec.xs = v.clone();
    }
    if let Some(v) = &args.gamma_vs {
        spec.gamma_vs = v.clone();
    }
    if let Some(v) = &args.qualities {
        spec.qualities = v.clone();
    }
    if let Some(v) = &args.w_ts {
        spec.w_ts = v.clone();
    }
    spec.h = args.h.unwrap_or(spec.h);
    spec.rtol = args.rtol.unwrap_or(spec.rtol);
    spec.atol = args.atol.unwrap_or(spec.atol);
    spec
}

/// One line per variant, then one per failing point.
pub fn render_report(report: &CheckReport) -> String {
    let failures: Vec<_> = report.failures().collect();
    let mut out = format!(
        "{:<12} points={:<4} max_abs_err={:.3e} max_rel_err={:.3e} {}\n",
        report.variant.name(),
        report.results.len(),
        report.max_abs_err,
        report.max_rel_err,
        if failures.is_empty() { "PASS" } else { "FAIL" }
    );
    for f in failures {
        let p = &f.point;
        writeln!(
            out,
            "  x={} y={} quality={} gamma_v={} w_t={} analytical={:e} numerical={:e}{}",
            p.x,
            p.target.y(),
            p.target.soft_label(),
            p.gamma_v,
            p.w_t,
            f.analytical,
            f.numerical,
            f.error.as_deref().map(|e| format!(" ({e})")).unwrap_or_default()
        )
        .unwrap();
    }
    out
}

pub fn cmd_gradcheck(args: &GradCheckArgs) -> Result<(), CliError> {
    let cfg = args.config.as_deref().map(config::load).transpose()?;
    let hp = cfg.as_ref().map(|c| c.train.loss).unwrap_or_default();
    let variants = args.variant.map(|v| vec![v]).unwrap_or_else(|| Variant::ALL.to_vec());
    let mut reports = Vec::new();
    for v in variants {
        let report = run_checks(&gradcheck_spec(args, hp, v))?;
        print!("{}", render_report(&report));
        reports.push(report);
    }
    let out_dir = args.out.clone().or_else(|| cfg.as_ref().map(|c| c.output_dir.clone()));
    if let Some(dir) = out_dir {
        let mut stage = Stage::new(Path::new(&dir).join("gradcheck"))?;
        for r in &reports {
            stage.write(format!("gradcheck_{}.csv", r.variant.name()), r.to_csv())?;
        }
        stage.commit(Manifest {
            command: "grad-check",
            config_sha256: cfg.as_ref().map(config::config_hash),
            config: serde_json::json!({ "loss": hp }),
        })?;
    }
    let failures: usize = reports.iter().map(|r| r.failures().count()).sum();
    if failures > 0 {
        return Err(CliError::GradCheck { failures });
    }
    Ok(())
}
