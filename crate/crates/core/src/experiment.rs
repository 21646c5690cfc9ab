//! Multi-seed, multi-variant comparisons on synthetic data.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::Variant;
use crate::metrics::{evaluate, opt, MetricsReport};
use crate::synth::{make_dataset, make_eval_split, DatasetSpec, Group, SyntheticDataset};
use crate::train::{train, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Scale factors to sweep for the variants that use one. Defaults to `train.loss.s`.
    #[serde(default)]
    pub s_values: Vec<f64>,
    /// Positives per category kept in the held-out split.
    #[serde(default = "default_eval_cap")]
    pub eval_cap: usize,
    /// Worker threads; results do not depend on it.
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_output_dir() -> String {
    "out".into()
}
fn default_variants() -> Vec<Variant> {
    vec![Variant::Fl, Variant::Efl]
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_eval_cap() -> usize {
    30
}
fn default_workers() -> usize {
    1
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSpec, train: TrainConfig) -> Self {
        Self {
            dataset,
            train,
            output_dir: default_output_dir(),
            variants: default_variants(),
            seeds: default_seeds(),
            s_values: Vec::new(),
            eval_cap: default_eval_cap(),
            workers: default_workers(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::param("seeds", "at least one seed is required"));
        }
        if self.variants.is_empty() {
            return Err(Error::param("variants", "at least one variant is required"));
        }
        if self.eval_cap == 0 {
            return Err(Error::param("eval_cap", "must be >= 1"));
        }
        if self.workers == 0 {
            return Err(Error::param("workers", "must be >= 1"));
        }
        for &s in &self.s_values {
            self.train.loss.with_s(s).validate()?;
        }
        Ok(())
    }

    /// Variant/scale combinations in table order: by variant, then ascending `s`.
    pub fn arms(&self) -> Vec<Arm> {
        let mut s_values = if self.s_values.is_empty() {
            vec![self.train.loss.s]
        } else {
            self.s_values.clone()
        };
        s_values.sort_by(f64::total_cmp);
        s_values.dedup();
        let mut arms = Vec::new();
        for &variant in &self.variants {
            if variant == Variant::Fl {
                arms.push(Arm {
                    variant,
                    s: self.train.loss.s,
                });
            } else {
                arms.extend(s_values.iter().map(|&s| Arm { variant, s }));
            }
        }
        arms.dedup();
        arms
    }

    /// Data spec and train config for one seed and arm.
    pub fn resolve(&self, arm: Arm, seed: u64) -> (DatasetSpec, TrainConfig) {
        let dataset = DatasetSpec {
            seed,
            ..self.dataset.clone()
        };
        let mut train = self.train.clone();
        train.seed = seed;
        train.loss.variant = arm.variant;
        train.loss.s = arm.s;
        (dataset, train)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arm {
    pub variant: Variant,
    pub s: f64,
}

impl Arm {
    pub fn label(&self) -> String {
        match self.variant {
            Variant::Fl => "fl".to_string(),
            v => format!("{v}_s{}", self.s),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub arm: Arm,
    pub seed: u64,
    pub outcome: TrainOutcome,
    pub report: MetricsReport,
}

/// Train and evaluate one configuration on prebuilt splits.
pub fn run_one(
    train_set: &SyntheticDataset,
    eval_set: &SyntheticDataset,
    config: &TrainConfig,
) -> Result<(TrainOutcome, MetricsReport)> {
    let outcome = train(train_set, config)?;
    let report = evaluate(&outcome.model, eval_set)?;
    Ok((outcome, report))
}

/// Runs every arm for every seed. The train/eval splits of a seed are shared
/// by all arms. Output order is (seed, arm) regardless of thread count.
pub fn run_compare(config: &ExperimentConfig) -> Result<Vec<RunResult>> {
    config.validate()?;
    let arms = config.arms();
    let splits: Vec<(SyntheticDataset, SyntheticDataset)> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let spec = DatasetSpec {
                seed,
                ..config.dataset.clone()
            };
            Ok((make_dataset(&spec)?, make_eval_split(&spec, config.eval_cap)?))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, Arm)> = (0..config.seeds.len())
        .flat_map(|k| arms.iter().map(move |&a| (k, a)))
        .collect();
    jobs.par_iter()
        .map(|&(k, arm)| {
            let seed = config.seeds[k];
            let (_, train_cfg) = config.resolve(arm, seed);
            let (outcome, report) = run_one(&splits[k].0, &splits[k].1, &train_cfg)?;
            Ok(RunResult {
                arm,
                seed,
                outcome,
                report,
            })
        })
        .collect()
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub arm: String,
    pub variant: Variant,
    pub s: f64,
    pub seed: u64,
    pub rare: Option<f64>,
    pub common: Option<f64>,
    pub frequent: Option<f64>,
    pub macro_ap: Option<f64>,
    pub rare_margin: Option<f64>,
}

impl CompareRow {
    pub fn from_run(run: &RunResult) -> Self {
        let r = &run.report;
        Self {
            arm: run.arm.label(),
            variant: run.arm.variant,
            s: run.arm.s,
            seed: run.seed,
            rare: r.group(Group::Rare).ap_cls,
            common: r.group(Group::Common).ap_cls,
            frequent: r.group(Group::Frequent).ap_cls,
            macro_ap: r.macro_ap_cls,
            rare_margin: r.group(Group::Rare).margin,
        }
    }

    fn metrics(&self) -> [Option<f64>; 5] {
        [self.rare, self.common, self.frequent, self.macro_ap, self.rare_margin]
    }
}

pub const METRIC_NAMES: [&str; 5] = ["ap_rare", "ap_common", "ap_frequent", "ap_macro", "margin_rare"];

/// `arm,variant,s,seed,ap_rare,ap_common,ap_frequent,ap_macro,margin_rare`
pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = format!("arm,variant,s,seed,{}\n", METRIC_NAMES.join(","));
    for r in rows {
        write!(out, "{},{},{:?},{}", r.arm, r.variant, r.s, r.seed).unwrap();
        for m in r.metrics() {
            write!(out, ",{}", opt(m)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Median of the values (mean of the two middle ones for even counts).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub arm: String,
    pub variant: Variant,
    pub s: f64,
    pub metric: &'static str,
    pub median: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

/// Median and spread of each metric per arm, arms in first-appearance order.
pub fn summarize(rows: &[CompareRow]) -> Vec<SummaryRow> {
    let mut arms: Vec<(&str, Variant, f64)> = Vec::new();
    for r in rows {
        if !arms.iter().any(|(a, _, _)| *a == r.arm) {
            arms.push((&r.arm, r.variant, r.s));
        }
    }
    let mut out = Vec::new();
    for (arm, variant, s) in arms {
        for (k, name) in METRIC_NAMES.iter().enumerate() {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.arm == arm)
                .filter_map(|r| r.metrics()[k])
                .collect();
            out.push(SummaryRow {
                arm: arm.to_string(),
                variant,
                s,
                metric: name,
                median: median(&vals),
                min: vals.iter().copied().reduce(f64::min),
                max: vals.iter().copied().reduce(f64::max),
            });
        }
    }
    out
}

/// `arm,variant,s,metric,median,min,max`
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("arm,variant,s,metric,median,min,max\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{:?},{},{},{},{}",
            r.arm,
            r.variant,
            r.s,
            r.metric,
            opt(r.median),
            opt(r.min),
            opt(r.max)
        )
        .unwrap();
    }
    out
}

pub fn summary_value(rows: &[SummaryRow], arm: &str, metric: &str) -> Option<f64> {
    rows.iter()
        .find(|r| r.arm == arm && r.metric == metric)
        .and_then(|r| r.median)
}
