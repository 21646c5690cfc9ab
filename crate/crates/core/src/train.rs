//! Mini-batch SGD for per-category sigmoid classifiers.
//!
//! One iteration: forward logits, [`batch_loss`], [`gather_stats`], manual
//! backward, global-norm clipping, momentum SGD with linear warmup, then a
//! single [`CategoryState::update`].

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{batch_loss, BinaryTarget, LossHyperParams, Variant};
use crate::state::{gather_stats, Accumulation, CategoryState};
use crate::synth::{seeded_rng, Sampler, SyntheticDataset, BACKGROUND};

const INIT_STREAM: u64 = 0x696e_6974;
const SAMPLER_STREAM: u64 = 0x7361_6d70;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    Random,
    Rfs,
}

/// Which per-element gradient feeds the category statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StatsSource {
    /// `|p - y|`, the logit gradient of plain sigmoid cross-entropy.
    #[default]
    CrossEntropy,
    /// `|dL/dx|` of the loss actually being optimised.
    Loss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossHyperParams,
    pub epochs: usize,
    /// Stops training after this many iterations even if epochs remain.
    pub max_iters: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_iters: usize,
    pub grad_clip_norm: Option<f64>,
    pub sampler: SamplerKind,
    pub rfs_threshold: f64,
    pub seed: u64,
    pub prior_prob: f64,
    /// Width of an optional ReLU hidden layer.
    pub hidden_units: Option<usize>,
    /// Exponential moving average for the category statistics; lifetime sums when absent.
    pub state_ema_decay: Option<f64>,
    pub stats_source: StatsSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossHyperParams::default(),
            epochs: 4,
            max_iters: None,
            batch_size: 256,
            lr: 0.02,
            momentum: 0.9,
            weight_decay: 1e-4,
            warmup_iters: 500,
            grad_clip_norm: Some(35.0),
            sampler: SamplerKind::Random,
            rfs_threshold: 0.001,
            seed: 0,
            prior_prob: 0.001,
            hidden_units: None,
            state_ema_decay: None,
            stats_source: StatsSource::CrossEntropy,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::param("lr", format!("{} must be >= 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum", "must be in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::param("weight_decay", "must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be >= 1"));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return Err(Error::param("grad_clip_norm", "must be > 0"));
            }
        }
        if !(self.prior_prob > 0.0 && self.prior_prob < 1.0) {
            return Err(Error::param("prior_prob", "must be in (0, 1)"));
        }
        if !(self.rfs_threshold > 0.0 && self.rfs_threshold <= 1.0) {
            return Err(Error::param("rfs_threshold", "must be in (0, 1]"));
        }
        if self.hidden_units == Some(0) {
            return Err(Error::param("hidden_units", "must be >= 1"));
        }
        Ok(())
    }

    /// Learning rate at (zero-based) iteration `i`.
    pub fn lr_at(&self, i: usize) -> f64 {
        if i < self.warmup_iters {
            self.lr * (i + 1) as f64 / self.warmup_iters as f64
        } else {
            self.lr
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    /// `feature_dim x width`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub hidden: Option<HiddenLayer>,
    /// `input_dim x C`, where `input_dim` is the hidden width if present.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Bias that makes every initial probability equal `prior`.
pub fn prior_bias(prior: f64) -> f64 {
    -((1.0 - prior) / prior).ln()
}

impl ModelParams {
    pub fn init(feature_dim: usize, num_categories: usize, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(config.seed, INIT_STREAM);
        let hidden = config.hidden_units.map(|width| {
            let he = Normal::new(0.0, (2.0 / feature_dim as f64).sqrt()).unwrap();
            HiddenLayer {
                weights: Array2::from_shape_simple_fn((feature_dim, width), || he.sample(&mut rng)),
                bias: Array1::zeros(width),
            }
        });
        let input = config.hidden_units.unwrap_or(feature_dim);
        let normal = Normal::new(0.0, 0.01).unwrap();
        Ok(Self {
            hidden,
            weights: Array2::from_shape_simple_fn((input, num_categories), || normal.sample(&mut rng)),
            bias: Array1::from_elem(num_categories, prior_bias(config.prior_prob)),
        })
    }

    pub fn feature_dim(&self) -> usize {
        match &self.hidden {
            Some(h) => h.weights.nrows(),
            None => self.weights.nrows(),
        }
    }

    pub fn num_categories(&self) -> usize {
        self.weights.ncols()
    }

    fn check_features(&self, features: ArrayView2<'_, f64>) -> Result<()> {
        if features.ncols() != self.feature_dim() {
            return Err(Error::Contract(format!(
                "features have {} columns, model expects {}",
                features.ncols(),
                self.feature_dim()
            )));
        }
        Ok(())
    }

    /// Returns (hidden pre-activations, logits).
    fn forward(&self, features: ArrayView2<'_, f64>) -> (Option<Array2<f64>>, Array2<f64>) {
        match &self.hidden {
            Some(h) => {
                let pre = features.dot(&h.weights) + &h.bias;
                let act = pre.mapv(|v| v.max(0.0));
                (Some(pre), act.dot(&self.weights) + &self.bias)
            }
            None => (None, features.dot(&self.weights) + &self.bias),
        }
    }

    pub fn logits(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_features(features)?;
        Ok(self.forward(features).1)
    }

    /// `sigmoid(features . W + b)` for every sample and category.
    pub fn predict(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.logits(features)?.mapv(crate::loss::sigmoid))
    }

    pub fn to_text(&self) -> String {
        let width = self.hidden.as_ref().map_or(0, |h| h.bias.len());
        let mut out = format!(
            "efl-model v1 features={} categories={} hidden={}\n",
            self.feature_dim(),
            self.num_categories(),
            width
        );
        let mut row = |tag: &str, values: &mut dyn Iterator<Item = &f64>| {
            out.push_str(tag);
            for v in values {
                write!(out, " {v:?}").unwrap();
            }
            out.push('\n');
        };
        if let Some(h) = &self.hidden {
            row("hidden_bias", &mut h.bias.iter());
            for r in h.weights.rows() {
                row("hidden_w", &mut r.iter());
            }
        }
        row("bias", &mut self.bias.iter());
        for r in self.weights.rows() {
            row("w", &mut r.iter());
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, 1, "empty input"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "efl-model" {
            return Err(Error::parse(1, 1, "expected `efl-model v1 features=.. categories=.. hidden=..`"));
        }
        if fields[1] != "v1" {
            return Err(Error::parse(1, 2, "unsupported version"));
        }
        let mut dims = [0usize; 3];
        for (i, key) in ["features", "categories", "hidden"].iter().enumerate() {
            dims[i] = fields[2 + i]
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::parse(1, 3 + i, format!("expected `{key}=<int>`")))?;
        }
        let [d, c, width] = dims;
        let mut take = |tag: &str, len: usize| -> Result<Vec<f64>> {
            let (idx, line) = lines
                .next()
                .ok_or_else(|| Error::parse(0, 1, format!("missing `{tag}` row")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(tag) {
                return Err(Error::parse(idx + 1, 1, format!("expected `{tag}`")));
            }
            let vals = parts
                .enumerate()
                .map(|(k, v)| v.parse::<f64>().map_err(|e| Error::parse(idx + 1, k + 2, e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != len {
                return Err(Error::parse(idx + 1, 1, format!("expected {len} values, found {}", vals.len())));
            }
            Ok(vals)
        };
        let hidden = if width > 0 {
            let bias = Array1::from(take("hidden_bias", width)?);
            let mut w = Vec::with_capacity(d * width);
            for _ in 0..d {
                w.extend(take("hidden_w", width)?);
            }
            Some(HiddenLayer {
                weights: Array2::from_shape_vec((d, width), w).unwrap(),
                bias,
            })
        } else {
            None
        };
        let input = if width > 0 { width } else { d };
        let bias = Array1::from(take("bias", c)?);
        let mut w = Vec::with_capacity(input * c);
        for _ in 0..input {
            w.extend(take("w", c)?);
        }
        Ok(Self {
            hidden,
            weights: Array2::from_shape_vec((input, c), w).unwrap(),
            bias,
        })
    }
}

/// Gradients with the same layout as [`ModelParams`].
#[derive(Debug, Clone)]
struct ParamGrads {
    hidden: Option<(Array2<f64>, Array1<f64>)>,
    weights: Array2<f64>,
    bias: Array1<f64>,
}

impl ParamGrads {
    fn zeros_like(m: &ModelParams) -> Self {
        Self {
            hidden: m
                .hidden
                .as_ref()
                .map(|h| (Array2::zeros(h.weights.dim()), Array1::zeros(h.bias.len()))),
            weights: Array2::zeros(m.weights.dim()),
            bias: Array1::zeros(m.bias.len()),
        }
    }

    fn norm(&self) -> f64 {
        let mut sq = self.weights.iter().chain(self.bias.iter()).map(|v| v * v).sum::<f64>();
        if let Some((w, b)) = &self.hidden {
            sq += w.iter().chain(b.iter()).map(|v| v * v).sum::<f64>();
        }
        sq.sqrt()
    }

    fn scale(&mut self, k: f64) {
        self.weights *= k;
        self.bias *= k;
        if let Some((w, b)) = &mut self.hidden {
            *w *= k;
            *b *= k;
        }
    }
}

fn backward(
    model: &ModelParams,
    features: ArrayView2<'_, f64>,
    hidden_pre: Option<&Array2<f64>>,
    logit_grads: &Array2<f64>,
) -> ParamGrads {
    match (&model.hidden, hidden_pre) {
        (Some(_), Some(pre)) => {
            let act = pre.mapv(|v| v.max(0.0));
            let mut d_act = logit_grads.dot(&model.weights.t());
            d_act.zip_mut_with(pre, |g, &p| {
                if p <= 0.0 {
                    *g = 0.0
                }
            });
            ParamGrads {
                hidden: Some((features.t().dot(&d_act), d_act.sum_axis(Axis(0)))),
                weights: act.t().dot(logit_grads),
                bias: logit_grads.sum_axis(Axis(0)),
            }
        }
        _ => ParamGrads {
            hidden: None,
            weights: features.t().dot(logit_grads),
            bias: logit_grads.sum_axis(Axis(0)),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub g_min: f64,
    pub g_max: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<IterRecord>,
    /// `g[j]` after each iteration's state update.
    pub g_trajectory: Vec<Vec<f64>>,
    /// Focusing exponent the loss kernel will use for each category at the
    /// next iteration (`gamma_b` for FL and EQLv2&Focal).
    pub gamma_trajectory: Vec<Vec<f64>>,
}

impl TrainLog {
    /// `iteration,loss,lr,grad_norm,g_min,g_max`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss,lr,grad_norm,g_min,g_max\n");
        for r in &self.records {
            writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{:?}",
                r.iteration, r.loss, r.lr, r.grad_norm, r.g_min, r.g_max
            )
            .unwrap();
        }
        out
    }

    /// `iteration,category,g,gamma`
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("iteration,category,g,gamma\n");
        for (it, (g, gamma)) in self.g_trajectory.iter().zip(&self.gamma_trajectory).enumerate() {
            for (j, (gj, gam)) in g.iter().zip(gamma).enumerate() {
                writeln!(out, "{it},{j},{gj:?},{gam:?}").unwrap();
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub state: CategoryState,
    pub log: TrainLog,
}

/// One-hot targets for a batch of labels (background rows are all-negative).
pub fn targets_for(labels: &[i32], num_categories: usize) -> Array2<BinaryTarget> {
    let mut t = Array2::from_elem((labels.len(), num_categories), BinaryTarget::NEGATIVE);
    for (i, &l) in labels.iter().enumerate() {
        if l != BACKGROUND {
            t[[i, l as usize]] = BinaryTarget::POSITIVE;
        }
    }
    t
}

/// `sigmoid(x) - y` for every element.
pub fn cross_entropy_grads(logits: ArrayView2<'_, f64>, targets: ArrayView2<'_, BinaryTarget>) -> Array2<f64> {
    let mut out = logits.mapv(crate::loss::sigmoid);
    out.zip_mut_with(&targets, |p, t| {
        if t.is_positive() {
            *p -= 1.0
        }
    });
    out
}

fn effective_gamma(hp: &LossHyperParams, state: &CategoryState) -> Vec<f64> {
    match hp.variant {
        Variant::Fl | Variant::Eqlv2Focal => vec![hp.gamma_b; state.num_categories()],
        Variant::Efl | Variant::Eqfl => state.gamma().to_vec(),
    }
}

fn first_non_finite(m: &Array2<f64>) -> Option<usize> {
    m.indexed_iter().find(|(_, v)| !v.is_finite()).map(|((_, j), _)| j)
}

struct Momentum {
    hidden: Option<(Array2<f64>, Array1<f64>)>,
    weights: Array2<f64>,
    bias: Array1<f64>,
}

fn sgd_step(model: &mut ModelParams, vel: &mut Momentum, grads: &ParamGrads, config: &TrainConfig, lr: f64) {
    let mu = config.momentum;
    let wd = config.weight_decay;
    vel.weights.zip_mut_with(&grads.weights, |v, g| *v = mu * *v + g);
    vel.bias.zip_mut_with(&grads.bias, |v, g| *v = mu * *v + g);
    model
        .weights
        .zip_mut_with(&vel.weights, |p, v| *p -= lr * (v + wd * *p));
    model.bias.zip_mut_with(&vel.bias, |p, v| *p -= lr * v);
    if let (Some(h), Some((vw, vb)), Some((gw, gb))) = (&mut model.hidden, &mut vel.hidden, &grads.hidden) {
        vw.zip_mut_with(gw, |v, g| *v = mu * *v + g);
        vb.zip_mut_with(gb, |v, g| *v = mu * *v + g);
        h.weights.zip_mut_with(vw, |p, v| *p -= lr * (v + wd * *p));
        h.bias.zip_mut_with(vb, |p, v| *p -= lr * v);
    }
}

pub fn train(dataset: &SyntheticDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Contract("cannot train on an empty dataset".into()));
    }
    let c = dataset.num_categories();
    let hp = config.loss;
    let mut state = CategoryState::init(c, &hp)?;
    if let Some(decay) = config.state_ema_decay {
        state = state.with_accumulation(Accumulation::Ema { decay })?;
    }
    let mut model = ModelParams::init(dataset.feature_dim(), c, config)?;
    let zeros = ParamGrads::zeros_like(&model);
    let mut vel = Momentum {
        hidden: zeros.hidden,
        weights: zeros.weights,
        bias: zeros.bias,
    };
    let sampler_seed = seeded_rng(config.seed, SAMPLER_STREAM).random::<u64>();
    let sampler = match config.sampler {
        SamplerKind::Random => Sampler::random(dataset, sampler_seed),
        SamplerKind::Rfs => Sampler::repeat_factor(dataset, config.rfs_threshold, sampler_seed)?,
    };

    let mut log = TrainLog::default();
    let mut iteration = 0usize;
    'epochs: for epoch in 0..config.epochs {
        let order = sampler.epoch(epoch as u64);
        for chunk in order.chunks(config.batch_size) {
            if config.max_iters.is_some_and(|m| iteration >= m) {
                break 'epochs;
            }
            let feats = dataset.features.select(Axis(0), chunk);
            let labels: Vec<i32> = chunk.iter().map(|&i| dataset.labels[i]).collect();
            let targets = targets_for(&labels, c);

            let (hidden_pre, logits) = model.forward(feats.view());
            if let Some(j) = first_non_finite(&logits) {
                return Err(Error::NonFinite {
                    iteration,
                    category: j,
                    what: "logit".into(),
                });
            }
            let out = batch_loss(logits.view(), targets.view(), &hp, &state)?;
            if let Some(j) = first_non_finite(&out.grads) {
                return Err(Error::NonFinite {
                    iteration,
                    category: j,
                    what: "loss gradient".into(),
                });
            }
            if !out.total.is_finite() {
                return Err(Error::NonFinite {
                    iteration,
                    category: 0,
                    what: format!("batch loss {}", out.total),
                });
            }
            let (pos, neg) = match config.stats_source {
                StatsSource::Loss => gather_stats(out.grads.view(), targets.view())?,
                StatsSource::CrossEntropy => {
                    let ce = cross_entropy_grads(logits.view(), targets.view());
                    gather_stats(ce.view(), targets.view())?
                }
            };

            let mut grads = backward(&model, feats.view(), hidden_pre.as_ref(), &out.grads);
            let grad_norm = grads.norm();
            if let Some(max_norm) = config.grad_clip_norm {
                if grad_norm > max_norm {
                    grads.scale(max_norm / grad_norm);
                }
            }
            let lr = config.lr_at(iteration);
            sgd_step(&mut model, &mut vel, &grads, config, lr);
            state.update(&pos, &neg)?;

            let g = state.g();
            log.records.push(IterRecord {
                iteration,
                loss: out.total,
                lr,
                grad_norm,
                g_min: g.iter().copied().fold(f64::INFINITY, f64::min),
                g_max: g.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            });
            log.g_trajectory.push(g.to_vec());
            log.gamma_trajectory.push(effective_gamma(&hp, &state));
            iteration += 1;
        }
    }
    Ok(TrainOutcome { model, state, log })
}

/// Selected rows of a dataset as (features, targets), for recomputing
/// losses outside the training loop.
pub fn dataset_batch(dataset: &SyntheticDataset, rows: &[usize]) -> (Array2<f64>, Array2<BinaryTarget>) {
    let feats = dataset.features.select(Axis(0), rows);
    let labels: Vec<i32> = rows.iter().map(|&i| dataset.labels[i]).collect();
    (feats, targets_for(&labels, dataset.num_categories()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_dataset, DatasetSpec, GroupThresholds};

    fn tiny_spec() -> DatasetSpec {
        DatasetSpec {
            num_categories: 4,
            zipf_exponent: 1.0,
            n_max: 30,
            bg_ratio: 4.0,
            feature_dim: 6,
            class_separation: 3.0,
            noise_std: 0.6,
            seed: 5,
            groups: GroupThresholds::default(),
        }
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 32,
            warmup_iters: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn warmup_schedule_is_exact() {
        let cfg = TrainConfig {
            lr: 0.02,
            warmup_iters: 4,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.lr_at(0), 0.02 * 1.0 / 4.0);
        assert_eq!(cfg.lr_at(3), 0.02 * 4.0 / 4.0);
        assert_eq!(cfg.lr_at(10), 0.02);
        let none = TrainConfig {
            warmup_iters: 0,
            ..cfg
        };
        assert_eq!(none.lr_at(0), 0.02);
    }

    #[test]
    fn zero_lr_keeps_params() {
        let ds = make_dataset(&tiny_spec()).unwrap();
        let cfg = TrainConfig {
            lr: 0.0,
            ..quick_config()
        };
        let init = ModelParams::init(ds.feature_dim(), 4, &cfg).unwrap();
        let out = train(&ds, &cfg).unwrap();
        assert_eq!(out.model, init);
        assert!(!out.log.records.is_empty());
    }

    #[test]
    fn prior_initialisation() {
        let cfg = TrainConfig::default();
        let mut m = ModelParams::init(3, 2, &cfg).unwrap();
        m.weights.fill(0.0);
        let p = m.predict(Array2::<f64>::ones((4, 3)).view()).unwrap();
        assert!(p.iter().all(|&v| (v - 0.001).abs() < 1e-15));
        assert!(m.predict(Array2::<f64>::ones((4, 5)).view()).is_err());
    }

    #[test]
    fn model_text_round_trip() {
        let cfg = TrainConfig {
            hidden_units: Some(3),
            ..TrainConfig::default()
        };
        for config in [TrainConfig::default(), cfg] {
            let m = ModelParams::init(4, 2, &config).unwrap();
            assert_eq!(ModelParams::from_text(&m.to_text()).unwrap(), m);
        }
        assert!(ModelParams::from_text("efl-model v1 features=1 categories=1 hidden=0\nbias 0.0\n").is_err());
    }

    #[test]
    fn deterministic_logs() {
        let ds = make_dataset(&tiny_spec()).unwrap();
        let a = train(&ds, &quick_config()).unwrap();
        let b = train(&ds, &quick_config()).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn max_iters_truncates() {
        let ds = make_dataset(&tiny_spec()).unwrap();
        let cfg = TrainConfig {
            epochs: 100,
            max_iters: Some(7),
            ..quick_config()
        };
        assert_eq!(train(&ds, &cfg).unwrap().log.records.len(), 7);
    }

    #[test]
    fn hidden_layer_trains() {
        let ds = make_dataset(&tiny_spec()).unwrap();
        let cfg = TrainConfig {
            hidden_units: Some(8),
            epochs: 5,
            ..quick_config()
        };
        let out = train(&ds, &cfg).unwrap();
        let first = out.log.records.first().unwrap().loss;
        let last = out.log.records.last().unwrap().loss;
        assert!(last < first, "{last} !< {first}");
    }

    #[test]
    fn divergence_is_reported() {
        let ds = make_dataset(&tiny_spec()).unwrap();
        let cfg = TrainConfig {
            lr: 1e300,
            warmup_iters: 0,
            grad_clip_norm: None,
            momentum: 0.0,
            ..quick_config()
        };
        match train(&ds, &cfg) {
            Err(Error::NonFinite { iteration, .. }) => assert!(iteration >= 1),
            other => panic!("expected a non-finite abort, got {other:?}"),
        }
    }
}
