//! Classification analogs of the detection metrics: one-vs-rest rank AP
//! (`ap_cls`), F1 at 0.5, score margins, group means and loss-curve tables.

use std::fmt::Write as _;

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::loss::{batch_loss, efl, focal_loss, BinaryTarget, LossHyperParams};
use crate::state::CategoryState;
use crate::synth::{Group, SyntheticDataset};
use crate::train::{dataset_batch, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryMetrics {
    pub category: usize,
    pub group: Group,
    pub positives: usize,
    /// `None` when the category has no positives in the evaluated split.
    pub ap_cls: Option<f64>,
    pub f1: f64,
    pub mean_pos_score: Option<f64>,
    pub mean_neg_score: Option<f64>,
    /// `mean_pos_score - mean_neg_score`.
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupMetrics {
    pub group: Group,
    pub num_categories: usize,
    /// Mean `ap_cls` over member categories that have one.
    pub ap_cls: Option<f64>,
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_category: Vec<CategoryMetrics>,
    pub groups: Vec<GroupMetrics>,
    pub macro_ap_cls: Option<f64>,
}

impl MetricsReport {
    pub fn group(&self, group: Group) -> &GroupMetrics {
        self.groups.iter().find(|g| g.group == group).expect("every group is reported")
    }

    /// `category,group,ap_cls,f1,margin`
    pub fn percat_csv(&self) -> String {
        let mut out = String::from("category,group,ap_cls,f1,margin\n");
        for m in &self.per_category {
            writeln!(
                out,
                "{},{},{},{:?},{}",
                m.category,
                m.group,
                opt(m.ap_cls),
                m.f1,
                opt(m.margin)
            )
            .unwrap();
        }
        out
    }

    /// `group,num_categories,ap_cls,margin`, plus an `all` row with macro AP.
    pub fn groups_csv(&self) -> String {
        let mut out = String::from("group,num_categories,ap_cls,margin\n");
        for g in &self.groups {
            writeln!(out, "{},{},{},{}", g.group, g.num_categories, opt(g.ap_cls), opt(g.margin)).unwrap();
        }
        let margins: Vec<f64> = self.per_category.iter().filter_map(|m| m.margin).collect();
        writeln!(
            out,
            "all,{},{},{}",
            self.per_category.len(),
            opt(self.macro_ap_cls),
            opt(mean(&margins))
        )
        .unwrap();
        out
    }
}

pub(crate) fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Rank AP: the mean, over positives, of precision at each positive's rank.
/// Scores are sorted descending; ties keep sample order.
pub fn ap_cls(scores: &[f64], positive: &[bool]) -> Option<f64> {
    debug_assert_eq!(scores.len(), positive.len());
    let total_pos = positive.iter().filter(|&&p| p).count();
    if total_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / total_pos as f64)
}

/// F1 of the rule `score >= threshold`.
pub fn f1_at(scores: &[f64], positive: &[bool], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&s, &p) in scores.iter().zip(positive) {
        match (s >= threshold, p) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fneg;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Metrics from a precomputed `N x C` probability matrix.
pub fn evaluate_scores(scores: ArrayView2<'_, f64>, labels: &[i32], groups: &[Group]) -> Result<MetricsReport> {
    let (n, c) = scores.dim();
    if labels.len() != n {
        return Err(Error::Contract(format!("{} labels for {n} score rows", labels.len())));
    }
    if groups.len() != c {
        return Err(Error::Contract(format!("{} groups for {c} categories", groups.len())));
    }
    let per_category: Vec<CategoryMetrics> = (0..c)
        .map(|j| {
            let col: Vec<f64> = scores.column(j).to_vec();
            let positive: Vec<bool> = labels.iter().map(|&l| l == j as i32).collect();
            let pos: Vec<f64> = col.iter().zip(&positive).filter(|(_, &p)| p).map(|(s, _)| *s).collect();
            let neg: Vec<f64> = col.iter().zip(&positive).filter(|(_, &p)| !p).map(|(s, _)| *s).collect();
            let mean_pos_score = mean(&pos);
            let mean_neg_score = mean(&neg);
            CategoryMetrics {
                category: j,
                group: groups[j],
                positives: pos.len(),
                ap_cls: ap_cls(&col, &positive),
                f1: f1_at(&col, &positive, 0.5),
                mean_pos_score,
                mean_neg_score,
                margin: mean_pos_score.zip(mean_neg_score).map(|(p, q)| p - q),
            }
        })
        .collect();

    let groups_out = Group::ALL
        .iter()
        .map(|&g| {
            let members: Vec<&CategoryMetrics> = per_category.iter().filter(|m| m.group == g).collect();
            let aps: Vec<f64> = members.iter().filter_map(|m| m.ap_cls).collect();
            let margins: Vec<f64> = members.iter().filter_map(|m| m.margin).collect();
            GroupMetrics {
                group: g,
                num_categories: members.len(),
                ap_cls: mean(&aps),
                margin: mean(&margins),
            }
        })
        .collect();
    let aps: Vec<f64> = per_category.iter().filter_map(|m| m.ap_cls).collect();
    Ok(MetricsReport {
        per_category,
        groups: groups_out,
        macro_ap_cls: mean(&aps),
    })
}

pub fn evaluate(model: &ModelParams, dataset: &SyntheticDataset) -> Result<MetricsReport> {
    if model.num_categories() != dataset.num_categories() {
        return Err(Error::Contract(format!(
            "model has {} categories, dataset {}",
            model.num_categories(),
            dataset.num_categories()
        )));
    }
    let scores = model.predict(dataset.features.view())?;
    evaluate_scores(scores.view(), &dataset.labels, &dataset.groups)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginRow {
    pub category: usize,
    pub group: Group,
    /// Training-split positive count (the sort key).
    pub train_count: usize,
    pub margin: Option<f64>,
}

/// Per-category margins, ordered by descending training count.
pub fn margins(model: &ModelParams, dataset: &SyntheticDataset) -> Result<Vec<MarginRow>> {
    let report = evaluate(model, dataset)?;
    margin_table(&report, &dataset.spec.counts()?)
}

pub fn margin_table(report: &MetricsReport, train_counts: &[usize]) -> Result<Vec<MarginRow>> {
    if train_counts.len() != report.per_category.len() {
        return Err(Error::Contract("train counts do not match report".into()));
    }
    let mut rows: Vec<MarginRow> = report
        .per_category
        .iter()
        .map(|m| MarginRow {
            category: m.category,
            group: m.group,
            train_count: train_counts[m.category],
            margin: m.margin,
        })
        .collect();
    rows.sort_by(|a, b| b.train_count.cmp(&a.train_count).then(a.category.cmp(&b.category)));
    Ok(rows)
}

/// `category,group,train_count,margin`
pub fn margins_csv(rows: &[MarginRow]) -> String {
    let mut out = String::from("category,group,train_count,margin\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.category, r.group, r.train_count, opt(r.margin)).unwrap();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub x_t: f64,
    pub gamma_v: f64,
    pub weighted: bool,
    pub loss: f64,
}

/// Loss of a positive sample at signed logit `x_t`, with `alpha_t` ignored and
/// focusing exponent `gamma_b + gamma_v`. With `weighted` the value is scaled
/// by `(gamma_b + gamma_v) / gamma_b`.
pub fn loss_curves(hp: &LossHyperParams, gamma_vs: &[f64], grid: &[f64], weighted: bool) -> Result<Vec<CurveRow>> {
    let hp = hp.without_alpha();
    hp.validate()?;
    if let Some(x) = grid.iter().find(|x| !x.is_finite()) {
        return Err(Error::param("x_t", format!("grid value {x} is not finite")));
    }
    let mut rows = Vec::with_capacity(gamma_vs.len() * grid.len());
    for &gamma_v in gamma_vs {
        for &x_t in grid {
            let loss = if weighted {
                efl(x_t, BinaryTarget::POSITIVE, &hp, gamma_v)?
            } else {
                if !(0.0..=hp.s).contains(&gamma_v) {
                    return Err(Error::param("gamma_v", format!("{gamma_v} is outside [0, s]")));
                }
                focal_loss(x_t, BinaryTarget::POSITIVE, &hp, hp.gamma_b + gamma_v)?
            };
            rows.push(CurveRow {
                x_t,
                gamma_v,
                weighted,
                loss,
            });
        }
    }
    Ok(rows)
}

/// `x_t,gamma_v,weighted,loss`
pub fn curves_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("x_t,gamma_v,weighted,loss\n");
    for r in rows {
        writeln!(out, "{:?},{:?},{},{:?}", r.x_t, r.gamma_v, r.weighted as u8, r.loss).unwrap();
    }
    out
}

/// Batch loss of a frozen model on the given rows of a dataset.
pub fn dataset_loss(
    model: &ModelParams,
    dataset: &SyntheticDataset,
    rows: &[usize],
    hp: &LossHyperParams,
    state: &CategoryState,
) -> Result<f64> {
    let (feats, targets) = dataset_batch(dataset, rows);
    let logits = model.logits(feats.view())?;
    Ok(batch_loss(logits.view(), targets.view(), hp, state)?.total)
}
