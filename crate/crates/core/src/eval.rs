//! Metrics and corpus analytics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active::average_ranks;
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::label_model::{ModelParams, ModelState};
use crate::lf::LabelMatrix;

fn class_counts(scores: &[f64], truth: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores but {} truth labels",
            scores.len(),
            truth.len()
        )));
    }
    if let Some(t) = truth.iter().find(|&&t| t > 1) {
        return Err(Error::InvalidArgument(format!("truth label {t} is not 0 or 1")));
    }
    let pos = truth.iter().filter(|&&t| t == 1).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument("truth labels contain a single class".into()));
    }
    Ok((pos, neg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores at or above this value are called positive. The first point
    /// uses +∞.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub auc: f64,
    pub points: Vec<RocPoint>,
}

/// Rank-based AUC (Mann–Whitney U over positive/negative pairs, ties
/// counting one half) and the ROC curve with one point per distinct score.
pub fn roc_auc(scores: &[f64], truth: &[u8]) -> Result<Roc> {
    let (n_pos, n_neg) = class_counts(scores, truth)?;
    let ranks = average_ranks(scores, false);
    let rank_sum: f64 = ranks.iter().zip(truth).filter(|p| *p.1 == 1).map(|p| *p.0).sum();
    let (np, nn) = (n_pos as f64, n_neg as f64);
    let auc = (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if truth[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / nn,
            tpr: tp as f64 / np,
            threshold: s,
        });
    }
    Ok(Roc { auc, points })
}

pub fn roc_points_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("fpr,tpr,threshold\n");
    for p in points {
        writeln!(out, "{},{},{}", p.fpr, p.tpr, p.threshold).unwrap();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn at_threshold(scores: &[f64], truth: &[u8], t: f64) -> Self {
        let mut c = ConfusionCounts::default();
        for (&s, &y) in scores.iter().zip(truth) {
            match (s >= t, y == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn sensitivity(&self) -> f64 {
        self.tp as f64 / (self.tp + self.fn_) as f64
    }

    pub fn specificity(&self) -> f64 {
        self.tn as f64 / (self.tn + self.fp) as f64
    }
}

/// Calls a score positive when it is at least `t`.
pub fn sensitivity_specificity(scores: &[f64], truth: &[u8], t: f64) -> Result<(f64, f64)> {
    class_counts(scores, truth)?;
    let c = ConfusionCounts::at_threshold(scores, truth, t);
    Ok((c.sensitivity(), c.specificity()))
}

/// Two annotators' binary judgments on the same documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementTable {
    pub both_pos: u64,
    pub a_pos_b_neg: u64,
    pub a_neg_b_pos: u64,
    pub both_neg: u64,
}

impl AgreementTable {
    pub fn total(&self) -> u64 {
        self.both_pos + self.a_pos_b_neg + self.a_neg_b_pos + self.both_neg
    }

    pub fn transpose(&self) -> Self {
        AgreementTable {
            a_pos_b_neg: self.a_neg_b_pos,
            a_neg_b_pos: self.a_pos_b_neg,
            ..*self
        }
    }
}

pub fn cohens_kappa(table: &AgreementTable) -> Result<f64> {
    let n = table.total() as f64;
    if n == 0.0 {
        return Err(Error::InvalidArgument("agreement table is empty".into()));
    }
    let p_o = (table.both_pos + table.both_neg) as f64 / n;
    let a_pos = (table.both_pos + table.a_pos_b_neg) as f64 / n;
    let b_pos = (table.both_pos + table.a_neg_b_pos) as f64 / n;
    let p_e = a_pos * b_pos + (1.0 - a_pos) * (1.0 - b_pos);
    if p_e == 1.0 {
        // Both annotators used a single, shared label.
        return Ok(if p_o == 1.0 { 1.0 } else { 0.0 });
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// `ln(k!)` for `k` up to a fixed bound.
#[derive(Debug, Clone)]
pub struct LogFactorials(Vec<f64>);

impl LogFactorials {
    pub fn up_to(n: usize) -> Self {
        let mut t = Vec::with_capacity(n + 1);
        t.push(0.0);
        let mut acc = 0.0;
        for k in 1..=n {
            acc += (k as f64).ln();
            t.push(acc);
        }
        LogFactorials(t)
    }

    pub fn get(&self, k: usize) -> f64 {
        self.0[k]
    }

    pub fn max(&self) -> usize {
        self.0.len() - 1
    }
}

/// Two-sided Fisher exact test on `[[a, b], [c, d]]`: the total probability
/// of all tables with the same margins that are no more likely than the
/// observed one.
pub fn fisher_exact(a: u64, b: u64, c: u64, d: u64) -> f64 {
    let n = (a + b + c + d) as usize;
    fisher_exact_with(&LogFactorials::up_to(n), a, b, c, d)
}

pub fn fisher_exact_with(lf: &LogFactorials, a: u64, b: u64, c: u64, d: u64) -> f64 {
    let (a, b, c, d) = (a as usize, b as usize, c as usize, d as usize);
    let n = a + b + c + d;
    if n == 0 {
        return 1.0;
    }
    let row1 = a + b;
    let row2 = c + d;
    let col1 = a + c;
    let col2 = b + d;
    let fixed = lf.get(row1) + lf.get(row2) + lf.get(col1) + lf.get(col2) - lf.get(n);
    let log_p = |x: usize| fixed - lf.get(x) - lf.get(row1 - x) - lf.get(col1 - x) - lf.get(row2 + x - col1);
    let observed = log_p(a);
    let lo = col1.saturating_sub(row2);
    let hi = row1.min(col1);
    let cutoff = observed + (1.0 + 1e-7f64).ln();
    let total: f64 = (lo..=hi).map(log_p).filter(|&lp| lp <= cutoff).map(f64::exp).sum();
    total.min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnrichmentFeature {
    Entities,
    MeshTerms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentRow {
    pub feature: String,
    pub target_docs: usize,
    pub background_docs: usize,
    /// Documents per 1000 containing the feature.
    pub rate_target: f64,
    pub rate_background: f64,
    pub p_value: f64,
}

fn feature_ids(doc: &Document, feature: EnrichmentFeature) -> BTreeSet<String> {
    match feature {
        EnrichmentFeature::Entities => doc
            .entities
            .iter()
            .map(|e| format!("{}:{}", e.entity_type, e.id))
            .collect(),
        EnrichmentFeature::MeshTerms => doc.mesh_terms.iter().cloned().collect(),
    }
}

fn document_frequencies<'a>(
    docs: impl Iterator<Item = &'a Document>,
    feature: EnrichmentFeature,
) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for d in docs {
        for f in feature_ids(d, feature) {
            *counts.entry(f).or_insert(0) += 1;
        }
    }
    counts
}

/// Per-feature Fisher test of document frequency in `target` versus
/// `background`, sorted by p-value then feature id.
pub fn enrichment_report(
    target: &[&Document],
    background: &[&Document],
    feature: EnrichmentFeature,
) -> Result<Vec<EnrichmentRow>> {
    if target.is_empty() || background.is_empty() {
        return Err(Error::InvalidArgument("enrichment needs non-empty target and background".into()));
    }
    let t_counts = document_frequencies(target.iter().copied(), feature);
    let b_counts = document_frequencies(background.iter().copied(), feature);
    let features: BTreeSet<&String> = t_counts.keys().chain(b_counts.keys()).collect();
    let (nt, nb) = (target.len(), background.len());
    let lf = LogFactorials::up_to(nt + nb);
    let mut rows: Vec<EnrichmentRow> = features
        .into_par_iter()
        .map(|f| {
            let t = t_counts.get(f).copied().unwrap_or(0);
            let b = b_counts.get(f).copied().unwrap_or(0);
            EnrichmentRow {
                feature: f.clone(),
                target_docs: t,
                background_docs: b,
                rate_target: 1000.0 * t as f64 / nt as f64,
                rate_background: 1000.0 * b as f64 / nb as f64,
                p_value: fisher_exact_with(&lf, t as u64, (nt - t) as u64, b as u64, (nb - b) as u64),
            }
        })
        .collect();
    rows.sort_by(|a, b| a.p_value.total_cmp(&b.p_value).then_with(|| a.feature.cmp(&b.feature)));
    Ok(rows)
}

pub fn enrichment_tsv(rows: &[EnrichmentRow]) -> String {
    let mut out = String::from("feature\ttarget_docs\tbackground_docs\trate_target_per_1000\trate_background_per_1000\tp_value\n");
    for r in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{:.3}\t{:.3}\t{:.6e}",
            r.feature, r.target_docs, r.background_docs, r.rate_target, r.rate_background, r.p_value
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub group: String,
    pub removed: Vec<String>,
    /// `None` when removing the group leaves fewer than three functions.
    pub auc_without: Option<f64>,
    pub delta: Option<f64>,
}

impl AblationRow {
    pub fn is_ablatable(&self) -> bool {
        self.auc_without.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub full_auc: f64,
    pub groups: Vec<AblationRow>,
}

/// Evaluation AUC of a model refit on `matrix`, calibrated on the `labeled`
/// rows and scored against the `eval` rows.
pub fn model_auc(
    matrix: &LabelMatrix,
    params: &ModelParams,
    labeled: &[(usize, u8)],
    eval: &[(usize, u8)],
) -> Result<f64> {
    let model = ModelState::fit(matrix, params, labeled, 0)?;
    let acc = model.accuracies();
    let scores: Vec<f64> = eval.iter().map(|&(r, _)| model.predict_row(matrix.row(r), &acc).p).collect();
    let truth: Vec<u8> = eval.iter().map(|e| e.1).collect();
    Ok(roc_auc(&scores, &truth)?.auc)
}

/// Refits the model without each group's columns and reports the change in
/// evaluation AUC. `groups` maps a group tag to its lf_ids.
pub fn ablate(
    matrix: &LabelMatrix,
    groups: &BTreeMap<String, Vec<String>>,
    params: &ModelParams,
    labeled: &[(usize, u8)],
    eval: &[(usize, u8)],
) -> Result<AblationReport> {
    let full_auc = model_auc(matrix, params, labeled, eval)?;
    let mut rows = Vec::with_capacity(groups.len());
    for (group, lf_ids) in groups {
        let drop: Vec<usize> = lf_ids.iter().filter_map(|id| matrix.lf_index(id)).collect();
        let (auc_without, delta) = if matrix.n_lfs() - drop.len() < 3 {
            (None, None)
        } else {
            let auc = model_auc(&matrix.without_columns(&drop), params, labeled, eval)?;
            (Some(auc), Some(full_auc - auc))
        };
        rows.push(AblationRow {
            group: group.clone(),
            removed: lf_ids.clone(),
            auc_without,
            delta,
        });
    }
    Ok(AblationReport { full_auc, groups: rows })
}

pub fn ablation_tsv(report: &AblationReport) -> String {
    let mut out = format!("group\tauc_without\tdelta\nfull\t{}\t0\n", report.full_auc);
    for r in &report.groups {
        match (r.auc_without, r.delta) {
            (Some(a), Some(d)) => writeln!(out, "{}\t{a}\t{d}", r.group).unwrap(),
            _ => writeln!(out, "{}\tnot ablatable\t", r.group).unwrap(),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub threshold: f64,
    pub n: usize,
}

pub fn evaluate(scores: &[f64], truth: &[u8], t: f64) -> Result<(EvalSummary, Roc)> {
    let roc = roc_auc(scores, truth)?;
    let (sensitivity, specificity) = sensitivity_specificity(scores, truth, t)?;
    Ok((
        EvalSummary {
            auc: roc.auc,
            sensitivity,
            specificity,
            threshold: t,
            n: scores.len(),
        },
        roc,
    ))
}

pub fn summary_tsv(s: &EvalSummary) -> String {
    format!(
        "metric\tvalue\nauc\t{}\nsensitivity\t{}\nspecificity\t{}\nthreshold\t{}\nn\t{}\n",
        s.auc, s.sensitivity, s.specificity, s.threshold, s.n
    )
}
