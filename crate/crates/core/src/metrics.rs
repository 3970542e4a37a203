//! Classification, faithfulness and rationale-quality metrics, with
//! multi-run aggregation and report rendering.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label decision threshold on predicted probabilities.
pub const PREDICTION_THRESHOLD: f64 = 0.5;

pub fn binarize(probs: &[f64]) -> Vec<bool> {
    probs.iter().map(|&p| p > PREDICTION_THRESHOLD).collect()
}

/// `2TP / (2TP + FP + FN)` pooled over every (case, label) pair; 1.0 when
/// there is nothing to find and nothing predicted.
pub fn micro_f1(predictions: &[Vec<bool>], golds: &[Vec<bool>]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (p, g) in predictions.iter().zip(golds) {
        for (&p, &g) in p.iter().zip(g) {
            match (p, g) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    f1_from_counts(tp, fp, fn_)
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// F1 per label column, pooled over cases.
pub fn per_label_f1(predictions: &[Vec<bool>], golds: &[Vec<bool>]) -> Vec<f64> {
    let width = golds.first().map_or(0, Vec::len);
    (0..width)
        .map(|j| {
            let p: Vec<Vec<bool>> = predictions.iter().map(|r| vec![r[j]]).collect();
            let g: Vec<Vec<bool>> = golds.iter().map(|r| vec![r[j]]).collect();
            micro_f1(&p, &g)
        })
        .collect()
}

/// Probabilities of the gold-positive labels of one case.
pub fn gold_label_probs(probs: &[f64], gold: &[bool]) -> Vec<f64> {
    probs.iter().zip(gold).filter(|(_, &g)| g).map(|(&p, _)| p).collect()
}

/// Mean of `reference - other` over every paired entry; cases with no
/// entries are skipped. 0 when nothing is paired.
fn mean_drop(reference: &[Vec<f64>], other: &[Vec<f64>]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (r, o) in reference.iter().zip(other) {
        for (a, b) in r.iter().zip(o) {
            sum += a - b;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Mean drop of gold-label probability from the full input to the masked
/// input. Inputs hold gold-positive probabilities per case. Lower is better.
pub fn sufficiency(p_full: &[Vec<f64>], p_masked: &[Vec<f64>]) -> f64 {
    mean_drop(p_full, p_masked)
}

/// Mean drop of gold-label probability from the full input to the
/// complement input. Higher is better.
pub fn comprehensiveness_metric(p_full: &[Vec<f64>], p_complement: &[Vec<f64>]) -> f64 {
    mean_drop(p_full, p_complement)
}

/// Set F1 between selected paragraph indices.
pub fn rationale_f1(pred: &BTreeSet<usize>, gold: &BTreeSet<usize>) -> f64 {
    let tp = pred.intersection(gold).count();
    f1_from_counts(tp, pred.len() - tp, gold.len() - tp)
}

/// Selected paragraphs ordered by decreasing soft score, ties by index.
pub fn rank_selected(soft: &[f64], mask: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..soft.len()).filter(|&i| mask[i] > 0.5).collect();
    idx.sort_by(|&a, &b| soft[b].total_cmp(&soft[a]).then(a.cmp(&b)));
    idx
}

/// Precision@k of one ranking with `k = |gold|`; `None` for an empty gold set.
pub fn r_precision(ranking: &[usize], gold: &BTreeSet<usize>) -> Option<f64> {
    let k = gold.len();
    if k == 0 {
        return None;
    }
    let hits = ranking.iter().take(k).filter(|i| gold.contains(i)).count();
    Some(hits as f64 / k as f64)
}

/// Mean R-precision over cases with a nonempty gold set; `None` if there are none.
pub fn mean_r_precision(rankings: &[Vec<usize>], golds: &[BTreeSet<usize>]) -> Option<f64> {
    let scores: Vec<f64> = rankings.iter().zip(golds).filter_map(|(r, g)| r_precision(r, g)).collect();
    if scores.is_empty() {
        None
    } else {
        Some(scores.iter().sum::<f64>() / scores.len() as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub mean: f64,
    pub std: f64,
    pub n_runs: usize,
}

impl fmt::Display for RunAggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = f.precision().unwrap_or(3);
        write!(f, "{:.p$} ± {:.p$}", self.mean, self.std)
    }
}

/// Mean and population standard deviation.
pub fn aggregate_runs(values: &[f64]) -> Result<RunAggregate> {
    if values.is_empty() {
        return Err(Error::Invalid("cannot aggregate zero runs".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(RunAggregate {
        mean,
        std: var.sqrt(),
        n_runs: values.len(),
    })
}

/// Rationale quality against one kind of reference mask.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RationaleScores {
    /// Mean per-case F1.
    pub f1: f64,
    pub mean_r_precision: f64,
    /// Cases with a nonempty reference set.
    pub cases: usize,
    /// Mean reference size as a percentage of paragraphs.
    pub reference_sparsity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: String,
    pub f1: f64,
    pub train_cases: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cases: usize,
    pub micro_f1_full: f64,
    pub micro_f1_masked: f64,
    pub micro_f1_complement: f64,
    pub sufficiency: f64,
    pub comprehensiveness: f64,
    /// Mean percentage of paragraphs selected by the hard mask.
    pub observed_sparsity: f64,
    pub silver: Option<RationaleScores>,
    pub gold: Option<RationaleScores>,
    pub per_label_f1: Vec<LabelScore>,
}

impl EvalReport {
    /// Scalar fields in a fixed order, keyed as in the machine-readable output.
    pub fn scalars(&self) -> Vec<(&'static str, f64)> {
        let mut v = vec![
            ("micro_f1_full", self.micro_f1_full),
            ("micro_f1_masked", self.micro_f1_masked),
            ("micro_f1_complement", self.micro_f1_complement),
            ("sufficiency", self.sufficiency),
            ("comprehensiveness", self.comprehensiveness),
            ("observed_sparsity", self.observed_sparsity),
        ];
        if let Some(s) = &self.silver {
            v.push(("silver_f1", s.f1));
            v.push(("silver_mrp", s.mean_r_precision));
        }
        if let Some(g) = &self.gold {
            v.push(("gold_f1", g.f1));
            v.push(("gold_mrp", g.mean_r_precision));
        }
        v
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.scalars().into_iter().find(|(k, _)| *k == key).map(|(_, v)| v)
    }

    /// Pretty JSON with full-precision floats.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "cases: {}", self.cases);
        let _ = writeln!(
            out,
            "{:<10} | {:>12} | {:>10} {:>7} | {:>10} {:>7}",
            "sparsity", "entire input", "masked F1", "suff.", "compl. F1", "comp."
        );
        let _ = writeln!(
            out,
            "{:<10.1} | {:>12.4} | {:>10.4} {:>7.4} | {:>10.4} {:>7.4}",
            self.observed_sparsity,
            self.micro_f1_full,
            self.micro_f1_masked,
            self.sufficiency,
            self.micro_f1_complement,
            self.comprehensiveness
        );
        for (name, r) in [("silver", &self.silver), ("gold", &self.gold)] {
            if let Some(r) = r {
                let _ = writeln!(
                    out,
                    "{name} rationales [{:.1}%, {} cases]: mRP {:.4}  F1 {:.4}",
                    r.reference_sparsity, r.cases, r.mean_r_precision, r.f1
                );
            }
        }
        if !self.per_label_f1.is_empty() {
            let _ = writeln!(out, "{:<8} {:>8} {:>8}", "article", "train", "F1");
            for l in &self.per_label_f1 {
                let _ = writeln!(out, "{:<8} {:>8} {:>8.4}", l.label, l.train_cases, l.f1);
            }
        }
        out
    }
}

/// Every scalar of several reports aggregated across runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: Vec<EvalReport>,
    pub metrics: Vec<(String, RunAggregate)>,
}

impl AggregateReport {
    pub fn from_runs(runs: Vec<EvalReport>) -> Result<Self> {
        let first = runs.first().ok_or_else(|| Error::Invalid("no runs to aggregate".into()))?;
        let mut metrics = Vec::new();
        for (key, _) in first.scalars() {
            let values: Vec<f64> = runs.iter().filter_map(|r| r.get(key)).collect();
            if values.len() == runs.len() {
                metrics.push((key.to_string(), aggregate_runs(&values)?));
            }
        }
        Ok(Self { runs, metrics })
    }

    pub fn get(&self, key: &str) -> Option<RunAggregate> {
        self.metrics.iter().find(|(k, _)| k == key).map(|(_, a)| *a)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let n = self.runs.len();
        let _ = writeln!(out, "runs: {n}");
        let _ = writeln!(out, "{:<22} {:>10} {:>10}", "metric", "mean", "std");
        for (k, a) in &self.metrics {
            let _ = writeln!(out, "{k:<22} {:>10.4} {:>10.4}", a.mean, a.std);
        }
        out
    }
}
