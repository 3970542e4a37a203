use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{train, TrainConfig};
use crate::data::{Case, LabelSet};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::metrics::EvalReport;
use crate::model::ModelConfig;

/// Largest micro-F1 loss, relative to the unregularized candidate, that a
/// candidate may incur and still be selected.
pub const F1_TOLERANCE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningRow {
    pub lambda: String,
    pub value: f64,
    pub weights: LossWeights,
    pub dev: EvalReport,
}

impl TuningRow {
    fn rationale_score(&self) -> f64 {
        self.dev
            .silver
            .map_or(self.dev.micro_f1_masked, |s| s.mean_r_precision)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub weights: LossWeights,
    /// `(lambda, chosen value)` in tuning order.
    pub chosen: Vec<(String, f64)>,
    pub rows: Vec<TuningRow>,
}

/// Index of the candidate with the best dev silver mRP among those whose
/// dev micro-F1 is within [`F1_TOLERANCE`] of the baseline. The baseline is
/// the candidate with value 0, or the best micro-F1 if no candidate is 0.
/// Without silver rationales micro-F1 itself is maximized. Ties go to the
/// earlier candidate.
pub fn select_candidate(rows: &[TuningRow]) -> Option<usize> {
    if rows.is_empty() {
        return None;
    }
    let baseline = rows
        .iter()
        .find(|r| r.value == 0.0)
        .map(|r| r.dev.micro_f1_masked)
        .unwrap_or_else(|| rows.iter().map(|r| r.dev.micro_f1_masked).fold(f64::MIN, f64::max));
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in rows.iter().enumerate() {
        if r.dev.micro_f1_masked + 1e-12 < baseline - F1_TOLERANCE {
            continue;
        }
        let s = r.rationale_score();
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Tunes one weight at a time in the given order. Weights not yet tuned
/// stay at their value in `config.loss`, which is normally zero.
pub fn greedy_lambda_tuning(
    cases: &[Case],
    labels: &LabelSet,
    model_config: &ModelConfig,
    config: &TrainConfig,
    grids: &[(String, Vec<f64>)],
) -> Result<TuningResult> {
    if grids.is_empty() || grids.iter().any(|(_, g)| g.is_empty()) {
        return Err(Error::Config("tuning grid is empty".into()));
    }
    let mut weights = config.loss.clone();
    let mut rows = Vec::new();
    let mut chosen = Vec::new();
    for (name, grid) in grids {
        weights.get(name).ok_or_else(|| Error::Config(format!("unknown weight `{name}` in tuning grid")))?;
        let mut step_rows = Vec::with_capacity(grid.len());
        for &value in grid {
            let mut w = weights.clone();
            w.set(name, value)?;
            let cfg = TrainConfig {
                loss: w.clone(),
                log_path: None,
                checkpoint_path: None,
                ..config.clone()
            };
            let outcome = train(cases, labels, model_config, &cfg)?;
            let dev = outcome
                .history
                .epochs
                .get(outcome.history.best_epoch - 1)
                .and_then(|e| e.dev.clone())
                .ok_or_else(|| Error::Invalid("tuning needs a dev split".into()))?;
            step_rows.push(TuningRow {
                lambda: name.clone(),
                value,
                weights: w,
                dev,
            });
        }
        let pick = select_candidate(&step_rows).expect("nonempty grid");
        let value = step_rows[pick].value;
        weights.set(name, value)?;
        chosen.push((name.clone(), value));
        rows.extend(step_rows);
    }
    Ok(TuningResult { weights, chosen, rows })
}

impl TuningResult {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>8} | {:>10} | {:>8} | {:>10} {:>10}",
            "lambda", "value", "micro-F1", "sparsity", "silver F1", "silver mRP"
        );
        for r in &self.rows {
            let (f1, mrp) = r.dev.silver.map_or((f64::NAN, f64::NAN), |s| (s.f1, s.mean_r_precision));
            let _ = writeln!(
                out,
                "{:<10} {:>8} | {:>10.4} | {:>8.1} | {:>10.4} {:>10.4}",
                r.lambda, r.value, r.dev.micro_f1_masked, r.dev.observed_sparsity, f1, mrp
            );
        }
        for (name, v) in &self.chosen {
            let _ = writeln!(out, "selected {name} = {v}");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tuning result serializes")
    }
}
