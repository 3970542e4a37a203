use std::collections::BTreeSet;

use crate::data::{Case, LabelSet, Split, Vocabulary};
use crate::error::Result;
use crate::metrics::{
    binarize, comprehensiveness_metric, gold_label_probs, mean_r_precision, micro_f1, per_label_f1, rank_selected,
    rationale_f1, sufficiency, EvalReport, LabelScore, RationaleScores,
};
use crate::model::{predict, ModelConfig, ModelParams, Prediction};

/// Positive training cases per label.
pub fn train_label_counts(cases: &[Case], num_labels: usize) -> Vec<usize> {
    let mut counts = vec![0; num_labels];
    for c in cases.iter().filter(|c| c.split == Split::Train) {
        for (n, &y) in counts.iter_mut().zip(&c.labels) {
            *n += y as usize;
        }
    }
    counts
}

fn rationale_scores(
    cases: &[Case],
    preds: &[Prediction],
    pick: impl Fn(&Case) -> Option<&BTreeSet<usize>>,
) -> Option<RationaleScores> {
    let mut f1s = Vec::new();
    let mut rankings = Vec::new();
    let mut refs = Vec::new();
    let mut sparsity = 0.0;
    for (case, p) in cases.iter().zip(preds) {
        let n = p.mask.len();
        let Some(reference) = pick(case) else { continue };
        let reference: BTreeSet<usize> = reference.iter().copied().filter(|&i| i < n).collect();
        if reference.is_empty() {
            continue;
        }
        let selected: BTreeSet<usize> = (0..n).filter(|&i| p.mask[i] > 0.5).collect();
        f1s.push(rationale_f1(&selected, &reference));
        sparsity += reference.len() as f64 / n as f64 * 100.0;
        rankings.push(rank_selected(&p.soft_attention, &p.mask));
        refs.push(reference);
    }
    let mrp = mean_r_precision(&rankings, &refs)?;
    let k = f1s.len() as f64;
    Some(RationaleScores {
        f1: f1s.iter().sum::<f64>() / k,
        mean_r_precision: mrp,
        cases: f1s.len(),
        reference_sparsity: sparsity / k,
    })
}

/// Runs the learned-mask, full-input and complement passes over `cases`
/// and scores them. Rationale quality is computed over cases whose
/// reference set is nonempty.
pub fn evaluate(
    config: &ModelConfig,
    params: &ModelParams,
    vocab: &Vocabulary,
    cases: &[Case],
    labels: &LabelSet,
    train_counts: Option<&[usize]>,
) -> Result<EvalReport> {
    let mut preds = Vec::with_capacity(cases.len());
    for case in cases {
        let input = vocab.encode_case(case, config.max_paragraphs, config.max_tokens);
        preds.push(predict(config, params, &input)?);
    }
    Ok(report_from_predictions(cases, &preds, labels, train_counts))
}

pub fn report_from_predictions(
    cases: &[Case],
    preds: &[Prediction],
    labels: &LabelSet,
    train_counts: Option<&[usize]>,
) -> EvalReport {
    let golds: Vec<Vec<bool>> = cases.iter().map(|c| c.labels.clone()).collect();
    let masked: Vec<Vec<bool>> = preds.iter().map(|p| binarize(&p.label_probs)).collect();
    let full: Vec<Vec<bool>> = preds.iter().map(|p| binarize(&p.full_probs)).collect();
    let comp: Vec<Vec<bool>> = preds.iter().map(|p| binarize(&p.complement_probs)).collect();

    let gold_probs = |f: fn(&Prediction) -> &Vec<f64>| -> Vec<Vec<f64>> {
        preds.iter().zip(cases).map(|(p, c)| gold_label_probs(f(p), &c.labels)).collect()
    };
    let p_full = gold_probs(|p| &p.full_probs);
    let p_masked = gold_probs(|p| &p.label_probs);
    let p_comp = gold_probs(|p| &p.complement_probs);

    let observed_sparsity = if preds.is_empty() {
        0.0
    } else {
        preds
            .iter()
            .map(|p| p.mask.iter().sum::<f64>() / p.mask.len() as f64 * 100.0)
            .sum::<f64>()
            / preds.len() as f64
    };

    let per_label = per_label_f1(&masked, &golds)
        .into_iter()
        .enumerate()
        .map(|(j, f1)| LabelScore {
            label: labels.name(j).to_string(),
            f1,
            train_cases: train_counts.map_or(0, |c| c[j]),
        })
        .collect();

    EvalReport {
        cases: cases.len(),
        micro_f1_full: micro_f1(&full, &golds),
        micro_f1_masked: micro_f1(&masked, &golds),
        micro_f1_complement: micro_f1(&comp, &golds),
        sufficiency: sufficiency(&p_full, &p_masked),
        comprehensiveness: comprehensiveness_metric(&p_full, &p_comp),
        observed_sparsity,
        silver: rationale_scores(cases, preds, |c| c.silver_rationale.as_ref()),
        gold: rationale_scores(cases, preds, |c| c.gold_rationale.as_ref()),
        per_label_f1: per_label,
    }
}
