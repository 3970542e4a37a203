use super::{evaluate, train, train_label_counts, TrainConfig, TrainHistory};
use crate::data::{split_cases, Case, LabelSet, Split, Vocabulary};
use crate::error::{Error, Result};
use crate::metrics::AggregateReport;
use crate::model::ModelConfig;

pub struct ExperimentOutcome {
    pub report: AggregateReport,
    pub histories: Vec<TrainHistory>,
}

/// Trains `n_seeds` models with seeds `config.seed + i` and aggregates
/// their test-split reports.
pub fn run_experiment(
    cases: &[Case],
    labels: &LabelSet,
    model_config: &ModelConfig,
    config: &TrainConfig,
    n_seeds: usize,
) -> Result<ExperimentOutcome> {
    if n_seeds == 0 {
        return Err(Error::Config("n_seeds must be at least 1".into()));
    }
    let test = split_cases(cases, Split::Test);
    if test.is_empty() {
        return Err(Error::Invalid("corpus has no test cases".into()));
    }
    let counts = train_label_counts(cases, labels.len());
    let mut runs = Vec::with_capacity(n_seeds);
    let mut histories = Vec::with_capacity(n_seeds);
    for i in 0..n_seeds {
        let cfg = TrainConfig {
            seed: config.seed.wrapping_add(i as u64),
            log_path: None,
            checkpoint_path: None,
            ..config.clone()
        };
        let outcome = train(cases, labels, model_config, &cfg)?;
        let ck = &outcome.checkpoint;
        let vocab = Vocabulary::from_tokens(ck.vocabulary.clone());
        runs.push(evaluate(&ck.config, &ck.params, &vocab, &test, labels, Some(&counts))?);
        histories.push(outcome.history);
    }
    Ok(ExperimentOutcome {
        report: AggregateReport::from_runs(runs)?,
        histories,
    })
}
