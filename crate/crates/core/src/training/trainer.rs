use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate, train_label_counts, Adam, TrainConfig};
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{split_cases, Case, LabelSet, Split, Vocabulary};
use crate::error::{Error, Result};
use crate::losses::{
    classification_loss, compare_masks, continuity_loss, random_mask, singularity_loss, sparsity_loss,
    supervision_loss, total_loss, LossBreakdown, LossTerms, LossWeights, MaskedPass, Objective,
};
use crate::metrics::EvalReport;
use crate::model::{complement, Checkpoint, Model, ModelConfig, ModelInput, ModelParams};

/// A case after tokenization, ready for the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedCase {
    pub case_id: String,
    pub input: ModelInput,
    pub targets: Vec<f64>,
    /// Silver mask over the kept paragraphs.
    pub silver: Option<Vec<f64>>,
}

pub fn prepare(cases: &[Case], vocab: &Vocabulary, config: &ModelConfig) -> Vec<PreparedCase> {
    cases
        .iter()
        .map(|c| {
            let input = vocab.encode_case(c, config.max_paragraphs, config.max_tokens);
            let n = input.len();
            PreparedCase {
                case_id: c.case_id.clone(),
                silver: c.silver_rationale.as_ref().map(|s| Case::mask_of(s, n)),
                targets: c.targets(),
                input,
            }
        })
        .collect()
}

/// How many forward passes of each kind have run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassCounter {
    pub learned: usize,
    pub complement: usize,
    pub random: usize,
}

/// Records the objective for one case. Extra masked passes run only for
/// nonzero weights that need them.
pub fn case_objective<R: Rng>(
    tape: &mut Tape,
    model: &Model,
    case: &PreparedCase,
    w: &LossWeights,
    objective: Objective,
    rng: &mut R,
    passes: &mut PassCounter,
) -> Result<(Var, LossBreakdown)> {
    let trunk = model.trunk(tape, &case.input)?;
    let mask = model.learned_mask(tape, &trunk)?;
    let (doc, probs) = model.head(tape, &trunk, mask)?;
    passes.learned += 1;
    let lp = classification_loss(tape, probs, &case.targets)?;
    let mut terms = LossTerms::new(lp);
    let selected = MaskedPass { loss: lp, probs, doc };
    match objective {
        Objective::Supervised => {
            if w.lambda_ns > 0.0 {
                let silver = case
                    .silver
                    .as_ref()
                    .ok_or_else(|| Error::Invalid(format!("case `{}` has no silver rationale", case.case_id)))?;
                let s = tape.constant(Tensor::vector(silver.clone()));
                terms.supervision = Some(supervision_loss(tape, mask, s)?);
            }
        }
        Objective::Regularized => {
            if w.lambda_s > 0.0 {
                terms.sparsity = Some(sparsity_loss(tape, mask, w.sparsity_target));
            }
            if w.lambda_c > 0.0 {
                terms.continuity = Some(continuity_loss(tape, mask)?);
            }
            if w.lambda_g > 0.0 {
                let zc = complement(tape, mask);
                let (doc_c, probs_c) = model.head(tape, &trunk, zc)?;
                passes.complement += 1;
                let lpc = classification_loss(tape, probs_c, &case.targets)?;
                let other = MaskedPass {
                    loss: lpc,
                    probs: probs_c,
                    doc: doc_c,
                };
                terms.lp_complement = Some(lpc);
                terms.comprehensiveness = Some(compare_masks(tape, w.g_variant, &selected, &other, &case.targets, w.margin)?);
            }
            if w.lambda_r > 0.0 {
                let zr = random_mask(trunk.paragraphs, w.sparsity_target, rng);
                let zr = tape.constant(Tensor::vector(zr));
                let (doc_r, probs_r) = model.head(tape, &trunk, zr)?;
                passes.random += 1;
                let lpr = classification_loss(tape, probs_r, &case.targets)?;
                let other = MaskedPass {
                    loss: lpr,
                    probs: probs_r,
                    doc: doc_r,
                };
                let g = compare_masks(tape, w.r_variant, &selected, &other, &case.targets, w.margin)?;
                terms.lp_random = Some(lpr);
                terms.singularity = Some(singularity_loss(tape, mask, zr, g)?);
            }
        }
    }
    let (total, bd) = total_loss(tape, &terms, w, objective)?;
    if !bd.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            what: "training loss".into(),
            case_id: case.case_id.clone(),
        });
    }
    Ok((total, bd))
}

/// Mean objective over a batch, recorded on one tape.
pub fn batch_objective<R: Rng>(
    tape: &mut Tape,
    model: &Model,
    batch: &[&PreparedCase],
    w: &LossWeights,
    objective: Objective,
    rng: &mut R,
    passes: &mut PassCounter,
) -> Result<(Var, LossBreakdown)> {
    let mut losses = Vec::with_capacity(batch.len());
    let mut parts = Vec::with_capacity(batch.len());
    for case in batch {
        let (l, bd) = case_objective(tape, model, case, w, objective, rng, passes)?;
        losses.push(l);
        parts.push(bd);
    }
    let stacked = tape.stack_rows(&losses)?;
    let mean = tape.mean(stacked);
    Ok((mean, LossBreakdown::mean(&parts)))
}

/// Optimizer state for one run.
pub struct Trainer {
    pub model_config: ModelConfig,
    pub config: TrainConfig,
    pub params: ModelParams,
    pub passes: PassCounter,
    adam: Adam,
    rng: ChaCha8Rng,
    step: usize,
    epoch: usize,
    log: Option<BufWriter<File>>,
}

impl Trainer {
    /// Parameters are drawn from stream 0 of the seed, shuffling and
    /// random masks from stream 1.
    pub fn new(model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        model_config.validate()?;
        let params = ModelParams::init(&model_config, &mut ChaCha8Rng::seed_from_u64(config.seed))?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let log = match &config.log_path {
            Some(path) => {
                let f = File::create(path).map_err(|e| Error::io(path, e))?;
                let mut w = BufWriter::new(f);
                writeln!(w, "{}", LossBreakdown::log_header()).map_err(|e| Error::io(path, e))?;
                Some(w)
            }
            None => None,
        };
        Ok(Self {
            adam: Adam::new(config.adam.clone(), config.lr()),
            model_config,
            config,
            params,
            passes: PassCounter::default(),
            rng,
            step: 0,
            epoch: 0,
            log,
        })
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    /// Forward, backward and one Adam update over `batch`.
    pub fn train_batch(&mut self, batch: &[&PreparedCase]) -> Result<LossBreakdown> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape, true);
        let model = Model::new(&self.model_config, &vars);
        let (loss, bd) = batch_objective(
            &mut tape,
            &model,
            batch,
            &self.config.loss,
            self.config.objective(),
            &mut self.rng,
            &mut self.passes,
        )?;
        tape.backward(loss)?;
        let grads: BTreeMap<String, Vec<f64>> = vars
            .iter()
            .filter_map(|(name, v)| tape.grad(v).map(|g| (name.to_string(), g.to_vec())))
            .collect();
        self.adam.step(&mut self.params, &grads)?;
        self.step += 1;
        if let Some(log) = &mut self.log {
            writeln!(log, "{}", bd.log_line(self.step))
                .map_err(|e| Error::io(self.config.log_path.clone().unwrap_or_default(), e))?;
        }
        Ok(bd)
    }

    /// One pass over `cases` in a freshly shuffled order, at the rate the
    /// schedule assigns to this epoch.
    pub fn train_epoch(&mut self, cases: &[PreparedCase]) -> Result<Vec<LossBreakdown>> {
        self.adam.learning_rate = self.config.lr() * self.config.schedule.factor(self.epoch, self.config.epochs);
        self.epoch += 1;
        let mut order: Vec<usize> = (0..cases.len()).collect();
        order.shuffle(&mut self.rng);
        let mut out = Vec::with_capacity(order.len().div_ceil(self.config.batch_size));
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&PreparedCase> = chunk.iter().map(|&i| &cases[i]).collect();
            out.push(self.train_batch(&batch)?);
        }
        if let Some(log) = &mut self.log {
            log.flush()
                .map_err(|e| Error::io(self.config.log_path.clone().unwrap_or_default(), e))?;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: LossBreakdown,
    pub dev: Option<EvalReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<LossBreakdown>,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub passes: PassCounter,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
}

/// Full training run: vocabulary from the training split, `epochs` passes,
/// dev evaluation after each, and model selection by dev micro-F1 of the
/// masked model (earliest epoch on ties). Supervision mode skips training
/// cases without a silver rationale.
pub fn train(cases: &[Case], labels: &LabelSet, model_config: &ModelConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    let train_cases = split_cases(cases, Split::Train);
    if train_cases.is_empty() {
        return Err(Error::Invalid("corpus has no training cases".into()));
    }
    let dev_cases = split_cases(cases, Split::Dev);
    let vocab = Vocabulary::build(&train_cases, config.min_freq);
    let mut model_config = model_config.clone();
    model_config.vocab_size = vocab.len();
    if model_config.num_labels != labels.len() {
        return Err(Error::Config(format!(
            "model.num_labels is {} but the corpus label set has {} labels",
            model_config.num_labels,
            labels.len()
        )));
    }
    let mut prepared = prepare(&train_cases, &vocab, &model_config);
    if config.supervision {
        prepared.retain(|c| c.silver.is_some());
        if prepared.is_empty() {
            return Err(Error::Invalid("supervision mode needs training cases with silver rationales".into()));
        }
    }
    let counts = train_label_counts(cases, labels.len());

    let mut trainer = Trainer::new(model_config.clone(), config.clone())?;
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    for epoch in 1..=config.epochs {
        let losses = trainer.train_epoch(&prepared)?;
        let mean_loss = LossBreakdown::mean(&losses);
        steps.extend(losses);
        let dev = if dev_cases.is_empty() {
            None
        } else {
            Some(evaluate(&model_config, &trainer.params, &vocab, &dev_cases, labels, Some(&counts))?)
        };
        if config.select_best {
            if let Some(report) = &dev {
                if best.as_ref().map_or(true, |(f1, _, _)| report.micro_f1_masked > *f1) {
                    best = Some((report.micro_f1_masked, epoch, trainer.params.clone()));
                }
            }
        }
        epochs.push(EpochRecord { epoch, mean_loss, dev });
    }
    let (best_epoch, params) = match best {
        Some((_, e, p)) => (e, p),
        None => (config.epochs, trainer.params.clone()),
    };
    let checkpoint = Checkpoint {
        config: model_config,
        vocabulary: vocab.tokens().to_vec(),
        params,
    };
    if let Some(path) = &config.checkpoint_path {
        checkpoint.save(path)?;
    }
    Ok(TrainOutcome {
        checkpoint,
        history: TrainHistory {
            steps,
            epochs,
            best_epoch,
            passes: trainer.passes,
        },
    })
}
