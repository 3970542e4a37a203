//! Finite-difference verification of every training objective on a small
//! random model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batch_objective, PassCounter, PreparedCase};
use crate::autodiff::{directional_gradient_check, AutodiffError, GradCheckOptions, Primitive, ThresholdMode};
use crate::error::{Error, Result};
use crate::losses::{ComparisonVariant, LossWeights, Objective};
use crate::model::{Model, ModelConfig, ModelInput, ModelParams, ParagraphEncoder};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub paragraphs: usize,
    pub num_labels: usize,
    pub cases: usize,
    pub embed_dim: usize,
    pub attention_heads: usize,
    pub context_layers: usize,
    pub vocab_size: usize,
    pub tokens_per_paragraph: usize,
    pub paragraph_encoder: ParagraphEncoder,
    pub n_probes: usize,
    pub epsilon: f64,
    pub tolerance: f64,
    /// Margin used by the hinge variants; large enough to keep them active.
    pub margin: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            paragraphs: 6,
            num_labels: 4,
            cases: 2,
            embed_dim: 8,
            attention_heads: 2,
            context_layers: 2,
            vocab_size: 16,
            tokens_per_paragraph: 5,
            paragraph_encoder: ParagraphEncoder::MeanOfEmbeddings,
            n_probes: 8,
            epsilon: 1e-5,
            tolerance: 1e-4,
            margin: 0.5,
            seed: 7,
        }
    }
}

/// One objective to verify.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveSpec {
    pub name: String,
    pub weights: LossWeights,
    pub objective: Objective,
}

const VARIANTS: [(ComparisonVariant, &str); 3] = [
    (ComparisonVariant::LossMargin, "loss-margin"),
    (ComparisonVariant::ProbMargin, "prob-margin"),
    (ComparisonVariant::ReprCosine, "repr-cosine"),
];

/// `L_p`, `+L_s`, `+L_c`, `+L_g` per variant, `+L_r` per variant, and
/// silver supervision.
pub fn objective_suite(margin: f64) -> Vec<ObjectiveSpec> {
    let base = LossWeights {
        margin,
        ..LossWeights::default()
    };
    let spec = |name: String, weights: LossWeights, objective| ObjectiveSpec {
        name,
        weights,
        objective,
    };
    let mut out = vec![
        spec("L_p".into(), base.clone(), Objective::Regularized),
        spec(
            "L_p + L_s".into(),
            LossWeights {
                lambda_s: 0.1,
                ..base.clone()
            },
            Objective::Regularized,
        ),
        spec(
            "L_p + L_c".into(),
            LossWeights {
                lambda_c: 0.1,
                ..base.clone()
            },
            Objective::Regularized,
        ),
    ];
    for (v, label) in VARIANTS {
        out.push(spec(
            format!("L_p + L_g ({label})"),
            LossWeights {
                lambda_g: 0.5,
                g_variant: v,
                ..base.clone()
            },
            Objective::Regularized,
        ));
    }
    for (v, label) in VARIANTS {
        out.push(spec(
            format!("L_p + L_r ({label})"),
            LossWeights {
                lambda_r: 0.5,
                r_variant: v,
                ..base.clone()
            },
            Objective::Regularized,
        ));
    }
    out.push(spec(
        "L_p + silver MAE".into(),
        LossWeights {
            lambda_ns: 0.5,
            ..base
        },
        Objective::Supervised,
    ));
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckLine {
    pub name: String,
    pub max_relative_error: f64,
    pub probes: usize,
    pub passed: bool,
}

fn toy_batch(cfg: &GradCheckConfig, rng: &mut ChaCha8Rng) -> Vec<PreparedCase> {
    (0..cfg.cases)
        .map(|i| {
            let paragraphs = (0..cfg.paragraphs)
                .map(|_| (0..cfg.tokens_per_paragraph).map(|_| rng.gen_range(2..cfg.vocab_size)).collect())
                .collect();
            let mut targets: Vec<f64> = (0..cfg.num_labels).map(|_| rng.gen_range(0..2) as f64).collect();
            targets[i % cfg.num_labels] = 1.0;
            let silver = (0..cfg.paragraphs).map(|p| if p % 3 == i % 3 { 1.0 } else { 0.0 }).collect();
            PreparedCase {
                case_id: format!("toy-{i}"),
                input: ModelInput { paragraphs },
                targets,
                silver: Some(silver),
            }
        })
        .collect()
}

impl GradCheckConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            vocab_size: self.vocab_size,
            embed_dim: self.embed_dim,
            num_labels: self.num_labels,
            max_paragraphs: self.paragraphs,
            max_tokens: self.tokens_per_paragraph,
            context_layers: self.context_layers,
            attention_heads: self.attention_heads,
            paragraph_encoder: self.paragraph_encoder,
            ffn_dim: 0,
            projection_dim: 0,
            initial_selection: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_probes == 0 {
            return Err(Error::Config("gradcheck.n_probes must be at least 1".into()));
        }
        if self.cases == 0 || self.paragraphs == 0 || self.vocab_size < 3 {
            return Err(Error::Config(
                "gradcheck needs at least one case, one paragraph and a vocabulary of 3".into(),
            ));
        }
        if !(self.epsilon > 0.0) || !(self.tolerance > 0.0) {
            return Err(Error::Config("gradcheck.epsilon and tolerance must be positive".into()));
        }
        self.model_config().validate()
    }
}

/// Checks every objective of [`objective_suite`] with directional central
/// differences over all parameters, thresholds replaced by their soft
/// surrogate. `fault` corrupts one primitive's backward rule.
pub fn run_gradcheck(cfg: &GradCheckConfig, fault: Option<Primitive>) -> Result<Vec<GradCheckLine>> {
    cfg.validate()?;
    let model_config = cfg.model_config();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = ModelParams::init(&model_config, &mut rng)?;
    let batch = toy_batch(cfg, &mut rng);
    let refs: Vec<&PreparedCase> = batch.iter().collect();
    let tensors = params.to_vec();
    let opts = GradCheckOptions {
        epsilon: cfg.epsilon,
        mode: ThresholdMode::Surrogate,
        fault,
    };
    let mut lines = Vec::new();
    for (k, spec) in objective_suite(cfg.margin).into_iter().enumerate() {
        let mask_seed = cfg.seed.wrapping_add(1000 + k as u64);
        let loss_fn = |tape: &mut crate::autodiff::Tape, vars: &[crate::autodiff::Var]| {
            let pv = params.vars_from(vars);
            let model = Model::new(&model_config, &pv);
            let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
            let mut passes = PassCounter::default();
            batch_objective(tape, &model, &refs, &spec.weights, spec.objective, &mut mask_rng, &mut passes)
                .map(|(l, _)| l)
                .map_err(|e| match e {
                    Error::Autodiff(a) => a,
                    other => AutodiffError::Domain {
                        op: "objective",
                        detail: other.to_string(),
                    },
                })
        };
        let mut probe_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2000 + k as u64));
        let report = directional_gradient_check(loss_fn, &tensors, cfg.n_probes, opts, &mut probe_rng)?;
        lines.push(GradCheckLine {
            name: spec.name,
            max_relative_error: report.max_relative_error,
            probes: report.probes,
            passed: report.max_relative_error < cfg.tolerance,
        });
    }
    Ok(lines)
}
