//! Hierarchical hard-attention classifier.
//!
//! Paragraphs are encoded independently by a shared encoder, contextualized
//! by a small transformer stack, and projected into two SELU spaces: `K`
//! feeds classification, `Q` feeds a per-paragraph sigmoid scorer. Scores
//! above 0.5 select paragraphs; the selected `K` rows are max-pooled into
//! the document representation that a sigmoid head classifies.

mod checkpoint;
mod config;
mod network;
mod params;

pub use checkpoint::Checkpoint;
pub use config::{ModelConfig, ParagraphEncoder};
pub use network::{all_ones, complement, ForwardResult, Model, ModelInput, Trunk, MASK_THRESHOLD};
pub use params::{ModelParams, ParamVars};

use crate::autodiff::Tape;
use crate::error::Result;

/// Plain values of one forward pass, for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub soft_attention: Vec<f64>,
    pub mask: Vec<f64>,
    pub label_probs: Vec<f64>,
    /// Probabilities with every paragraph kept.
    pub full_probs: Vec<f64>,
    /// Probabilities under the complement of the hard mask.
    pub complement_probs: Vec<f64>,
}

/// Runs the three evaluation passes (learned mask, all paragraphs,
/// complement) on a fresh tape without recording gradients.
pub fn predict(config: &ModelConfig, params: &ModelParams, input: &ModelInput) -> Result<Prediction> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let model = Model::new(config, &vars);
    let trunk = model.trunk(&mut tape, input)?;
    let mask = model.learned_mask(&mut tape, &trunk)?;
    let (_, probs) = model.head(&mut tape, &trunk, mask)?;
    let ones = all_ones(&mut tape, trunk.paragraphs);
    let (_, full) = model.head(&mut tape, &trunk, ones)?;
    let comp = complement(&mut tape, mask);
    let (_, comp_probs) = model.head(&mut tape, &trunk, comp)?;
    Ok(Prediction {
        soft_attention: tape.value(trunk.soft_attention).data().to_vec(),
        mask: tape.value(mask).data().to_vec(),
        label_probs: tape.value(probs).data().to_vec(),
        full_probs: tape.value(full).data().to_vec(),
        complement_probs: tape.value(comp_probs).data().to_vec(),
    })
}
