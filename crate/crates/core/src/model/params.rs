use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::ModelConfig;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Named trainable tensors of the hierarchical classifier.
///
/// Names are stable and sorted, which fixes the iteration order used by
/// the optimizer and the checkpoint format.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

/// Tape handles for every parameter of one [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(v) => *v,
            None => panic!("parameter `{name}` not registered"),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

struct Init<'r, R: Rng> {
    rng: &'r mut R,
    out: BTreeMap<String, Tensor>,
}

impl<R: Rng> Init<'_, R> {
    fn xavier(&mut self, name: String, fan_in: usize, fan_out: usize) {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-s, s);
        let data = (0..fan_in * fan_out).map(|_| dist.sample(self.rng)).collect();
        self.out.insert(name, Tensor::matrix(fan_in, fan_out, data));
    }

    fn normal(&mut self, name: String, rows: usize, cols: usize, std: f64) {
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..rows * cols).map(|_| dist.sample(self.rng)).collect();
        self.out.insert(name, Tensor::matrix(rows, cols, data));
    }

    fn zeros(&mut self, name: String, rows: usize, cols: usize) {
        self.out.insert(name, Tensor::matrix(rows, cols, vec![0.0; rows * cols]));
    }

    fn fill(&mut self, name: String, len: usize, value: f64) {
        self.out.insert(name, Tensor::filled(&[len], value));
    }

    fn transformer_layer(&mut self, prefix: &str, d: usize, ffn: usize) {
        for w in ["wq", "wk", "wv"] {
            self.xavier(format!("{prefix}.{w}"), d, d);
        }
        self.zeros(format!("{prefix}.wo"), d, d);
        for b in ["bq", "bk", "bv", "bo"] {
            self.fill(format!("{prefix}.{b}"), d, 0.0);
        }
        self.fill(format!("{prefix}.ln1.g"), d, 1.0);
        self.fill(format!("{prefix}.ln1.b"), d, 0.0);
        self.xavier(format!("{prefix}.ff1.w"), d, ffn);
        self.fill(format!("{prefix}.ff1.b"), ffn, 0.0);
        self.zeros(format!("{prefix}.ff2.w"), ffn, d);
        self.fill(format!("{prefix}.ff2.b"), d, 0.0);
        self.fill(format!("{prefix}.ln2.g"), d, 1.0);
        self.fill(format!("{prefix}.ln2.b"), d, 0.0);
    }
}

impl ModelParams {
    /// Random initialization: Xavier-uniform dense weights, zero biases,
    /// unit layer-norm gains, N(0, 1) token embeddings. The output
    /// projections of each transformer sublayer start at zero, so every
    /// layer begins as the identity on its residual path.
    pub fn init<R: Rng>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let ffn = config.ffn_width();
        let kq = config.projection_width();
        let mut init = Init {
            rng,
            out: BTreeMap::new(),
        };
        init.normal("embed.tokens".into(), config.vocab_size, d, 1.0);
        if config.paragraph_encoder == super::ParagraphEncoder::SingleTransformerLayer {
            init.normal("para.pos".into(), config.max_tokens, d, 0.1);
            init.transformer_layer("para.layer", d, ffn);
        }
        init.normal("ctx.pos".into(), config.max_paragraphs, d, 0.1);
        for l in 0..config.context_layers {
            init.transformer_layer(&format!("ctx.{l}"), d, ffn);
        }
        init.xavier("k.w".into(), d, kq);
        init.fill("k.b".into(), kq, 0.0);
        init.xavier("q.w".into(), d, kq);
        init.fill("q.b".into(), kq, 0.0);
        init.xavier("score.w".into(), kq, 1);
        init.fill("score.b".into(), 1, config.initial_score_bias());
        init.xavier("cls.w".into(), kq, config.num_labels);
        init.fill("cls.b".into(), config.num_labels, 0.0);
        Ok(Self { tensors: init.out })
    }

    pub fn from_tensors(tensors: BTreeMap<String, Tensor>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Records every tensor on the tape, as trainable leaves or as constants.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        ParamVars { vars }
    }

    /// Ordered tensors, for use with the generic gradient checker.
    pub fn to_vec(&self) -> Vec<Tensor> {
        self.tensors.values().cloned().collect()
    }

    /// Inverse of [`ModelParams::to_vec`] over the same names.
    pub fn with_values(&self, values: &[Tensor]) -> Self {
        let tensors = self.tensors.keys().cloned().zip(values.iter().cloned()).collect();
        Self { tensors }
    }

    /// Builds [`ParamVars`] from already-registered tape handles in name order.
    pub fn vars_from(&self, vars: &[Var]) -> ParamVars {
        ParamVars {
            vars: self.tensors.keys().cloned().zip(vars.iter().copied()).collect(),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in &self.tensors {
            if !t.all_finite() {
                return Err(Error::Invalid(format!("parameter `{name}` is not finite")));
            }
        }
        Ok(())
    }
}
