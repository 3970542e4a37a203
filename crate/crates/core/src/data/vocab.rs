use std::collections::HashMap;

use super::{Case, Split};
use crate::model::ModelInput;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Counts tokens over the training split only; tokens seen fewer than
    /// `min_freq` times map to UNK. Ids are assigned by descending count,
    /// ties by token text.
    pub fn build(cases: &[Case], min_freq: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for case in cases.iter().filter(|c| c.split == Split::Train) {
            for fact in &case.facts {
                for t in tokenize(fact) {
                    *counts.entry(t).or_default() += 1;
                }
            }
        }
        let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, n)| *n >= min_freq.max(1)).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        tokens.extend(kept.into_iter().map(|(t, _)| t).filter(|t| t != PAD_TOKEN && t != UNK_TOKEN));
        Self::from_tokens(tokens)
    }

    /// Rebuilds from tokens in id order, as stored in a checkpoint.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn encode_text(&self, text: &str, max_tokens: usize) -> Vec<usize> {
        tokenize(text).take(max_tokens).map(|t| self.id(&t)).collect()
    }

    /// Token ids of a case, keeping the first `max_paragraphs` paragraphs and
    /// the first `max_tokens` tokens of each.
    pub fn encode_case(&self, case: &Case, max_paragraphs: usize, max_tokens: usize) -> ModelInput {
        ModelInput {
            paragraphs: case
                .facts
                .iter()
                .take(max_paragraphs)
                .map(|f| self.encode_text(f, max_tokens))
                .collect(),
        }
    }
}
