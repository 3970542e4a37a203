//! Planted-rationale corpora.
//!
//! Every label owns a few trigger tokens. A case picks 1..=`max_labels`
//! labels and `round(sparsity * n_paragraphs)` rationale paragraphs; each
//! rationale paragraph carries `trigger_hits` triggers of one of the case's
//! labels inside random filler, and every label is planted at least once.
//! Other paragraphs are filler, except that with probability `noise` one
//! receives a single trigger of an article the case does NOT carry (a decoy).
//! Gold = planted set. Silver = gold with one paragraph dropped and one
//! non-rationale paragraph (a decoy when available) added.

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{tokenize, Case, LabelSet, Split};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub n_paragraphs: usize,
    pub num_labels: usize,
    /// Distinct tokens, triggers included.
    pub vocab_size: usize,
    pub triggers_per_label: usize,
    /// Trigger occurrences in each rationale paragraph.
    pub trigger_hits: usize,
    pub tokens_per_paragraph: usize,
    pub max_labels_per_case: usize,
    pub sparsity: f64,
    /// Probability that a non-rationale paragraph receives a decoy trigger.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_dev: 200,
            n_test: 500,
            n_paragraphs: 10,
            num_labels: 5,
            vocab_size: 200,
            triggers_per_label: 3,
            trigger_hits: 3,
            tokens_per_paragraph: 8,
            max_labels_per_case: 2,
            sparsity: 0.3,
            noise: 0.1,
            seed: 13,
        }
    }
}

impl SynthConfig {
    pub fn trigger_count(&self) -> usize {
        self.num_labels * self.triggers_per_label
    }

    pub fn rationale_size(&self) -> usize {
        ((self.sparsity * self.n_paragraphs as f64).round() as usize).clamp(1, self.n_paragraphs)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("synth.{field}: {msg}")));
        if !(self.sparsity > 0.0 && self.sparsity < 1.0) {
            return bad("sparsity", format!("must lie in (0, 1), got {}", self.sparsity));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return bad("noise", format!("must lie in [0, 1), got {}", self.noise));
        }
        for (field, v) in [
            ("n_train", self.n_train),
            ("n_paragraphs", self.n_paragraphs),
            ("num_labels", self.num_labels),
            ("triggers_per_label", self.triggers_per_label),
            ("trigger_hits", self.trigger_hits),
            ("tokens_per_paragraph", self.tokens_per_paragraph),
            ("max_labels_per_case", self.max_labels_per_case),
        ] {
            if v == 0 {
                return bad(field, "must be at least 1".into());
            }
        }
        LabelSet::prefix(self.num_labels).map_err(|_| {
            Error::Config(format!("synth.num_labels: must be between 1 and 40, got {}", self.num_labels))
        })?;
        if self.vocab_size <= self.trigger_count() {
            return Err(Error::Synthetic(format!(
                "trigger/vocab collision: {} trigger tokens need vocab_size > {}, got {}",
                self.trigger_count(),
                self.trigger_count(),
                self.vocab_size
            )));
        }
        Ok(())
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        LabelSet::prefix(self.num_labels)
    }
}

pub fn trigger_token(label: usize, k: usize) -> String {
    format!("k{label}t{k}")
}

fn filler_token(i: usize) -> String {
    format!("w{i}")
}

/// Label owning a trigger token, if it is one.
pub fn trigger_label(token: &str, config: &SynthConfig) -> Option<usize> {
    let rest = token.strip_prefix('k')?;
    let (label, k) = rest.split_once('t')?;
    let (label, k): (usize, usize) = (label.parse().ok()?, k.parse().ok()?);
    (label < config.num_labels && k < config.triggers_per_label).then_some(label)
}

/// Keyword baseline: every label with at least `min_hits` trigger hits in
/// one paragraph.
pub fn keyword_labels(case: &Case, config: &SynthConfig, min_hits: usize) -> Vec<bool> {
    let mut out = vec![false; config.num_labels];
    for fact in &case.facts {
        let mut hits = vec![0usize; config.num_labels];
        for t in tokenize(fact) {
            if let Some(l) = trigger_label(&t, config) {
                hits[l] += 1;
            }
        }
        for (o, h) in out.iter_mut().zip(hits) {
            *o |= h >= min_hits;
        }
    }
    out
}

fn paragraph<R: Rng>(rng: &mut R, config: &SynthConfig, filler: usize, triggers: &[String]) -> String {
    let mut toks: Vec<String> = (0..config.tokens_per_paragraph)
        .map(|_| filler_token(rng.gen_range(0..filler)))
        .collect();
    for t in triggers {
        let at = rng.gen_range(0..=toks.len());
        toks.insert(at, t.clone());
    }
    toks.join(" ")
}

fn generate_case<R: Rng>(rng: &mut R, config: &SynthConfig, id: usize, split: Split) -> Case {
    let n = config.n_paragraphs;
    let k = config.rationale_size();
    let filler = config.vocab_size - config.trigger_count();
    let n_labels = rng.gen_range(1..=config.max_labels_per_case.min(config.num_labels).min(k));
    let mut labels: Vec<usize> = index::sample(rng, config.num_labels, n_labels).into_vec();
    labels.sort_unstable();
    let mut positions: Vec<usize> = index::sample(rng, n, k).into_vec();
    positions.sort_unstable();

    let mut owners: Vec<usize> = labels.clone();
    while owners.len() < k {
        owners.push(labels[rng.gen_range(0..labels.len())]);
    }
    owners.shuffle(rng);

    let others: Vec<usize> = (0..config.num_labels).filter(|l| !labels.contains(l)).collect();
    let mut facts = Vec::with_capacity(n);
    let mut decoys = Vec::new();
    for p in 0..n {
        let triggers: Vec<String> = match positions.iter().position(|&q| q == p) {
            Some(slot) => (0..config.trigger_hits)
                .map(|_| trigger_token(owners[slot], rng.gen_range(0..config.triggers_per_label)))
                .collect(),
            None if !others.is_empty() && rng.gen_bool(config.noise) => {
                decoys.push(p);
                let l = others[rng.gen_range(0..others.len())];
                vec![trigger_token(l, rng.gen_range(0..config.triggers_per_label))]
            }
            None => Vec::new(),
        };
        facts.push(paragraph(rng, config, filler, &triggers));
    }

    let gold: BTreeSet<usize> = positions.iter().copied().collect();
    let mut silver = gold.clone();
    silver.remove(&positions[rng.gen_range(0..positions.len())]);
    let outside: Vec<usize> = (0..n).filter(|p| !gold.contains(p)).collect();
    let pool = if decoys.is_empty() { &outside } else { &decoys };
    if !pool.is_empty() {
        silver.insert(pool[rng.gen_range(0..pool.len())]);
    }

    let mut hot = vec![false; config.num_labels];
    for &l in &labels {
        hot[l] = true;
    }
    Case {
        case_id: format!("synth-{id:05}"),
        facts,
        labels: hot,
        silver_rationale: Some(silver),
        gold_rationale: Some(gold),
        split,
    }
}

/// Train, dev and test cases in that order, fully determined by the config.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<Case>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut cases = Vec::with_capacity(config.n_train + config.n_dev + config.n_test);
    let splits = [
        (Split::Train, config.n_train),
        (Split::Dev, config.n_dev),
        (Split::Test, config.n_test),
    ];
    for (split, count) in splits {
        for _ in 0..count {
            let id = cases.len();
            cases.push(generate_case(&mut rng, config, id, split));
        }
    }
    Ok(cases)
}
