//! Corpus records, the article label set, silver-rationale extraction,
//! vocabulary building, statistics, and the synthetic generator.

mod corpus;
mod labels;
mod silver;
mod stats;
mod synth;
mod vocab;

pub use corpus::{load_corpus, save_corpus, split_cases, write_corpus, Case, Split};
pub use labels::{LabelSet, ARTICLES};
pub use silver::{extract_silver_rationales, render_reference};
pub use stats::{corpus_stats, CorpusStats};
pub use synth::{generate_synthetic, keyword_labels, trigger_label, trigger_token, SynthConfig};
pub use vocab::{tokenize, Vocabulary, PAD, PAD_TOKEN, UNK, UNK_TOKEN};
