use std::fmt;

use serde::Serialize;

use super::{Case, LabelSet};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusStats {
    pub cases: usize,
    /// Cases that carry a silver rationale; the sparsity average runs over these.
    pub cases_with_silver: usize,
    /// Mean percentage of paragraphs in the silver rationale.
    pub silver_sparsity_pct: f64,
    pub mean_allegations: f64,
    pub mean_paragraphs: f64,
    /// `(article, positive cases)` in label-set order.
    pub label_histogram: Vec<(String, usize)>,
}

pub fn corpus_stats(cases: &[Case], labels: &LabelSet) -> Result<CorpusStats> {
    if cases.is_empty() {
        return Err(Error::Invalid("corpus is empty".into()));
    }
    let n = cases.len() as f64;
    let mut hist = vec![0usize; labels.len()];
    let mut sparsity_sum = 0.0;
    let mut with_silver = 0;
    for c in cases {
        for (h, &y) in hist.iter_mut().zip(&c.labels) {
            *h += y as usize;
        }
        if let Some(s) = &c.silver_rationale {
            with_silver += 1;
            sparsity_sum += s.len() as f64 / c.facts.len() as f64 * 100.0;
        }
    }
    Ok(CorpusStats {
        cases: cases.len(),
        cases_with_silver: with_silver,
        silver_sparsity_pct: if with_silver == 0 {
            0.0
        } else {
            sparsity_sum / with_silver as f64
        },
        mean_allegations: cases.iter().map(|c| c.positive_count() as f64).sum::<f64>() / n,
        mean_paragraphs: cases.iter().map(|c| c.facts.len() as f64).sum::<f64>() / n,
        label_histogram: labels.names().iter().cloned().zip(hist).collect(),
    })
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "cases               {}", self.cases)?;
        writeln!(f, "silver sparsity (%) {:.1}", self.silver_sparsity_pct)?;
        writeln!(f, "mean allegations    {:.2}", self.mean_allegations)?;
        writeln!(f, "mean paragraphs     {:.1}", self.mean_paragraphs)?;
        writeln!(f, "article  cases")?;
        for (name, count) in self.label_histogram.iter().filter(|(_, c)| *c > 0) {
            writeln!(f, "{name:<8} {count}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    #[test]
    fn single_case_sparsity() {
        let labels = LabelSet::prefix(3).unwrap();
        let case = Case {
            case_id: "a".into(),
            facts: vec!["x".into(); 4],
            labels: vec![true, false, true],
            silver_rationale: Some([0].into()),
            gold_rationale: None,
            split: Split::Train,
        };
        let s = corpus_stats(&[case], &labels).unwrap();
        assert_eq!(s.silver_sparsity_pct, 25.0);
        assert_eq!(s.mean_allegations, 2.0);
        assert_eq!(s.label_histogram[2], ("4".to_string(), 1));
        assert!(corpus_stats(&[], &labels).is_err());
    }
}
