use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::LabelSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    /// Guess from a file name such as `dev.jsonl` or `corpus_test.jsonl`.
    pub fn from_path(path: &Path) -> Option<Split> {
        let stem = path.file_stem()?.to_str()?.to_ascii_lowercase();
        if stem.contains("test") {
            Some(Split::Test)
        } else if stem.contains("dev") || stem.contains("valid") {
            Some(Split::Dev)
        } else if stem.contains("train") {
            Some(Split::Train)
        } else {
            None
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" | "validation" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// One court case.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Case {
    pub case_id: String,
    pub facts: Vec<String>,
    /// Multi-hot over the label set.
    pub labels: Vec<bool>,
    pub silver_rationale: Option<BTreeSet<usize>>,
    pub gold_rationale: Option<BTreeSet<usize>>,
    pub split: Split,
}

impl Case {
    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    /// Labels as 0/1 targets.
    pub fn targets(&self) -> Vec<f64> {
        self.labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn positive_count(&self) -> usize {
        self.labels.iter().filter(|&&b| b).count()
    }

    /// Rationale as a 0/1 mask over the first `n` paragraphs.
    pub fn mask_of(set: &BTreeSet<usize>, n: usize) -> Vec<f64> {
        (0..n).map(|i| if set.contains(&i) { 1.0 } else { 0.0 }).collect()
    }

    pub fn validate(&self, num_labels: usize) -> Result<()> {
        if self.facts.is_empty() {
            return Err(Error::Invalid(format!("case `{}` has no facts", self.case_id)));
        }
        if self.labels.len() != num_labels {
            return Err(Error::Invalid(format!(
                "case `{}` has {} labels, expected {num_labels}",
                self.case_id,
                self.labels.len()
            )));
        }
        for (kind, set) in [("silver", &self.silver_rationale), ("gold", &self.gold_rationale)] {
            if let Some(&bad) = set.as_ref().and_then(|s| s.iter().find(|&&i| i >= self.facts.len())) {
                return Err(Error::Invalid(format!(
                    "case `{}`: {kind} rationale index {bad} out of range for {} facts",
                    self.case_id,
                    self.facts.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    case_id: Option<String>,
    facts: Vec<String>,
    labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    silver_rationales: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_rationales: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

fn corpus_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Corpus {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads line-delimited JSON records. Blank lines are skipped. Records
/// without a `split` take the one implied by the file name (train if none).
pub fn load_corpus(path: &Path, labels: &LabelSet) -> Result<Vec<Case>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let default_split = Split::from_path(path).unwrap_or_default();
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("case").to_string();
    let mut cases = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| corpus_err(path, lineno, e.to_string()))?;
        let hot = labels.encode(&rec.labels).map_err(|e| corpus_err(path, lineno, e.to_string()))?;
        let case = Case {
            case_id: rec.case_id.unwrap_or_else(|| format!("{stem}-{lineno}")),
            facts: rec.facts,
            labels: hot,
            silver_rationale: rec.silver_rationales.map(|v| v.into_iter().collect()),
            gold_rationale: rec.gold_rationales.map(|v| v.into_iter().collect()),
            split: rec.split.unwrap_or(default_split),
        };
        case.validate(labels.len())
            .map_err(|e| corpus_err(path, lineno, e.to_string()))?;
        cases.push(case);
    }
    Ok(cases)
}

/// One JSON record per case, in the format [`load_corpus`] reads.
pub fn write_corpus<W: Write>(out: &mut W, cases: &[Case], labels: &LabelSet) -> std::io::Result<()> {
    for c in cases {
        let rec = Record {
            case_id: Some(c.case_id.clone()),
            facts: c.facts.clone(),
            labels: labels.decode(&c.labels),
            silver_rationales: c.silver_rationale.as_ref().map(|s| s.iter().copied().collect()),
            gold_rationales: c.gold_rationale.as_ref().map(|s| s.iter().copied().collect()),
            split: Some(c.split),
        };
        serde_json::to_writer(&mut *out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_corpus(path: &Path, cases: &[Case], labels: &LabelSet) -> Result<()> {
    let mut buf = Vec::new();
    write_corpus(&mut buf, cases, labels).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn split_cases(cases: &[Case], split: Split) -> Vec<Case> {
    cases.iter().filter(|c| c.split == split).cloned().collect()
}
