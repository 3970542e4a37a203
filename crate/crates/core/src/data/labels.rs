use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The violable articles of the Convention and its Protocols, in the fixed
/// order that defines label indices.
pub const ARTICLES: [&str; 40] = [
    "2", "3", "4", "5", "6", "7", "8", "9", "10", "11", "12", "13", "14", "15", "16", "17", "18", "34", "35", "38",
    "39", "46", "P1-1", "P1-2", "P1-3", "P3-1", "P4-1", "P4-2", "P4-3", "P4-4", "P6-1", "P6-2", "P6-3", "P7-1",
    "P7-2", "P7-3", "P7-4", "P7-5", "P12-1", "P13-1",
];

/// Ordered label names with a reverse index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet {
    names: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for LabelSet {
    fn from(names: Vec<String>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, index }
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(l: LabelSet) -> Self {
        l.names
    }
}

impl LabelSet {
    /// All 40 articles.
    pub fn articles() -> Self {
        Self::prefix(ARTICLES.len()).expect("full list")
    }

    /// The first `n` articles.
    pub fn prefix(n: usize) -> Result<Self> {
        if n == 0 || n > ARTICLES.len() {
            return Err(Error::Config(format!(
                "num_labels must be between 1 and {}, got {n}",
                ARTICLES.len()
            )));
        }
        Ok(ARTICLES[..n].iter().map(|s| s.to_string()).collect::<Vec<_>>().into())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name.trim()).copied()
    }

    /// Multi-hot vector for `names`; every unknown name is reported at once.
    pub fn encode<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<bool>> {
        let mut hot = vec![false; self.len()];
        let mut unknown = Vec::new();
        for n in names {
            match self.index_of(n.as_ref()) {
                Some(i) => hot[i] = true,
                None => unknown.push(n.as_ref().to_string()),
            }
        }
        if unknown.is_empty() {
            Ok(hot)
        } else {
            Err(Error::UnknownLabels(unknown))
        }
    }

    pub fn decode(&self, hot: &[bool]) -> Vec<String> {
        hot.iter()
            .zip(&self.names)
            .filter(|(h, _)| **h)
            .map(|(_, n)| n.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forty_distinct_articles() {
        let set = LabelSet::articles();
        assert_eq!(set.len(), 40);
        let mut names = set.names().to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 40);
    }

    #[test]
    fn encode_reports_all_unknowns() {
        let set = LabelSet::articles();
        assert_eq!(set.decode(&set.encode(&["3", "P1-1"]).unwrap()), vec!["3", "P1-1"]);
        match set.encode(&["3", "99", "P9-9"]) {
            Err(Error::UnknownLabels(u)) => assert_eq!(u, vec!["99", "P9-9"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn prefix_bounds() {
        assert!(LabelSet::prefix(0).is_err());
        assert!(LabelSet::prefix(41).is_err());
        assert_eq!(LabelSet::prefix(5).unwrap().names(), ["2", "3", "4", "5", "6"]);
    }
}
