use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{JnetError, Result};

/// Ordered term list with dense indices `0..V`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn from_terms(terms: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(JnetError::Invalid(format!("bad vocabulary term {t:?} at index {i}")));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(JnetError::Invalid(format!("duplicate vocabulary term {t:?}")));
            }
        }
        Ok(Self { terms, index })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn get(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    pub fn term(&self, idx: usize) -> &str {
        &self.terms[idx]
    }

    /// One term per line; line number is the index.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| JnetError::io(path, e))?;
        let terms = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
        Self::from_terms(terms)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = self.terms.join("\n");
        out.push('\n');
        fs::write(path, out).map_err(|e| JnetError::io(path, e))
    }
}

/// Keeps the `max_features` terms with the highest document frequency,
/// ties broken lexicographically.
pub fn build_vocabulary<S: AsRef<str>>(raw_docs: &[Vec<S>], max_features: usize) -> Result<Vocabulary> {
    if max_features == 0 {
        return Err(JnetError::Invalid("max_features must be at least 1".into()));
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in raw_docs {
        let distinct: HashSet<&str> = doc.iter().map(AsRef::as_ref).filter(|t| !t.is_empty()).collect();
        for t in distinct {
            *df.entry(t).or_default() += 1;
        }
    }
    if df.is_empty() {
        return Err(JnetError::NoUsableTerms);
    }
    let mut ranked: Vec<(&str, usize)> = df.into_iter().collect();
    // BTreeMap order is lexicographic; stable sort keeps it within equal DF
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    ranked.truncate(max_features);
    Vocabulary::from_terms(ranked.into_iter().map(|(t, _)| t.to_string()).collect())
}
