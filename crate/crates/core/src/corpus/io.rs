use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_vocabulary, AdjacencySet, Corpus, Document, Vocabulary};
use crate::error::{JnetError, Result};

/// Where the vocabulary comes from when loading a corpus.
#[derive(Debug, Clone)]
pub enum VocabSource {
    Given(Vocabulary),
    Build { max_features: usize },
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub vocab: VocabSource,
    /// When set, the user list is fixed and any edge or document naming
    /// another id is an error. Otherwise users are admitted in order of
    /// first appearance (documents first, then edges).
    pub users: Option<Vec<String>>,
}

impl LoadOptions {
    pub fn build(max_features: usize) -> Self {
        Self { vocab: VocabSource::Build { max_features }, users: None }
    }

    pub fn with_vocabulary(vocab: Vocabulary) -> Self {
        Self { vocab: VocabSource::Given(vocab), users: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestionReport {
    pub users: usize,
    pub documents: usize,
    pub dropped_documents: usize,
    pub edges: usize,
    pub avg_doc_len: f64,
}

/// One raw line of the documents file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDocument {
    pub user: String,
    pub id: String,
    pub tokens: Vec<String>,
}

/// Parses `user_id<TAB>doc_id<TAB>space-separated tokens` lines.
pub fn read_documents(path: &Path) -> Result<Vec<RawDocument>> {
    let text = fs::read_to_string(path).map_err(|e| JnetError::io(path, e))?;
    let file = path.display().to_string();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (Some(user), Some(id), Some(tokens)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(JnetError::Parse { file, line: n + 1, msg: "expected user_id<TAB>doc_id<TAB>tokens".into() });
        };
        let (user, id) = (user.trim(), id.trim());
        if user.is_empty() || id.is_empty() {
            return Err(JnetError::Parse { file, line: n + 1, msg: "empty user or document id".into() });
        }
        out.push(RawDocument {
            user: user.to_string(),
            id: id.to_string(),
            tokens: tokens.split_whitespace().map(String::from).collect(),
        });
    }
    Ok(out)
}

/// Parses `user_id<TAB>user_id` lines.
pub fn read_edges(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| JnetError::io(path, e))?;
    let file = path.display().to_string();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
            return Err(JnetError::Parse { file, line: n + 1, msg: "expected user_id<TAB>user_id".into() });
        }
        if fields[0] == fields[1] {
            return Err(JnetError::Parse { file, line: n + 1, msg: format!("self-loop on user {}", fields[0]) });
        }
        out.push((fields[0].to_string(), fields[1].to_string()));
    }
    Ok(out)
}

struct UserTable {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    fixed: bool,
}

impl UserTable {
    fn new(fixed: Option<Vec<String>>) -> Self {
        let ids = fixed.clone().unwrap_or_default();
        let index = ids.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
        Self { ids, index, fixed: fixed.is_some() }
    }

    fn resolve(&mut self, id: &str) -> Option<usize> {
        if let Some(&i) = self.index.get(id) {
            return Some(i);
        }
        if self.fixed {
            return None;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        Some(i)
    }
}

/// Reads the documents and edges files into an indexed [`Corpus`].
///
/// Documents left with no in-vocabulary tokens are dropped and counted in
/// the returned report.
pub fn load_corpus(docs_path: &Path, edges_path: &Path, opts: &LoadOptions) -> Result<(Corpus, IngestionReport)> {
    let raw = read_documents(docs_path)?;
    let raw_edges = read_edges(edges_path)?;

    let vocab = match &opts.vocab {
        VocabSource::Given(v) => v.clone(),
        VocabSource::Build { max_features } => {
            let streams: Vec<&[String]> = raw.iter().map(|d| d.tokens.as_slice()).collect();
            let streams: Vec<Vec<&str>> = streams.iter().map(|t| t.iter().map(String::as_str).collect()).collect();
            build_vocabulary(&streams, *max_features)?
        }
    };

    let mut users = UserTable::new(opts.users.clone());
    let mut docs = Vec::with_capacity(raw.len());
    let mut dropped = 0;
    let docs_file = docs_path.display().to_string();
    for (n, d) in raw.into_iter().enumerate() {
        let owner = users.resolve(&d.user).ok_or_else(|| JnetError::Parse {
            file: docs_file.clone(),
            line: n + 1,
            msg: format!("unknown user id {}", d.user),
        })?;
        let tokens: Vec<u32> = d.tokens.iter().filter_map(|t| vocab.get(t)).collect();
        if tokens.is_empty() {
            dropped += 1;
            continue;
        }
        docs.push(Document::new(owner, d.id, tokens)?);
    }

    let mut pairs = Vec::with_capacity(raw_edges.len());
    for (a, b) in &raw_edges {
        let i = users.resolve(a).ok_or_else(|| JnetError::Invalid(format!("edge references unknown user {a}")))?;
        let j = users.resolve(b).ok_or_else(|| JnetError::Invalid(format!("edge references unknown user {b}")))?;
        pairs.push((i, j));
    }
    let adjacency = AdjacencySet::from_edges(users.ids.len(), pairs)?;
    let corpus = Corpus::new(vocab, users.ids, docs, adjacency)?;
    let report = IngestionReport {
        users: corpus.num_users(),
        documents: corpus.num_documents(),
        dropped_documents: dropped,
        edges: corpus.adjacency.len(),
        avg_doc_len: if corpus.num_documents() == 0 {
            0.0
        } else {
            corpus.num_tokens() as f64 / corpus.num_documents() as f64
        },
    };
    log::info!(
        "loaded {} users, {} documents ({} dropped), {} edges",
        report.users,
        report.documents,
        report.dropped_documents,
        report.edges
    );
    Ok((corpus, report))
}

/// Writes documents and edges in the same formats `load_corpus` reads.
pub fn write_corpus(corpus: &Corpus, docs_path: &Path, edges_path: &Path) -> Result<()> {
    let mut docs = String::new();
    for d in corpus.documents() {
        let toks: Vec<&str> = d.tokens().iter().map(|&w| corpus.vocabulary.term(w as usize)).collect();
        docs.push_str(&format!("{}\t{}\t{}\n", corpus.users[d.owner], d.id, toks.join(" ")));
    }
    fs::write(docs_path, docs).map_err(|e| JnetError::io(docs_path, e))?;
    let mut edges = String::new();
    for (i, j) in corpus.adjacency.edges() {
        edges.push_str(&format!("{}\t{}\n", corpus.users[i], corpus.users[j]));
    }
    fs::write(edges_path, edges).map_err(|e| JnetError::io(edges_path, e))
}
