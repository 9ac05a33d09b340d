//! Users, bag-of-words documents, and the undirected social graph.

mod io;
mod split;
mod vocab;

use std::collections::BTreeSet;

use crate::error::{JnetError, Result};

pub use io::{load_corpus, read_documents, read_edges, write_corpus, IngestionReport, LoadOptions, VocabSource};
pub use split::{cold_start_pools, group_cold_start_users, split_folds, ColdStartGroups, FoldMode, FoldSplit, GroupMetric};
pub use vocab::{build_vocabulary, Vocabulary};

/// A bag of words owned by one user.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub owner: usize,
    pub id: String,
    tokens: Vec<u32>,
    bag: Vec<(u32, u32)>,
}

impl Document {
    pub fn new(owner: usize, id: impl Into<String>, tokens: Vec<u32>) -> Result<Self> {
        let id = id.into();
        if tokens.is_empty() {
            return Err(JnetError::Invalid(format!("document {id} has no tokens")));
        }
        let mut sorted = tokens.clone();
        sorted.sort_unstable();
        let mut bag: Vec<(u32, u32)> = Vec::new();
        for w in sorted {
            match bag.last_mut() {
                Some((last, c)) if *last == w => *c += 1,
                _ => bag.push((w, 1)),
            }
        }
        Ok(Self { owner, id, tokens, bag })
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    /// Distinct terms with their counts, sorted by term index.
    pub fn bag(&self) -> &[(u32, u32)] {
        &self.bag
    }

    /// Document length N.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Undirected edge set over `num_users` users, stored as `(min, max)` pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdjacencySet {
    num_users: usize,
    edges: BTreeSet<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl AdjacencySet {
    pub fn new(num_users: usize) -> Self {
        Self { num_users, edges: BTreeSet::new(), neighbors: vec![Vec::new(); num_users] }
    }

    pub fn from_edges(num_users: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut adj = Self::new(num_users);
        for (i, j) in edges {
            adj.insert(i, j)?;
        }
        Ok(adj)
    }

    /// Adds `{i, j}`; returns whether the edge was new.
    pub fn insert(&mut self, i: usize, j: usize) -> Result<bool> {
        if i == j {
            return Err(JnetError::Invalid(format!("self-loop on user {i}")));
        }
        if i >= self.num_users || j >= self.num_users {
            return Err(JnetError::Invalid(format!(
                "edge ({i}, {j}) out of range for {} users",
                self.num_users
            )));
        }
        let key = (i.min(j), i.max(j));
        let fresh = self.edges.insert(key);
        if fresh {
            self.neighbors[i].push(j);
            self.neighbors[j].push(i);
            self.neighbors[i].sort_unstable();
            self.neighbors[j].sort_unstable();
        }
        Ok(fresh)
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Edges as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Copy without the listed edges.
    pub fn without(&self, removed: &[(usize, usize)]) -> Self {
        let drop: BTreeSet<(usize, usize)> = removed.iter().map(|&(i, j)| (i.min(j), i.max(j))).collect();
        let mut out = Self::new(self.num_users);
        for e in self.edges.difference(&drop) {
            out.insert(e.0, e.1).expect("edges already validated");
        }
        out
    }
}

/// Indexed corpus: vocabulary, users, their documents, and the social graph.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocabulary: Vocabulary,
    pub users: Vec<String>,
    documents: Vec<Document>,
    docs_by_user: Vec<Vec<usize>>,
    pub adjacency: AdjacencySet,
}

impl Corpus {
    pub fn new(
        vocabulary: Vocabulary,
        users: Vec<String>,
        documents: Vec<Document>,
        adjacency: AdjacencySet,
    ) -> Result<Self> {
        let num_users = users.len();
        if adjacency.num_users() != num_users {
            return Err(JnetError::Invalid(format!(
                "adjacency covers {} users, corpus has {num_users}",
                adjacency.num_users()
            )));
        }
        let v = vocabulary.len();
        let mut docs_by_user = vec![Vec::new(); num_users];
        for (d, doc) in documents.iter().enumerate() {
            if doc.owner >= num_users {
                return Err(JnetError::Invalid(format!("document {} has unknown owner {}", doc.id, doc.owner)));
            }
            if let Some(&w) = doc.tokens.iter().find(|&&w| w as usize >= v) {
                return Err(JnetError::Invalid(format!("document {} token {w} outside vocabulary of {v}", doc.id)));
            }
            docs_by_user[doc.owner].push(d);
        }
        Ok(Self { vocabulary, users, documents, docs_by_user, adjacency })
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn num_documents(&self) -> usize {
        self.documents.len()
    }

    /// Document indices owned by user `i` (D_i = its length).
    pub fn user_documents(&self, i: usize) -> &[usize] {
        &self.docs_by_user[i]
    }

    pub fn num_tokens(&self) -> usize {
        self.documents.iter().map(Document::len).sum()
    }

    /// Same users and graph, keeping only documents for which `keep` holds.
    pub fn filter_documents(&self, mut keep: impl FnMut(usize, &Document) -> bool) -> Self {
        let docs = self
            .documents
            .iter()
            .enumerate()
            .filter(|(d, doc)| keep(*d, doc))
            .map(|(_, doc)| doc.clone())
            .collect();
        Self::new(self.vocabulary.clone(), self.users.clone(), docs, self.adjacency.clone())
            .expect("subset of a valid corpus is valid")
    }

    /// Same users and documents with a replacement graph.
    pub fn with_adjacency(&self, adjacency: AdjacencySet) -> Result<Self> {
        Self::new(self.vocabulary.clone(), self.users.clone(), self.documents.clone(), adjacency)
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.users.iter().position(|u| u == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bag_groups_repeated_terms() {
        let d = Document::new(0, "d", vec![3, 1, 3, 3, 0]).unwrap();
        assert_eq!(d.bag(), &[(0, 1), (1, 1), (3, 3)]);
        assert_eq!(d.len(), 5);
    }

    #[test]
    fn empty_document_rejected() {
        assert!(Document::new(0, "d", vec![]).is_err());
    }

    #[test]
    fn adjacency_is_symmetric_and_rejects_self_loops() {
        let mut a = AdjacencySet::new(3);
        assert!(a.insert(2, 0).unwrap());
        assert!(!a.insert(0, 2).unwrap());
        assert!(a.contains(0, 2) && a.contains(2, 0));
        assert_eq!(a.neighbors(2), &[0]);
        assert_eq!(a.len(), 1);
        assert!(a.insert(1, 1).is_err());
        assert!(a.insert(1, 3).is_err());
    }

    #[test]
    fn corpus_groups_documents_by_owner() {
        let vocab = Vocabulary::from_terms(vec!["a".into(), "b".into()]).unwrap();
        let docs = vec![
            Document::new(1, "x", vec![0]).unwrap(),
            Document::new(0, "y", vec![1, 1]).unwrap(),
            Document::new(1, "z", vec![0, 1]).unwrap(),
        ];
        let c = Corpus::new(vocab, vec!["u0".into(), "u1".into(), "u2".into()], docs, AdjacencySet::new(3)).unwrap();
        assert_eq!(c.user_documents(1), &[0, 2]);
        assert_eq!(c.user_documents(2), &[] as &[usize]);
        let total: usize = (0..3).map(|i| c.user_documents(i).len()).sum();
        assert_eq!(total, c.num_documents());
    }

    #[test]
    fn out_of_vocabulary_token_rejected() {
        let vocab = Vocabulary::from_terms(vec!["a".into()]).unwrap();
        let docs = vec![Document::new(0, "x", vec![1]).unwrap()];
        assert!(Corpus::new(vocab, vec!["u".into()], docs, AdjacencySet::new(1)).is_err());
    }
}
