//! Small fixtures shared by unit and integration tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AdjacencySet, Corpus, Document, Vocabulary};

/// `num_users` users with `docs_per_user` short documents each over a
/// vocabulary of `vocab` terms, and no edges.
pub fn tiny_corpus(num_users: usize, docs_per_user: usize, vocab: usize) -> Corpus {
    random_corpus(num_users, docs_per_user, vocab, 5, &[], 0)
}

/// Random documents of `doc_len` tokens plus the given edges.
pub fn random_corpus(
    num_users: usize,
    docs_per_user: usize,
    vocab: usize,
    doc_len: usize,
    edges: &[(usize, usize)],
    seed: u64,
) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms = (0..vocab).map(|v| format!("w{v}")).collect();
    let users = (0..num_users).map(|i| format!("u{i}")).collect();
    let mut docs = Vec::new();
    for i in 0..num_users {
        for d in 0..docs_per_user {
            let toks = (0..doc_len).map(|_| rng.random_range(0..vocab as u32)).collect();
            docs.push(Document::new(i, format!("u{i}d{d}"), toks).unwrap());
        }
    }
    let adj = AdjacencySet::from_edges(num_users, edges.iter().copied()).unwrap();
    Corpus::new(Vocabulary::from_terms(terms).unwrap(), users, docs, adj).unwrap()
}
