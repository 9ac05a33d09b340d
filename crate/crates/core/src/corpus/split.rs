use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::error::{JnetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldMode {
    Documents,
    Edges,
}

/// Held-out partition of either the documents or the edges.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSplit {
    pub num_folds: usize,
    pub seed: u64,
    pub mode: FoldMode,
    /// Per-fold held-out document indices (empty in edge mode).
    pub documents: Vec<Vec<usize>>,
    /// Per-fold held-out edges `(i, j)` with `i < j` (empty in document mode).
    pub edges: Vec<Vec<(usize, usize)>>,
}

fn partition<T: Clone>(items: &[T], folds: usize, seed: u64) -> Vec<Vec<T>> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (pos, &idx) in order.iter().enumerate() {
        out[pos % folds].push(items[idx].clone());
    }
    out
}

/// Uniform random partition of documents or edges into `folds` groups.
pub fn split_folds(corpus: &Corpus, folds: usize, seed: u64, mode: FoldMode) -> Result<FoldSplit> {
    if folds < 2 {
        return Err(JnetError::Invalid(format!("need at least 2 folds, got {folds}")));
    }
    let (documents, edges) = match mode {
        FoldMode::Documents => {
            let n = corpus.num_documents();
            if n < folds {
                return Err(JnetError::Insufficient(format!("{n} documents for {folds} folds")));
            }
            let idx: Vec<usize> = (0..n).collect();
            let mut parts = partition(&idx, folds, seed);
            parts.iter_mut().for_each(|p| p.sort_unstable());
            (parts, Vec::new())
        }
        FoldMode::Edges => {
            let all: Vec<(usize, usize)> = corpus.adjacency.edges().collect();
            if all.len() < folds {
                return Err(JnetError::Insufficient(format!("{} edges for {folds} folds", all.len())));
            }
            let mut parts = partition(&all, folds, seed);
            parts.iter_mut().for_each(|p| p.sort_unstable());
            (Vec::new(), parts)
        }
    };
    Ok(FoldSplit { num_folds: folds, seed, mode, documents, edges })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupMetric {
    Connections,
    Documents,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColdStartGroups {
    pub light: Vec<usize>,
    pub medium: Vec<usize>,
    pub heavy: Vec<usize>,
}

impl ColdStartGroups {
    pub fn labeled(&self) -> [(&'static str, &[usize]); 3] {
        [("light", &self.light), ("medium", &self.medium), ("heavy", &self.heavy)]
    }
}

/// Buckets every user by degree or document count: light `< low`,
/// medium `low..high`, heavy `>= high`.
pub fn cold_start_pools(corpus: &Corpus, low: usize, high: usize, metric: GroupMetric) -> Result<ColdStartGroups> {
    if low >= high {
        return Err(JnetError::Invalid(format!("thresholds must satisfy low < high, got {low}, {high}")));
    }
    let value = |i: usize| match metric {
        GroupMetric::Connections => corpus.adjacency.degree(i),
        GroupMetric::Documents => corpus.user_documents(i).len(),
    };
    let mut pools = [Vec::new(), Vec::new(), Vec::new()];
    for i in 0..corpus.num_users() {
        let v = value(i);
        let g = if v < low {
            0
        } else if v < high {
            1
        } else {
            2
        };
        pools[g].push(i);
    }
    let [light, medium, heavy] = pools;
    Ok(ColdStartGroups { light, medium, heavy })
}

/// Samples `group_size` users from each of the [`cold_start_pools`].
pub fn group_cold_start_users(
    corpus: &Corpus,
    low: usize,
    high: usize,
    metric: GroupMetric,
    group_size: usize,
    seed: u64,
) -> Result<ColdStartGroups> {
    let pools = cold_start_pools(corpus, low, high, metric)?;
    let mut pools = [pools.light, pools.medium, pools.heavy];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = ["light", "medium", "heavy"];
    let mut picked = Vec::with_capacity(3);
    for (pool, name) in pools.iter_mut().zip(names) {
        if pool.len() < group_size {
            return Err(JnetError::Insufficient(format!(
                "{name} pool has {} users, need {group_size}",
                pool.len()
            )));
        }
        pool.shuffle(&mut rng);
        let mut g = pool[..group_size].to_vec();
        g.sort_unstable();
        picked.push(g);
    }
    let heavy = picked.pop().unwrap();
    let medium = picked.pop().unwrap();
    let light = picked.pop().unwrap();
    Ok(ColdStartGroups { light, medium, heavy })
}
