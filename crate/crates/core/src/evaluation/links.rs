//! Link-prediction ranking tasks with injected non-friends.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{mean_average_precision, ndcg};
use crate::corpus::AdjacencySet;
use crate::error::{JnetError, Result};
use crate::model::TrainedModel;
use crate::scalar::{cosine, Real};

/// One query user's candidates and their binary relevance.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingTask {
    pub query: usize,
    /// ascending user indices
    pub candidates: Vec<usize>,
    pub relevance: Vec<bool>,
    pub ratio: usize,
}

/// Per query user: the held-out friends as positives plus `ratio` times as
/// many non-friends, drawn uniformly from users who are neither training
/// nor held-out friends. Each user's draw is seeded independently.
pub fn build_link_tasks(
    train: &AdjacencySet,
    heldout: &[(usize, usize)],
    ratio: usize,
    seed: u64,
) -> Result<Vec<RankingTask>> {
    if ratio == 0 {
        return Err(JnetError::Invalid("injection ratio must be at least 1".into()));
    }
    let n = train.num_users();
    let mut positives: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &(i, j) in heldout {
        if i == j || i >= n || j >= n {
            return Err(JnetError::Invalid(format!("bad held-out edge ({i}, {j})")));
        }
        positives.entry(i).or_default().insert(j);
        positives.entry(j).or_default().insert(i);
    }
    let mut tasks = Vec::with_capacity(positives.len());
    for (&q, pos) in &positives {
        let pool: Vec<usize> = (0..n).filter(|&c| c != q && !pos.contains(&c) && !train.contains(q, c)).collect();
        let want = ratio * pos.len();
        if pool.len() < want {
            return Err(JnetError::Insufficient(format!(
                "user {q} has {} non-friends, {want} needed at ratio {ratio}",
                pool.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(q as u64);
        let mut cands: Vec<(usize, bool)> = pos.iter().map(|&c| (c, true)).collect();
        cands.extend(index::sample(&mut rng, pool.len(), want).into_iter().map(|k| (pool[k], false)));
        cands.sort_unstable();
        tasks.push(RankingTask {
            query: q,
            candidates: cands.iter().map(|c| c.0).collect(),
            relevance: cands.iter().map(|c| c.1).collect(),
            ratio,
        });
    }
    Ok(tasks)
}

/// Candidates ordered by descending embedding cosine with the query, ties
/// by ascending index; zero-norm embeddings rank last.
pub fn rank_candidates<T: Real>(model: &TrainedModel<T>, task: &RankingTask) -> Vec<usize> {
    let q = &model.user_means[task.query];
    let mut scored: Vec<(f64, usize)> = task
        .candidates
        .iter()
        .map(|&c| {
            let s = cosine(q, &model.user_means[c]).map_or_else(
                || {
                    log::warn!("zero-norm embedding for user {} or query {}", c, task.query);
                    f64::NEG_INFINITY
                },
                |s| s.as_f64(),
            );
            (s, c)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, c)| c).collect()
}

/// Relevance labels in ranked order.
pub fn ranked_relevance<T: Real>(model: &TrainedModel<T>, task: &RankingTask) -> Vec<bool> {
    rank_candidates(model, task)
        .into_iter()
        .map(|c| task.relevance[task.candidates.binary_search(&c).expect("ranked candidate")])
        .collect()
}

/// Mean NDCG and MAP over the tasks.
pub fn score_link_tasks<T: Real>(model: &TrainedModel<T>, tasks: &[RankingTask]) -> Result<(f64, f64)> {
    if tasks.is_empty() {
        return Err(JnetError::Invalid("no ranking tasks".into()));
    }
    let lists: Vec<Vec<bool>> = tasks.iter().map(|t| ranked_relevance(model, t)).collect();
    let mut total = 0.0;
    for l in &lists {
        total += ndcg(l)?;
    }
    Ok((total / lists.len() as f64, mean_average_precision(&lists)?))
}
