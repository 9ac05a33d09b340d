//! Expert recommendation: who should answer a question.

use super::metrics::{mean_average_precision, ndcg};
use super::text::fold_in_document;
use crate::corpus::Document;
use crate::error::{JnetError, Result};
use crate::inference::EStepConfig;
use crate::model::{topic_affinity, TrainedModel};
use crate::scalar::{cosine, Real};

/// A question with its asker (the document owner) and known answerers.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertQuery {
    pub question: Document,
    pub answerers: Vec<usize>,
}

fn cosine_or_zero<T: Real>(a: &[T], b: &[T], what: &str) -> f64 {
    cosine(a, b).map_or_else(
        || {
            log::warn!("zero-norm vector in {what} cosine");
            0.0
        },
        |c| c.as_f64(),
    )
}

/// `w · cos(Φ μ^(u_c), μ^(θ)) + (1 − w) · cos(μ^(u_c), μ^(u_asker))`.
pub fn expert_score<T: Real>(
    model: &TrainedModel<T>,
    question_mean: &[T],
    asker: usize,
    candidate: usize,
    mix_weight: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&mix_weight) {
        return Err(JnetError::Invalid(format!("mix weight must lie in [0, 1], got {mix_weight}")));
    }
    let cand = &model.user_means[candidate];
    let expertise = topic_affinity(&model.topic_means, cand);
    let content = cosine_or_zero(&expertise, question_mean, "content");
    let social = cosine_or_zero(cand, &model.user_means[asker], "user");
    Ok(mix_weight * content + (1.0 - mix_weight) * social)
}

/// Ranks every user except the asker for each question and returns mean
/// NDCG and MAP with the answerers as relevant items. Questions whose
/// answerers are all excluded are skipped.
pub fn evaluate_experts<T: Real>(
    model: &TrainedModel<T>,
    queries: &[ExpertQuery],
    mix_weight: f64,
    config: &EStepConfig<T>,
) -> Result<(f64, f64)> {
    let mut lists = Vec::with_capacity(queries.len());
    for q in queries {
        let asker = q.question.owner;
        if asker >= model.num_users() {
            return Err(JnetError::Invalid(format!("question {} asked by unknown user", q.question.id)));
        }
        let post = fold_in_document(model, &q.question, Some(&model.user_means[asker]), config)?;
        let mut scored = Vec::with_capacity(model.num_users());
        for c in (0..model.num_users()).filter(|&c| c != asker) {
            scored.push((expert_score(model, &post.mean, asker, c, mix_weight)?, c));
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let rel: Vec<bool> = scored.iter().map(|&(_, c)| q.answerers.contains(&c)).collect();
        if rel.iter().any(|&r| r) {
            lists.push(rel);
        }
    }
    if lists.is_empty() {
        return Err(JnetError::Invalid("no question has an answerer among the candidates".into()));
    }
    let mut total = 0.0;
    for l in &lists {
        total += ndcg(l)?;
    }
    Ok((total / lists.len() as f64, mean_average_precision(&lists)?))
}
