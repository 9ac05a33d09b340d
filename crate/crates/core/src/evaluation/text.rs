//! Held-out document likelihood via fold-in.

use rayon::prelude::*;

use crate::corpus::Document;
use crate::error::{JnetError, Result};
use crate::inference::{assign_words, optimize_doc_topic, DocContext, EStepConfig};
use crate::model::{softmax, topic_affinity, DocPosterior, TrainedModel};
use crate::scalar::{log_sum_exp, Real};

/// Maximum θ/η alternations during fold-in.
pub const FOLD_IN_ROUNDS: usize = 100;

/// Infers q(θ) and η for an unseen document with every global block frozen.
/// `owner` is the owner's embedding mean; `None` uses the prior mean (zero).
/// Starts at the prior mean `Φ μ^(u)` and alternates η and θ updates until
/// the θ mean moves less than `config.tolerance`.
pub fn fold_in_document<T: Real>(
    model: &TrainedModel<T>,
    doc: &Document,
    owner: Option<&[T]>,
    config: &EStepConfig<T>,
) -> Result<DocPosterior<T>> {
    let zero = vec![T::zero(); model.hyper.dim];
    let prior = topic_affinity(&model.topic_means, owner.unwrap_or(&zero));
    let ctx = DocContext { prior_mean: &prior, tau: model.hyper.tau, bag: doc.bag(), len: doc.len() };
    let mut post = DocPosterior::init(prior.clone(), model.hyper.tau, doc.bag().len());
    for _ in 0..FOLD_IN_ROUNDS {
        assign_words(&mut post, doc.bag(), &model.beta);
        let before = post.mean.clone();
        let steps = optimize_doc_topic(&ctx, &mut post, config)
            .map_err(|msg| JnetError::NonFinite(format!("document {}: {msg}", doc.id)))?;
        let moved = before.iter().zip(&post.mean).fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()));
        if steps == 0 || moved < config.tolerance {
            break;
        }
    }
    assign_words(&mut post, doc.bag(), &model.beta);
    Ok(post)
}

/// Plug-in `log p(w_d) = Σ_n log Σ_k π_k β_{k,w_n}` with `π = softmax(μ^(θ))`.
pub fn document_log_likelihood<T: Real>(model: &TrainedModel<T>, post: &DocPosterior<T>, doc: &Document) -> Result<T> {
    let pi = softmax(&post.mean)?;
    let log_pi: Vec<T> = pi.iter().map(|p| p.ln()).collect();
    let mut ll = T::zero();
    let mut terms = vec![T::zero(); pi.len()];
    for &(w, count) in doc.bag() {
        for (k, t) in terms.iter_mut().enumerate() {
            *t = log_pi[k] + model.beta.log_prob(k, w as usize);
        }
        ll = ll + T::from_count(count as usize) * log_sum_exp(&terms);
    }
    Ok(ll)
}

/// Total held-out log-likelihood and token count after folding in every
/// document. Owners at or beyond the model's user count use the prior.
pub fn heldout_log_likelihood<T: Real>(model: &TrainedModel<T>, docs: &[Document], config: &EStepConfig<T>) -> Result<(f64, usize)> {
    let parts: Vec<f64> = docs
        .par_iter()
        .map(|doc| {
            let owner = model.user_means.get(doc.owner).map(|u| u.as_slice());
            let post = fold_in_document(model, doc, owner, config)?;
            Ok(document_log_likelihood(model, &post, doc)?.as_f64())
        })
        .collect::<Result<_>>()?;
    Ok((parts.iter().sum(), docs.iter().map(Document::len).sum()))
}

/// `exp(−Σ_d log p(w_d) / Σ_d N_d)`
pub fn perplexity<T: Real>(model: &TrainedModel<T>, docs: &[Document], config: &EStepConfig<T>) -> Result<f64> {
    if docs.is_empty() {
        return Err(JnetError::Invalid("perplexity needs at least one held-out document".into()));
    }
    let (ll, n) = heldout_log_likelihood(model, docs, config)?;
    let p = (-ll / n as f64).exp();
    if !p.is_finite() {
        return Err(JnetError::NonFinite(format!("perplexity from log-likelihood {ll}")));
    }
    Ok(p)
}
