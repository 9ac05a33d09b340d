//! Sweeps over all posterior blocks until the bound settles.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{assign_words, compute_elbo, optimize_doc_topic, update_affinity, update_topics, update_users, DocContext, EStepConfig};
use crate::corpus::Corpus;
use crate::error::{JnetError, Result};
use crate::model::{topic_affinity, DocPosterior, HyperParams, PosteriorState, TopicWordDist};
use crate::scalar::Real;

/// One row of an ELBO trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRecord {
    pub sweep: usize,
    pub elbo: f64,
    /// change from the previous row (from the starting value for the first)
    pub delta: f64,
    pub seconds: f64,
}

/// Writes a trace as `sweep,elbo,delta,seconds`.
pub fn write_trace(path: &Path, records: &[SweepRecord]) -> Result<()> {
    let mut out = String::from("sweep,elbo,delta,seconds\n");
    for r in records {
        out.push_str(&format!("{},{:.17e},{:.17e},{:.6}\n", r.sweep, r.elbo, r.delta, r.seconds));
    }
    std::fs::write(path, out).map_err(|e| JnetError::io(path, e))
}

fn update_document<T: Real>(
    state: &PosteriorState<T>,
    corpus: &Corpus,
    hyper: &HyperParams<T>,
    beta: &TopicWordDist<T>,
    config: &EStepConfig<T>,
    d: usize,
) -> Result<DocPosterior<T>> {
    let doc = &corpus.documents()[d];
    let prior = topic_affinity(&state.topics.means, &state.users[doc.owner].mean);
    let ctx = DocContext { prior_mean: &prior, tau: hyper.tau, bag: doc.bag(), len: doc.len() };
    let mut post = state.docs[d].clone();
    for _ in 0..config.doc_rounds {
        optimize_doc_topic(&ctx, &mut post, config)
            .map_err(|msg| JnetError::NonFinite(format!("document {}: {msg}", doc.id)))?;
        assign_words(&mut post, doc.bag(), beta);
    }
    Ok(post)
}

/// One full sweep: documents (θ then η), affinities, users, topics.
fn sweep<T: Real>(
    state: &mut PosteriorState<T>,
    corpus: &Corpus,
    hyper: &HyperParams<T>,
    beta: &TopicWordDist<T>,
    config: &EStepConfig<T>,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let docs: Vec<DocPosterior<T>> = (0..corpus.num_documents())
        .into_par_iter()
        .map(|d| update_document(state, corpus, hyper, beta, config, d))
        .collect::<Result<_>>()?;
    state.docs = docs;

    state.pairs.resample(&corpus.adjacency, &state.users, hyper.xi, rng);
    let pairs: Vec<_> = (0..state.pairs.len())
        .into_par_iter()
        .map(|t| update_affinity(state, hyper, config, t))
        .collect::<Result<_>>()?;
    for (term, post) in state.pairs.terms.iter_mut().zip(pairs) {
        term.post = post;
    }

    update_users(state, corpus, hyper)?;
    update_topics(state, corpus, hyper)
}

/// Runs up to `config.max_sweeps` sweeps, stopping early once the relative
/// ELBO change falls below `config.elbo_tolerance`. Returns the bound after
/// each sweep; a zero budget leaves the state untouched.
pub fn e_step<T: Real>(
    state: &mut PosteriorState<T>,
    corpus: &Corpus,
    hyper: &HyperParams<T>,
    beta: &TopicWordDist<T>,
    config: &EStepConfig<T>,
) -> Result<Vec<SweepRecord>> {
    config.validate()?;
    let mut records = Vec::with_capacity(config.max_sweeps);
    if config.max_sweeps == 0 {
        return Ok(records);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut prev = compute_elbo(state, corpus, hyper, beta)?.as_f64();
    for s in 0..config.max_sweeps {
        let start = Instant::now();
        sweep(state, corpus, hyper, beta, config, &mut rng)?;
        let elbo = compute_elbo(state, corpus, hyper, beta)?.as_f64();
        let delta = elbo - prev;
        records.push(SweepRecord { sweep: s + 1, elbo, delta, seconds: start.elapsed().as_secs_f64() });
        log::debug!("sweep {}: elbo {elbo:.6} (delta {delta:.3e})", s + 1);
        if delta.abs() <= config.elbo_tolerance.as_f64() * elbo.abs() {
            break;
        }
        prev = elbo;
    }
    Ok(records)
}
