//! Conjugate Gaussian updates for topic and user embeddings.

use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::error::Result;
use crate::linalg::{Mat, SpdInverse};
use crate::model::{HyperParams, PosteriorState, TopicPosterior, UserPosterior};
use crate::scalar::Real;

/// Per-user sums of document topic means, `Σ_d μ^(θ_id)`.
fn theta_sums<T: Real>(state: &PosteriorState<T>, corpus: &Corpus, i: usize) -> Vec<T> {
    let k = state.topics.num_topics();
    let mut acc = vec![T::zero(); k];
    for &d in corpus.user_documents(i) {
        for (a, &m) in acc.iter_mut().zip(&state.docs[d].mean) {
            *a = *a + m;
        }
    }
    acc
}

/// Shared topic covariance `[αI + τ Σ_i D_i (Σ^(u_i) + μ^(u_i)μ^(u_i)ᵀ)]⁻¹`.
pub fn topic_covariance<T: Real>(state: &PosteriorState<T>, corpus: &Corpus, hyper: &HyperParams<T>) -> Result<SpdInverse<T>> {
    let mut precision = Mat::scaled_identity(hyper.dim, hyper.alpha);
    for (i, u) in state.users.iter().enumerate() {
        let di = corpus.user_documents(i).len();
        if di == 0 {
            continue;
        }
        precision.add_scaled(&u.second_moment(), hyper.tau * T::from_count(di));
    }
    precision.spd_inverse()
}

fn topic_mean_from_sums<T: Real>(state: &PosteriorState<T>, hyper: &HyperParams<T>, cov: &Mat<T>, sums: &[Vec<T>], k: usize) -> Vec<T> {
    let mut rhs = vec![T::zero(); hyper.dim];
    for (u, s) in state.users.iter().zip(sums) {
        if s[k] == T::zero() {
            continue;
        }
        for (r, &m) in rhs.iter_mut().zip(&u.mean) {
            *r = *r + s[k] * m;
        }
    }
    let mut mean = cov.mul_vec(&rhs);
    for m in &mut mean {
        *m = *m * hyper.tau;
    }
    mean
}

/// `μ^(φ_k) = τ Σ^(φ) Σ_i Σ_d μ_k^(θ_id) μ^(u_i)` for a given covariance.
pub fn topic_mean<T: Real>(state: &PosteriorState<T>, corpus: &Corpus, hyper: &HyperParams<T>, cov: &Mat<T>, k: usize) -> Vec<T> {
    let sums: Vec<Vec<T>> = (0..state.users.len()).map(|i| theta_sums(state, corpus, i)).collect();
    topic_mean_from_sums(state, hyper, cov, &sums, k)
}

/// Closed-form q(φ_k) given the user and document blocks.
pub fn update_topic_embedding<T: Real>(
    state: &PosteriorState<T>,
    corpus: &Corpus,
    hyper: &HyperParams<T>,
    k: usize,
) -> Result<TopicPosterior<T>> {
    let cov = topic_covariance(state, corpus, hyper)?.inverse;
    let mean = topic_mean(state, corpus, hyper, &cov, k);
    Ok(TopicPosterior { mean, cov })
}

/// Updates every topic: one shared covariance, means in parallel over k.
pub fn update_topics<T: Real>(state: &mut PosteriorState<T>, corpus: &Corpus, hyper: &HyperParams<T>) -> Result<()> {
    let cov = topic_covariance(state, corpus, hyper)?.inverse;
    let sums: Vec<Vec<T>> = (0..state.users.len()).into_par_iter().map(|i| theta_sums(state, corpus, i)).collect();
    let means: Vec<Vec<T>> = (0..hyper.num_topics)
        .into_par_iter()
        .map(|k| topic_mean_from_sums(state, hyper, &cov, &sums, k))
        .collect();
    state.topics.means = means;
    state.topics.cov = cov;
    Ok(())
}

/// Quantities every user update reads from the topic block.
#[derive(Debug, Clone)]
pub struct UserSufficientStats<T> {
    /// `Σ_k (Σ^(φ) + μ^(φ_k)μ^(φ_k)ᵀ)`
    pub topic_second_moment: Mat<T>,
}

impl<T: Real> UserSufficientStats<T> {
    pub fn new(state: &PosteriorState<T>) -> Self {
        Self { topic_second_moment: state.topics.second_moment_sum() }
    }
}

fn user_update_with<T: Real>(
    state: &PosteriorState<T>,
    corpus: &Corpus,
    hyper: &HyperParams<T>,
    stats: &UserSufficientStats<T>,
    peer_moments: &[Mat<T>],
    i: usize,
) -> Result<UserPosterior<T>> {
    let m = hyper.dim;
    let inv_xi2 = (hyper.xi * hyper.xi).recip();
    let di = corpus.user_documents(i).len();
    let mut precision = Mat::scaled_identity(m, hyper.gamma);
    if di > 0 {
        precision.add_scaled(&stats.topic_second_moment, hyper.tau * T::from_count(di));
    }
    let mut rhs = vec![T::zero(); m];
    let sums = theta_sums(state, corpus, i);
    for (mu_phi, &s) in state.topics.means.iter().zip(&sums) {
        for (r, &p) in rhs.iter_mut().zip(mu_phi) {
            *r = *r + hyper.tau * s * p;
        }
    }
    state.pairs.for_each_peer(i, |j, term| {
        let w = term.weight * inv_xi2;
        precision.add_scaled(&peer_moments[j], w);
        let c = w * term.post.mean;
        for (r, &u) in rhs.iter_mut().zip(&state.users[j].mean) {
            *r = *r + c * u;
        }
    });
    let cov = precision.spd_inverse()?.inverse;
    let mean = cov.mul_vec(&rhs);
    Ok(UserPosterior { mean, cov })
}

/// Closed-form q(u_i). The precision is
/// `γI + τ D_i Σ_k E[φ_kφ_kᵀ] + Σ_{j≠i} ξ⁻² E[u_ju_jᵀ]` and the covariance
/// is its inverse.
pub fn update_user_embedding<T: Real>(
    state: &PosteriorState<T>,
    corpus: &Corpus,
    hyper: &HyperParams<T>,
    i: usize,
) -> Result<UserPosterior<T>> {
    let stats = UserSufficientStats::new(state);
    let moments: Vec<Mat<T>> = state.users.iter().map(UserPosterior::second_moment).collect();
    user_update_with(state, corpus, hyper, &stats, &moments, i)
}

/// Updates users one at a time in index order, each reading its peers'
/// latest values. Users are coupled through every pair term, so a
/// simultaneous update would not be guaranteed to raise the bound.
pub fn update_users<T: Real>(state: &mut PosteriorState<T>, corpus: &Corpus, hyper: &HyperParams<T>) -> Result<()> {
    let stats = UserSufficientStats::new(state);
    let mut moments: Vec<Mat<T>> = state.users.iter().map(UserPosterior::second_moment).collect();
    for i in 0..state.users.len() {
        let post = user_update_with(state, corpus, hyper, &stats, &moments, i)?;
        moments[i] = post.second_moment();
        state.users[i] = post;
    }
    Ok(())
}
