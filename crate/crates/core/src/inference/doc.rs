//! Per-document logistic-normal proportions and word assignments.

use super::{EStepConfig, MIN_STEP};
use crate::corpus::Corpus;
use crate::error::{JnetError, Result};
use crate::model::{topic_affinity, DocPosterior, HyperParams, PosteriorState, TopicWordDist};
use crate::scalar::{log_sum_exp, Real};

/// Everything a document's θ update reads besides its own posterior.
#[derive(Debug, Clone, Copy)]
pub struct DocContext<'a, T> {
    /// `Φ μ^(u_i)` for the owner
    pub prior_mean: &'a [T],
    pub tau: T,
    pub bag: &'a [(u32, u32)],
    pub len: usize,
}

/// `Σ_n η_nk` per topic.
fn expected_topic_counts<T: Real>(ctx: &DocContext<'_, T>, post: &DocPosterior<T>) -> Vec<T> {
    let k = post.num_topics();
    let mut c = vec![T::zero(); k];
    for (r, &(_, count)) in ctx.bag.iter().enumerate() {
        let n = T::from_count(count as usize);
        for (ck, &e) in c.iter_mut().zip(post.eta_row(r)) {
            *ck = *ck + n * e;
        }
    }
    c
}

/// The θ-dependent part of the bound with ζ at its optimum:
/// `−τ/2 Σ(Σ_kk + μ_k²) + τ μᵀa + μᵀc − N log Σ exp(μ_k + Σ_kk/2) + ½ Σ log Σ_kk`.
pub fn doc_objective<T: Real>(ctx: &DocContext<'_, T>, mean: &[T], log_var: &[T], counts: &[T]) -> T {
    let half = T::lit(0.5);
    let mut f = T::zero();
    let mut shifted = Vec::with_capacity(mean.len());
    for k in 0..mean.len() {
        let s = log_var[k].exp();
        f = f - half * ctx.tau * (s + mean[k] * mean[k]) + ctx.tau * mean[k] * ctx.prior_mean[k] + mean[k] * counts[k]
            + half * log_var[k];
        shifted.push(mean[k] + half * s);
    }
    f - T::from_count(ctx.len) * log_sum_exp(&shifted)
}

/// Gradients with respect to `μ_k` and the variance `Σ_kk` at the posterior's
/// stored ζ.
pub fn doc_gradient<T: Real>(ctx: &DocContext<'_, T>, post: &DocPosterior<T>) -> (Vec<T>, Vec<T>) {
    let half = T::lit(0.5);
    let n = T::from_count(ctx.len);
    let counts = expected_topic_counts(ctx, post);
    let k = post.num_topics();
    let mut g_mean = Vec::with_capacity(k);
    let mut g_var = Vec::with_capacity(k);
    for t in 0..k {
        let s = post.var(t);
        let e = (post.mean[t] + half * s).exp() / post.zeta;
        g_mean.push(-ctx.tau * post.mean[t] + ctx.tau * ctx.prior_mean[t] + counts[t] - n * e);
        g_var.push(-half * ctx.tau - half * n * e + half / s);
    }
    (g_mean, g_var)
}

/// Preconditioned gradient ascent on `(μ, log Σ_kk)` with backtracking;
/// accepted steps never decrease [`doc_objective`]. Returns the number of
/// iterations taken.
pub fn optimize_doc_topic<T: Real>(
    ctx: &DocContext<'_, T>,
    post: &mut DocPosterior<T>,
    config: &EStepConfig<T>,
) -> std::result::Result<usize, String> {
    let half = T::lit(0.5);
    let n = T::from_count(ctx.len);
    let counts = expected_topic_counts(ctx, post);
    let k = post.num_topics();
    let mut iters = 0;
    for _ in 0..config.inner_steps {
        post.refresh_zeta();
        let f0 = doc_objective(ctx, &post.mean, &post.log_var, &counts);
        let (g_mean, g_var) = doc_gradient(ctx, post);
        let mut worst = T::zero();
        let mut dir_mean = Vec::with_capacity(k);
        let mut dir_lv = Vec::with_capacity(k);
        for t in 0..k {
            let s = post.var(t);
            let e = (post.mean[t] + half * s).exp() / post.zeta;
            let g_lv = s * g_var[t];
            if !g_mean[t].is_finite() || !g_lv.is_finite() {
                return Err(format!("non-finite gradient at topic {t}"));
            }
            worst = worst.max(g_mean[t].abs()).max(g_lv.abs());
            let h_mean = ctx.tau + n * e;
            let h_lv = s * (half * ctx.tau + half * n * e) + s * s * n * e * T::lit(0.25);
            dir_mean.push(g_mean[t] / h_mean);
            dir_lv.push(g_lv / h_lv.max(T::lit(0.5)));
        }
        if worst < config.tolerance {
            break;
        }
        iters += 1;
        let mut step = config.step_size;
        let mut accepted = false;
        while step > T::lit(MIN_STEP) {
            let cand_mean: Vec<T> = post.mean.iter().zip(&dir_mean).map(|(&m, &d)| m + step * d).collect();
            let cand_lv: Vec<T> = post.log_var.iter().zip(&dir_lv).map(|(&m, &d)| m + step * d).collect();
            let f1 = doc_objective(ctx, &cand_mean, &cand_lv, &counts);
            if f1.is_finite() && f1 >= f0 {
                post.mean = cand_mean;
                post.log_var = cand_lv;
                accepted = true;
                break;
            }
            step = step * config.backtrack;
        }
        if !accepted {
            break;
        }
    }
    post.refresh_zeta();
    Ok(iters)
}

/// `η_nk ∝ exp(μ_k + log β_{k,w_n})`, normalized in log space.
pub fn assign_words<T: Real>(post: &mut DocPosterior<T>, bag: &[(u32, u32)], beta: &TopicWordDist<T>) {
    let k = post.num_topics();
    let mut logits = vec![T::zero(); k];
    for (r, &(w, _)) in bag.iter().enumerate() {
        for t in 0..k {
            logits[t] = post.mean[t] + beta.log_prob(t, w as usize);
        }
        let lse = log_sum_exp(&logits);
        for t in 0..k {
            post.eta[r * k + t] = (logits[t] - lse).exp();
        }
    }
}

/// Runs the θ gradient ascent for document `d` against the current topic
/// and user blocks and returns the updated posterior.
pub fn update_doc_topic<T: Real>(
    state: &PosteriorState<T>,
    corpus: &Corpus,
    hyper: &HyperParams<T>,
    config: &EStepConfig<T>,
    d: usize,
) -> Result<DocPosterior<T>> {
    let doc = &corpus.documents()[d];
    let prior = topic_affinity(&state.topics.means, &state.users[doc.owner].mean);
    let ctx = DocContext { prior_mean: &prior, tau: hyper.tau, bag: doc.bag(), len: doc.len() };
    let mut post = state.docs[d].clone();
    optimize_doc_topic(&ctx, &mut post, config)
        .map_err(|msg| JnetError::NonFinite(format!("document {}: {msg}", doc.id)))?;
    Ok(post)
}

/// Closed-form η rows for document `d` given its current θ mean.
pub fn update_word_assignments<T: Real>(
    state: &PosteriorState<T>,
    corpus: &Corpus,
    beta: &TopicWordDist<T>,
    d: usize,
) -> Vec<T> {
    let mut post = state.docs[d].clone();
    assign_words(&mut post, corpus.documents()[d].bag(), beta);
    post.eta
}

#[cfg(test)]
use crate::model::zeta_of;

#[cfg(test)]
fn zeta_consistent<T: Real>(post: &DocPosterior<T>) -> bool {
    post.zeta == zeta_of(&post.mean, &post.log_var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::softmax;

    fn config() -> EStepConfig<f64> {
        EStepConfig { inner_steps: 500, tolerance: 1e-10, ..EStepConfig::default() }
    }

    #[test]
    fn zeta_at_zero_mean_and_vanishing_variance() {
        let d = DocPosterior::init(vec![0.0f64; 5], 1e300, 2);
        assert!((d.zeta - 5.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_beta_gives_softmax_of_mean() {
        let beta = TopicWordDist::<f64>::uniform(3, 4);
        let mut d = DocPosterior::init(vec![0.5, -1.0, 2.0], 1.0, 2);
        assign_words(&mut d, &[(1, 1), (3, 2)], &beta);
        let want = softmax(&d.mean).unwrap();
        for r in 0..2 {
            for (a, b) in d.eta_row(r).iter().zip(&want) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn likelihood_only_assignment() {
        // column for word 0 is [0.8, 0.2]
        let beta = TopicWordDist::from_counts(2, 2, vec![0.8f64, 0.2, 0.2, 0.8]);
        let mut d = DocPosterior::init(vec![0.0, 0.0], 1.0, 1);
        assign_words(&mut d, &[(0, 1)], &beta);
        assert!((d.eta_row(0)[0] - 0.8).abs() < 1e-9);
        assert!((d.eta_row(0)[1] - 0.2).abs() < 1e-9);
    }

    #[test]
    fn assignment_matches_exp_normalize_oracle() {
        let counts = vec![3.0f64, 1.0, 0.5, 2.0, 0.1, 4.0, 1.0, 1.0, 1.0, 0.2, 0.7, 5.0];
        let beta = TopicWordDist::from_counts(3, 4, counts);
        let mut d = DocPosterior::init(vec![0.3, -0.4, 1.1], 1.0, 3);
        let bag = [(0, 2), (2, 1), (3, 1)];
        assign_words(&mut d, &bag, &beta);
        for (r, &(w, _)) in bag.iter().enumerate() {
            let raw: Vec<f64> = (0..3).map(|k| d.mean[k].exp() * beta.prob(k, w as usize)).collect();
            let z: f64 = raw.iter().sum();
            let row = d.eta_row(r);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for k in 0..3 {
                assert!((row[k] - raw[k] / z).abs() < 1e-14);
            }
        }
    }

    /// 1-D golden-section maximizer, used as an independent optimizer oracle.
    fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - r * (b - a);
            let d = a + r * (b - a);
            if f(c) > f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        (a + b) / 2.0
    }

    #[test]
    fn single_word_weak_prior_tracks_eta() {
        // K = 2, one word with η = [0.7, 0.3], τ → 0: the optimum over the
        // contrast μ_0 − μ_1 is found independently by golden section
        let tau = 1e-8;
        let prior = [0.0, 0.0];
        let bag = [(0u32, 1u32)];
        let ctx = DocContext { prior_mean: &prior, tau, bag: &bag, len: 1 };
        let mut post = DocPosterior::init(vec![0.0, 0.0], 1.0, 1);
        post.eta = vec![0.7, 0.3];
        post.log_var = vec![(1e-6f64).ln(); 2];
        let mut cfg = config();
        cfg.inner_steps = 5000;
        optimize_doc_topic(&ctx, &mut post, &cfg).unwrap();
        // variances move too, so the weights that match η are exp(μ_k + s_k/2)/ζ
        let shifted: Vec<f64> = (0..2).map(|k| post.mean[k] + 0.5 * post.var(k)).collect();
        let w = softmax(&shifted).unwrap();
        assert!((w[0] - 0.7).abs() < 1e-3, "{w:?}");

        // oracle: with variances held at s, maximize over x = μ_0 (μ_1 = 0)
        let s = post.log_var.iter().map(|v| v.exp()).collect::<Vec<_>>();
        let obj = |x: f64| 0.7 * x - ((x + s[0] / 2.0).exp() + (s[1] / 2.0).exp()).ln();
        let x = golden_max(obj, -10.0, 10.0);
        let contrast = post.mean[0] - post.mean[1];
        assert!((contrast - x).abs() < 5e-3, "contrast {contrast} vs oracle {x}");
    }

    #[test]
    fn gradient_matches_central_differences_of_local_objective() {
        let prior = [0.4f64, -0.3, 0.1];
        let bag = [(0u32, 2u32), (4, 1), (2, 3)];
        let ctx = DocContext { prior_mean: &prior, tau: 2.0, bag: &bag, len: 6 };
        let mut post = DocPosterior::init(vec![0.2, -0.5, 0.9], 2.0, 3);
        post.log_var = vec![-1.0, 0.3, -0.2];
        post.eta = vec![0.2, 0.5, 0.3, 0.1, 0.1, 0.8, 0.6, 0.3, 0.1];
        post.refresh_zeta();
        let counts = expected_topic_counts(&ctx, &post);
        let (gm, gv) = doc_gradient(&ctx, &post);
        let h = 1e-6;
        for k in 0..3 {
            let mut p = post.mean.clone();
            let mut m = post.mean.clone();
            p[k] += h;
            m[k] -= h;
            let fd = (doc_objective(&ctx, &p, &post.log_var, &counts) - doc_objective(&ctx, &m, &post.log_var, &counts)) / (2.0 * h);
            assert!((fd - gm[k]).abs() < 1e-6 * gm[k].abs().max(1.0), "mean {k}: {fd} vs {}", gm[k]);
            let s = post.var(k);
            let mut p = post.log_var.clone();
            let mut m = post.log_var.clone();
            p[k] = (s + h).ln();
            m[k] = (s - h).ln();
            let fd = (doc_objective(&ctx, &post.mean, &p, &counts) - doc_objective(&ctx, &post.mean, &m, &counts)) / (2.0 * h);
            assert!((fd - gv[k]).abs() < 1e-6 * gv[k].abs().max(1.0), "var {k}: {fd} vs {}", gv[k]);
        }
    }

    #[test]
    fn objective_never_decreases_and_zeta_is_refreshed() {
        let prior = [1.0, -2.0, 0.5, 0.0];
        let bag = [(0u32, 5u32), (1, 7)];
        let ctx = DocContext { prior_mean: &prior, tau: 0.5, bag: &bag, len: 12 };
        let mut post = DocPosterior::init(vec![3.0, -3.0, 0.0, 1.0], 0.5, 2);
        post.eta = vec![0.1, 0.2, 0.3, 0.4, 0.25, 0.25, 0.25, 0.25];
        let counts = expected_topic_counts(&ctx, &post);
        let mut last = doc_objective(&ctx, &post.mean, &post.log_var, &counts);
        let one = EStepConfig { inner_steps: 1, ..config() };
        for _ in 0..30 {
            optimize_doc_topic(&ctx, &mut post, &one).unwrap();
            let f = doc_objective(&ctx, &post.mean, &post.log_var, &counts);
            assert!(f >= last);
            last = f;
            assert!(zeta_consistent(&post));
        }
    }
}
