//! The evidence lower bound, term by term.

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::Corpus;
use crate::error::{JnetError, Result};
use crate::linalg::{spd_log_det, Mat};
use crate::model::{topic_affinity, HyperParams, PosteriorState, TopicWordDist, UserPosterior};
use crate::scalar::{dot, Real};

/// Expected log joint split by factor, plus the entropy of q.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ElboTerms<T> {
    pub topic_prior: T,
    pub user_prior: T,
    pub affinity_prior: T,
    /// ε-bounded edge likelihood
    pub edge_likelihood: T,
    pub theta_prior: T,
    /// ζ-bounded topic-assignment term
    pub assignment: T,
    pub word: T,
    pub entropy: T,
}

impl<T: Real> ElboTerms<T> {
    pub fn total(&self) -> T {
        self.topic_prior
            + self.user_prior
            + self.affinity_prior
            + self.edge_likelihood
            + self.theta_prior
            + self.assignment
            + self.word
            + self.entropy
    }

    fn named(&self) -> [(&'static str, T); 8] {
        [
            ("topic prior", self.topic_prior),
            ("user prior", self.user_prior),
            ("affinity prior", self.affinity_prior),
            ("edge likelihood", self.edge_likelihood),
            ("theta prior", self.theta_prior),
            ("assignment", self.assignment),
            ("word", self.word),
            ("entropy", self.entropy),
        ]
    }
}

/// `E_q log N(x; 0, (1/prec) I)` for `x ~ N(mean, cov)` in `m` dimensions.
fn gaussian_prior<T: Real>(prec: T, mean: &[T], cov: &Mat<T>) -> T {
    let half = T::lit(0.5);
    let m = T::from_count(mean.len());
    half * m * (prec.ln() - T::TAU().ln()) - half * prec * (cov.trace() + dot(mean, mean))
}

/// `½ (m log 2πe + log det Σ)`
fn gaussian_entropy<T: Real>(cov: &Mat<T>) -> Result<T> {
    let m = T::from_count(cov.rows());
    Ok(T::lit(0.5) * (m * (T::TAU().ln() + T::one()) + spd_log_det(cov)?))
}

/// Per-document contributions: (θ prior, assignment, word, entropy of θ and η).
fn doc_terms<T: Real>(
    state: &PosteriorState<T>,
    corpus: &Corpus,
    hyper: &HyperParams<T>,
    beta: &TopicWordDist<T>,
    user_cross: &[T],
    d: usize,
) -> (T, T, T, T) {
    let half = T::lit(0.5);
    let doc = &corpus.documents()[d];
    let post = &state.docs[d];
    let k = post.num_topics();
    let kf = T::from_count(k);
    let tau = hyper.tau;
    let prior = topic_affinity(&state.topics.means, &state.users[doc.owner].mean);
    let n = T::from_count(doc.len());

    let mut theta_prior = half * kf * (tau.ln() - T::TAU().ln());
    let mut bound = T::zero();
    let mut ent = T::zero();
    for t in 0..k {
        let s = post.var(t);
        let mu = post.mean[t];
        theta_prior = theta_prior - half * tau * (s + mu * mu) + tau * mu * prior[t];
        bound = bound + (mu + half * s).exp();
        ent = ent + half * (T::TAU().ln() + T::one() + post.log_var[t]);
    }
    theta_prior = theta_prior - half * tau * user_cross[doc.owner];

    let mut assignment = -n * (bound / post.zeta - T::one() + post.zeta.ln());
    let mut word = T::zero();
    for (r, &(w, count)) in doc.bag().iter().enumerate() {
        let c = T::from_count(count as usize);
        for (t, &eta) in post.eta_row(r).iter().enumerate() {
            if eta > T::zero() {
                assignment = assignment + c * eta * post.mean[t];
                word = word + c * eta * beta.log_prob(t, w as usize);
                ent = ent - c * eta * eta.ln();
            }
        }
    }
    (theta_prior, assignment, word, ent)
}

/// Evaluates every bound term at the stored ζ and ε. Document and pair
/// contributions are computed in parallel and summed in a fixed order.
pub fn elbo_terms<T: Real>(
    state: &PosteriorState<T>,
    corpus: &Corpus,
    hyper: &HyperParams<T>,
    beta: &TopicWordDist<T>,
) -> Result<ElboTerms<T>> {
    let half = T::lit(0.5);
    let ln_2pi = T::TAU().ln();

    let topic_prior = state
        .topics
        .means
        .iter()
        .map(|mu| gaussian_prior(hyper.alpha, mu, &state.topics.cov))
        .sum();
    let user_prior = state.users.iter().map(|u| gaussian_prior(hyper.gamma, &u.mean, &u.cov)).sum();

    let mut entropy = T::from_count(state.topics.num_topics()) * gaussian_entropy(&state.topics.cov)?;
    for u in &state.users {
        entropy = entropy + gaussian_entropy(&u.cov)?;
    }

    let moments: Vec<Mat<T>> = state.users.par_iter().map(UserPosterior::second_moment).collect();
    let xi2 = hyper.xi * hyper.xi;
    let pair_parts: Vec<(T, T, T)> = state
        .pairs
        .terms
        .par_iter()
        .map(|term| {
            let p = &term.post;
            let var = (p.log_sd + p.log_sd).exp();
            let cross = dot(&state.users[term.i].mean, &state.users[term.j].mean);
            let resid = p.mean * p.mean + var - T::lit(2.0) * p.mean * cross + moments[term.i].frobenius(&moments[term.j]);
            let prior = -half * ln_2pi - hyper.xi.ln() - resid / (T::lit(2.0) * xi2);
            let e = if term.edge { p.mean } else { T::zero() };
            let lik = e - (T::one() + p.log_mean_exp().exp()) / p.epsilon + T::one() - p.epsilon.ln();
            let ent = half * (ln_2pi + T::one()) + p.log_sd;
            (term.weight * prior, term.weight * lik, term.weight * ent)
        })
        .collect();
    let (mut affinity_prior, mut edge_likelihood) = (T::zero(), T::zero());
    for (p, l, e) in pair_parts {
        affinity_prior = affinity_prior + p;
        edge_likelihood = edge_likelihood + l;
        entropy = entropy + e;
    }

    let s_phi = state.topics.second_moment_sum();
    let user_cross: Vec<T> = moments.par_iter().map(|e| e.frobenius(&s_phi)).collect();
    let doc_parts: Vec<(T, T, T, T)> = (0..corpus.num_documents())
        .into_par_iter()
        .map(|d| doc_terms(state, corpus, hyper, beta, &user_cross, d))
        .collect();
    let (mut theta_prior, mut assignment, mut word) = (T::zero(), T::zero(), T::zero());
    for (p, a, w, e) in doc_parts {
        theta_prior = theta_prior + p;
        assignment = assignment + a;
        word = word + w;
        entropy = entropy + e;
    }

    Ok(ElboTerms { topic_prior, user_prior, affinity_prior, edge_likelihood, theta_prior, assignment, word, entropy })
}

/// The bound's total value; a non-finite term is an error naming it.
pub fn compute_elbo<T: Real>(
    state: &PosteriorState<T>,
    corpus: &Corpus,
    hyper: &HyperParams<T>,
    beta: &TopicWordDist<T>,
) -> Result<T> {
    let terms = elbo_terms(state, corpus, hyper, beta)?;
    for (name, v) in terms.named() {
        if !v.is_finite() {
            return Err(JnetError::NonFinite(format!("ELBO term '{name}' is {v}")));
        }
    }
    Ok(terms.total())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{update_topics, update_users};
    use crate::model::{DocPosterior, PairStrategy};
    use crate::testutil::{random_corpus, tiny_corpus};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn state_for(corpus: &Corpus, hyper: &HyperParams<f64>, seed: u64) -> PosteriorState<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PosteriorState::initialize(corpus, hyper, PairStrategy::AllPairs, &mut rng).unwrap()
    }

    /// KL(N(μ, Σ) ‖ N(0, I/prec)) from the textbook formula.
    fn kl_to_isotropic(prec: f64, mean: &[f64], cov: &Mat<f64>) -> f64 {
        let m = mean.len() as f64;
        let logdet = spd_log_det(cov).unwrap();
        0.5 * (prec * cov.trace() + prec * mean.iter().map(|x| x * x).sum::<f64>() - m - m * prec.ln() - logdet)
    }

    #[test]
    fn no_data_elbo_is_minus_kl() {
        let corpus = tiny_corpus(1, 0, 4);
        let mut hyper = HyperParams::new(3, 2, 4);
        hyper.alpha = 2.5;
        hyper.gamma = 0.7;
        let beta = TopicWordDist::uniform(3, 4);
        let mut st = state_for(&corpus, &hyper, 1);
        // q equal to the prior
        for mu in &mut st.topics.means {
            mu.iter_mut().for_each(|x| *x = 0.0);
        }
        st.users[0].mean = vec![0.0, 0.0];
        assert!(compute_elbo(&st, &corpus, &hyper, &beta).unwrap().abs() < 1e-12);

        st.topics.means = vec![vec![0.3, -0.2], vec![1.0, 0.5], vec![0.0, -0.4]];
        st.topics.cov = Mat::from_rows(2, 2, vec![0.5, 0.1, 0.1, 0.3]);
        st.users[0].mean = vec![-0.6, 0.9];
        st.users[0].cov = Mat::from_rows(2, 2, vec![1.2, -0.3, -0.3, 0.8]);
        let want: f64 = -st.topics.means.iter().map(|m| kl_to_isotropic(2.5, m, &st.topics.cov)).sum::<f64>()
            - kl_to_isotropic(0.7, &st.users[0].mean, &st.users[0].cov);
        let got = compute_elbo(&st, &corpus, &hyper, &beta).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn epsilon_bound_holds_by_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mu: f64 = rng.random_range(-3.0..3.0);
            let sd: f64 = rng.random_range(0.05..1.5);
            let eps = 1.0 + (mu + 0.5 * sd * sd).exp();
            let normal = Normal::new(mu, sd).unwrap();
            let draws: Vec<f64> = (0..1000).map(|_| normal.sample(&mut rng)).collect();
            // per-draw gap: bound minus log(1 + e^δ), non-negative pointwise
            let gaps: Vec<f64> = draws.iter().map(|&d| (1.0 + d.exp()) / eps - 1.0 + eps.ln() - d.exp().ln_1p()).collect();
            let (mean, se) = mean_se(&gaps);
            assert!(mean >= -3.0 * se, "gap {mean} se {se}");
        }
    }

    #[test]
    fn zeta_bound_holds_by_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let k = rng.random_range(2..6);
            let mean: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let var: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..2.0)).collect();
            let zeta: f64 = mean.iter().zip(&var).map(|(m, v)| (m + 0.5 * v).exp()).sum();
            let expected: f64 = zeta;
            let gaps: Vec<f64> = (0..1000)
                .map(|_| {
                    let lse = mean
                        .iter()
                        .zip(&var)
                        .map(|(&m, &v)| (m + v.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal)).exp())
                        .sum::<f64>()
                        .ln();
                    expected / zeta - 1.0 + zeta.ln() - lse
                })
                .collect();
            let (m, se) = mean_se(&gaps);
            assert!(m >= -3.0 * se, "gap {m} se {se}");
        }
    }

    fn mean_se(x: &[f64]) -> (f64, f64) {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    fn small_instance() -> (Corpus, HyperParams<f64>, PosteriorState<f64>, TopicWordDist<f64>) {
        let corpus = random_corpus(4, 2, 10, 6, &[(0, 1), (1, 2), (0, 3)], 3);
        let hyper = HyperParams { alpha: 1.3, gamma: 0.8, tau: 1.7, xi: 0.9, num_topics: 3, dim: 2, vocab_size: 10 };
        let mut st = state_for(&corpus, &hyper, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (d, doc) in corpus.documents().iter().enumerate() {
            let mean = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut post = DocPosterior::init(mean, 1.7, doc.bag().len());
            for e in &mut post.eta {
                *e = rng.random_range(0.1..1.0);
            }
            for row in post.eta.chunks_mut(3) {
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|x| *x /= s);
            }
            st.docs[d] = post;
        }
        for term in &mut st.pairs.terms {
            term.post.mean = rng.random_range(-1.0..1.0);
            term.post.refresh_epsilon();
        }
        let counts: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..1.0)).collect();
        (corpus, hyper, st, TopicWordDist::from_counts(3, 10, counts))
    }

    fn fd_max(f: impl Fn(f64) -> f64) -> f64 {
        let h = 1e-5;
        (f(h) - f(-h)) / (2.0 * h)
    }

    #[test]
    fn topic_update_is_stationary() {
        let (corpus, hyper, mut st, beta) = small_instance();
        update_topics(&mut st, &corpus, &hyper).unwrap();
        for k in 0..3 {
            for m in 0..2 {
                let g = fd_max(|h| {
                    let mut s = st.clone();
                    s.topics.means[k][m] += h;
                    compute_elbo(&s, &corpus, &hyper, &beta).unwrap()
                });
                assert!(g.abs() < 1e-6, "topic {k} dim {m}: {g}");
            }
        }
    }

    #[test]
    fn user_update_is_stationary() {
        let (corpus, hyper, mut st, beta) = small_instance();
        update_topics(&mut st, &corpus, &hyper).unwrap();
        update_users(&mut st, &corpus, &hyper).unwrap();
        // the last user updated sees every other user at its final value
        let i = 3;
        for m in 0..2 {
            let g = fd_max(|h| {
                let mut s = st.clone();
                s.users[i].mean[m] += h;
                compute_elbo(&s, &corpus, &hyper, &beta).unwrap()
            });
            assert!(g.abs() < 1e-6, "user {i} dim {m}: {g}");
        }
    }

    #[test]
    fn non_finite_term_is_named() {
        let (corpus, hyper, mut st, beta) = small_instance();
        st.docs[0].mean[0] = f64::NAN;
        let err = compute_elbo(&st, &corpus, &hyper, &beta).unwrap_err().to_string();
        assert!(err.contains("theta prior") || err.contains("assignment"), "{err}");
    }
}
