//! Posterior parameter blocks, hyperparameters, and the softmax/logistic links.

mod checkpoint;
mod pairs;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{JnetError, Result};
use crate::linalg::Mat;
use crate::scalar::{dot, Real};

pub use checkpoint::{read_checkpoint, read_manifest, read_state, write_checkpoint, Manifest, TrainedModel, TrainingMeta};
pub use pairs::{PairSet, PairStrategy, PairTerm};

/// Pseudocount added to every β entry before row normalization.
pub const BETA_SMOOTHING: f64 = 1e-10;

/// Standard deviation of the random initial user and topic means.
pub const INIT_STDDEV: f64 = 0.1;

/// Prior precisions and structural constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams<T> {
    /// topic-embedding prior precision
    pub alpha: T,
    /// user-embedding prior precision
    pub gamma: T,
    /// document-proportion precision
    pub tau: T,
    /// affinity standard deviation
    pub xi: T,
    pub num_topics: usize,
    pub dim: usize,
    pub vocab_size: usize,
}

impl<T: Real> HyperParams<T> {
    pub fn new(num_topics: usize, dim: usize, vocab_size: usize) -> Self {
        Self { alpha: T::one(), gamma: T::one(), tau: T::one(), xi: T::one(), num_topics, dim, vocab_size }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("gamma", self.gamma), ("tau", self.tau), ("xi", self.xi)] {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(JnetError::Invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [("topics", self.num_topics), ("dim", self.dim), ("vocabulary size", self.vocab_size)] {
            if v == 0 {
                return Err(JnetError::Invalid(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Softmax with max-subtraction.
pub fn softmax<T: Real>(v: &[T]) -> Result<Vec<T>> {
    if v.iter().any(|x| x.is_nan()) {
        return Err(JnetError::NonFinite("softmax input contains NaN".into()));
    }
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = v.iter().map(|&x| (x - max).exp()).collect();
    let total: T = e.iter().copied().sum();
    Ok(e.into_iter().map(|x| x / total).collect())
}

/// `1 / (1 + exp(-x))`, evaluated without overflow.
pub fn logistic<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + exp(x))`
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Shared covariance and per-topic means of q(φ_k).
#[derive(Debug, Clone, PartialEq)]
pub struct TopicPosteriors<T> {
    pub means: Vec<Vec<T>>,
    pub cov: Mat<T>,
}

/// One topic's view: its mean and the covariance every topic shares.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicPosterior<T> {
    pub mean: Vec<T>,
    pub cov: Mat<T>,
}

impl<T: Real> TopicPosteriors<T> {
    pub fn num_topics(&self) -> usize {
        self.means.len()
    }

    /// `E[φ_k φ_kᵀ] = Σ + μ_k μ_kᵀ`
    pub fn second_moment(&self, k: usize) -> Mat<T> {
        let mut m = self.cov.clone();
        m.add_outer(&self.means[k], T::one());
        m
    }

    /// `Σ_k E[φ_k φ_kᵀ]`
    pub fn second_moment_sum(&self) -> Mat<T> {
        let mut m = self.cov.clone();
        m.scale(T::from_count(self.means.len()));
        for mu in &self.means {
            m.add_outer(mu, T::one());
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserPosterior<T> {
    pub mean: Vec<T>,
    pub cov: Mat<T>,
}

impl<T: Real> UserPosterior<T> {
    /// `E[u uᵀ] = Σ + μ μᵀ`
    pub fn second_moment(&self) -> Mat<T> {
        let mut m = self.cov.clone();
        m.add_outer(&self.mean, T::one());
        m
    }
}

/// q(θ_id) with diagonal covariance, q(z) rows, and the ζ bound parameter.
///
/// Variances are stored as logarithms. `eta` holds one row per distinct
/// term of the document (in [`Document::bag`](crate::corpus::Document::bag)
/// order), shared by every occurrence of that term.
#[derive(Debug, Clone, PartialEq)]
pub struct DocPosterior<T> {
    pub mean: Vec<T>,
    pub log_var: Vec<T>,
    pub eta: Vec<T>,
    pub zeta: T,
}

impl<T: Real> DocPosterior<T> {
    /// Prior-centred initialization: given mean, variance `1/tau`, uniform η.
    pub fn init(mean: Vec<T>, tau: T, distinct_terms: usize) -> Self {
        let k = mean.len();
        let log_var = vec![-tau.ln(); k];
        let eta = vec![T::one() / T::from_count(k); k * distinct_terms];
        let mut d = Self { mean, log_var, eta, zeta: T::one() };
        d.refresh_zeta();
        d
    }

    pub fn num_topics(&self) -> usize {
        self.mean.len()
    }

    pub fn var(&self, k: usize) -> T {
        self.log_var[k].exp()
    }

    pub fn eta_row(&self, r: usize) -> &[T] {
        let k = self.mean.len();
        &self.eta[r * k..(r + 1) * k]
    }

    /// `ζ = Σ_k exp(μ_k + Σ_kk / 2)`
    pub fn refresh_zeta(&mut self) {
        self.zeta = zeta_of(&self.mean, &self.log_var);
    }
}

pub(crate) fn zeta_of<T: Real>(mean: &[T], log_var: &[T]) -> T {
    let half = T::lit(0.5);
    mean.iter().zip(log_var).map(|(&m, &lv)| (m + half * lv.exp()).exp()).sum()
}

/// q(δ_ij) with log standard deviation and the ε bound parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinityPosterior<T> {
    pub mean: T,
    pub log_sd: T,
    pub epsilon: T,
}

impl<T: Real> AffinityPosterior<T> {
    pub fn new(mean: T, sd: T) -> Self {
        let mut a = Self { mean, log_sd: sd.ln(), epsilon: T::one() };
        a.refresh_epsilon();
        a
    }

    pub fn sd(&self) -> T {
        self.log_sd.exp()
    }

    /// `μ + σ²/2`, the log of `E[exp δ]`.
    pub fn log_mean_exp(&self) -> T {
        self.mean + T::lit(0.5) * (T::lit(2.0) * self.log_sd).exp()
    }

    /// `ε = 1 + exp(μ + σ²/2)`
    pub fn refresh_epsilon(&mut self) {
        self.epsilon = T::one() + self.log_mean_exp().exp();
    }
}

/// Topic-word distributions, one simplex row per topic.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicWordDist<T> {
    num_topics: usize,
    vocab_size: usize,
    probs: Vec<T>,
    log_probs: Vec<T>,
}

impl<T: Real> TopicWordDist<T> {
    pub fn uniform(num_topics: usize, vocab_size: usize) -> Self {
        let p = T::one() / T::from_count(vocab_size);
        Self::from_probs(num_topics, vocab_size, vec![p; num_topics * vocab_size])
    }

    /// Adds the smoothing pseudocount to non-negative weights and
    /// normalizes each row.
    pub fn from_counts(num_topics: usize, vocab_size: usize, mut counts: Vec<T>) -> Self {
        assert_eq!(counts.len(), num_topics * vocab_size);
        let eps = T::lit(BETA_SMOOTHING);
        for row in counts.chunks_mut(vocab_size) {
            let total: T = row.iter().map(|&c| c + eps).sum();
            for c in row.iter_mut() {
                *c = (*c + eps) / total;
            }
        }
        Self::from_probs(num_topics, vocab_size, counts)
    }

    fn from_probs(num_topics: usize, vocab_size: usize, probs: Vec<T>) -> Self {
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Self { num_topics, vocab_size, probs, log_probs }
    }

    pub fn num_topics(&self) -> usize {
        self.num_topics
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    #[inline]
    pub fn prob(&self, k: usize, v: usize) -> T {
        self.probs[k * self.vocab_size + v]
    }

    #[inline]
    pub fn log_prob(&self, k: usize, v: usize) -> T {
        self.log_probs[k * self.vocab_size + v]
    }

    pub fn row(&self, k: usize) -> &[T] {
        &self.probs[k * self.vocab_size..(k + 1) * self.vocab_size]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.probs
    }
}

/// All variational parameters of the factorized posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState<T> {
    pub topics: TopicPosteriors<T>,
    pub users: Vec<UserPosterior<T>>,
    pub docs: Vec<DocPosterior<T>>,
    pub pairs: PairSet<T>,
}

fn gaussian_vec<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize, sd: f64) -> Vec<T> {
    let normal = Normal::new(0.0, sd).expect("valid stddev");
    (0..n).map(|_| T::lit(normal.sample(rng))).collect()
}

impl<T: Real> PosteriorState<T>
where
    StandardNormal: Distribution<T>,
{
    /// Random means (stddev [`INIT_STDDEV`]), prior covariances, prior-centred
    /// documents, and affinities at `μ_iᵀμ_j` with stddev `ξ`.
    pub fn initialize<R: Rng + ?Sized>(
        corpus: &Corpus,
        hyper: &HyperParams<T>,
        strategy: PairStrategy,
        rng: &mut R,
    ) -> Result<Self> {
        hyper.validate()?;
        let (k, m) = (hyper.num_topics, hyper.dim);
        let topics = TopicPosteriors {
            means: (0..k).map(|_| gaussian_vec(rng, m, INIT_STDDEV)).collect(),
            cov: Mat::scaled_identity(m, hyper.alpha.recip()),
        };
        let users: Vec<UserPosterior<T>> = (0..corpus.num_users())
            .map(|_| UserPosterior { mean: gaussian_vec(rng, m, INIT_STDDEV), cov: Mat::scaled_identity(m, hyper.gamma.recip()) })
            .collect();
        let docs = corpus
            .documents()
            .iter()
            .map(|d| DocPosterior::init(vec![T::zero(); k], hyper.tau, d.bag().len()))
            .collect();
        let pairs = PairSet::build(&corpus.adjacency, strategy, &users, hyper.xi, rng)?;
        Ok(Self { topics, users, docs, pairs })
    }
}

impl<T: Real> PosteriorState<T> {
    pub fn topic(&self, k: usize) -> TopicPosterior<T> {
        TopicPosterior { mean: self.topics.means[k].clone(), cov: self.topics.cov.clone() }
    }
}

/// `Φ μ^(u_i)`: entry k is `μ^(φ_k)ᵀ μ^(u_i)`.
pub fn user_topic_affinity<T: Real>(state: &PosteriorState<T>, i: usize) -> Vec<T> {
    topic_affinity(&state.topics.means, &state.users[i].mean)
}

pub(crate) fn topic_affinity<T: Real>(topic_means: &[Vec<T>], user_mean: &[T]) -> Vec<T> {
    topic_means.iter().map(|phi| dot(phi, user_mean)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn softmax_examples() {
        let s = softmax(&[0.0, 0.0, 0.0]).unwrap();
        assert!(s.iter().all(|&p| (p - 1.0 / 3.0f64).abs() < 1e-15));
        let s = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((s[0] - 2.0 / 3.0).abs() < 1e-15 && (s[1] - 1.0 / 3.0).abs() < 1e-15);
        // direct evaluation: e^k / (e + e^2 + e^3)
        let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
        let want = [1f64.exp() / z, 2f64.exp() / z, 3f64.exp() / z];
        let s = softmax(&[1.0, 2.0, 3.0]).unwrap();
        for (a, b) in s.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((want[0] - 0.09003).abs() < 1e-5 && (want[2] - 0.66524).abs() < 1e-5);
        assert!(softmax(&[1.0, f64::NAN]).is_err());
        let big = softmax(&[1000.0f64, 1000.0]).unwrap();
        assert_eq!(big, vec![0.5, 0.5]);
    }

    #[test]
    fn logistic_examples() {
        assert_eq!(logistic(0.0f64), 0.5);
        assert!((logistic(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!((logistic(-(3f64.ln())) - 0.25).abs() < 1e-15);
        assert!(logistic(-800.0f64) >= 0.0 && logistic(800.0f64) <= 1.0);
        assert!((softplus(-800.0f64)).abs() < 1e-300 && (softplus(800.0f64) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn user_topic_affinity_scalar_case() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let corpus = crate::testutil::tiny_corpus(1, 0, 3);
        let hyper = HyperParams::<f64>::new(2, 1, 3);
        let mut st = PosteriorState::initialize(&corpus, &hyper, PairStrategy::AllPairs, &mut rng).unwrap();
        st.topics.means = vec![vec![2.0], vec![-1.0]];
        st.users[0].mean = vec![3.0];
        assert_eq!(user_topic_affinity(&st, 0), vec![6.0, -3.0]);
        st.users[0].mean = vec![0.0];
        assert_eq!(user_topic_affinity(&st, 0), vec![0.0, 0.0]);
    }

    #[test]
    fn user_topic_affinity_matches_matvec() {
        let phi = Mat::from_rows(3, 4, vec![0.3, -1.2, 0.5, 2.0, 1.1, 0.0, -0.7, 0.4, -0.2, 0.9, 1.5, -1.0]);
        let u = [0.5, -0.25, 2.0, 1.0];
        let means: Vec<Vec<f64>> = (0..3).map(|r| phi.row(r).to_vec()).collect();
        let got = topic_affinity(&means, &u);
        // explicit triple-free loop oracle
        for r in 0..3 {
            let mut s = 0.0;
            for c in 0..4 {
                s += phi[(r, c)] * u[c];
            }
            assert!((got[r] - s).abs() < 1e-15);
        }
    }

    #[test]
    fn beta_rows_are_simplexes_and_strictly_positive() {
        let b = TopicWordDist::from_counts(2, 3, vec![1.0f64, 0.0, 3.0, 0.0, 0.0, 0.0]);
        for k in 0..2 {
            let s: f64 = b.row(k).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(b.row(k).iter().all(|&p| p > 0.0));
        }
        assert!((b.prob(1, 2) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zeta_and_epsilon_definitions() {
        let d = DocPosterior::<f64>::init(vec![0.0; 4], 1e300, 1);
        assert!((d.zeta - 4.0).abs() < 1e-12);
        let a = AffinityPosterior::new(0.3f64, 0.5);
        assert_eq!(a.epsilon, 1.0 + (0.3f64 + 0.125).exp());
    }

    #[test]
    fn f32_links_work() {
        let s = softmax(&[1.0f32, 2.0, 3.0]).unwrap();
        assert!((s.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert_eq!(logistic(0.0f32), 0.5);
    }

    proptest! {
        #[test]
        fn softmax_is_shift_invariant_and_keeps_argmax(
            v in proptest::collection::vec(-30.0f64..30.0, 1..8),
            c in -100.0f64..100.0,
        ) {
            let a = softmax(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let b = softmax(&shifted).unwrap();
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert!(*x > 0.0);
            }
            let argmax = |w: &[f64]| w.iter().enumerate().max_by(|p, q| p.1.total_cmp(q.1)).unwrap().0;
            prop_assert_eq!(argmax(&a), argmax(&v));
        }

        #[test]
        fn logistic_reflection(x in -50.0f64..50.0) {
            prop_assert!((logistic(-x) - (1.0 - logistic(x))).abs() < 1e-15);
        }
    }
}
