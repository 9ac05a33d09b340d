//! M-step estimators and the outer EM loop.

use std::path::Path;
use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{JnetError, Result};
use crate::inference::{compute_elbo, e_step, write_trace, EStepConfig, SweepRecord};
use crate::model::{write_checkpoint, HyperParams, PosteriorState, TopicWordDist, TrainedModel, TrainingMeta, UserPosterior};
use crate::scalar::{dot, Real};

/// Lower bound applied to every estimated hyperparameter.
pub const HYPER_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig<T> {
    pub em_iters: usize,
    /// relative ELBO change that counts as converged
    pub tolerance: T,
    /// ξ and τ are re-estimated every this many EM iterations
    pub refresh_period: usize,
    pub seed: u64,
    /// worker threads; 0 uses the rayon default
    pub threads: usize,
    pub estep: EStepConfig<T>,
}

impl<T: Real> Default for TrainConfig<T> {
    fn default() -> Self {
        Self { em_iters: 100, tolerance: T::lit(1e-4), refresh_period: 5, seed: 0, threads: 0, estep: EStepConfig::default() }
    }
}

impl<T: Real> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.em_iters == 0 {
            return Err(JnetError::Invalid("EM iteration budget must be at least 1".into()));
        }
        if !(self.tolerance > T::zero()) {
            return Err(JnetError::Invalid(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.refresh_period == 0 {
            return Err(JnetError::Invalid("refresh period must be at least 1".into()));
        }
        self.estep.validate()
    }
}

fn floored<T: Real>(name: &str, v: T) -> T {
    let floor = T::lit(HYPER_FLOOR);
    if v.is_nan() || v < floor {
        log::warn!("{name} estimate {v} clamped to {HYPER_FLOOR:e}");
        floor
    } else {
        v
    }
}

fn precision_estimate<T: Real>(name: &str, dim: usize, blocks: impl Iterator<Item = T>, count: usize) -> Result<T> {
    let denom: T = blocks.sum();
    if !(denom > T::zero()) || !denom.is_finite() {
        return Err(JnetError::NonFinite(format!("{name} estimate has denominator {denom}")));
    }
    Ok(floored(name, T::from_count(count * dim) / denom))
}

/// `α = KM / Σ_k [tr Σ^(φ) + μ_kᵀμ_k]`
pub fn estimate_alpha<T: Real>(state: &PosteriorState<T>) -> Result<T> {
    let tr = state.topics.cov.trace();
    let m = state.topics.cov.rows();
    let blocks = state.topics.means.iter().map(|mu| tr + dot(mu, mu));
    precision_estimate("alpha", m, blocks, state.topics.num_topics())
}

/// `γ = UM / Σ_i [tr Σ^(u_i) + μ_iᵀμ_i]`
pub fn estimate_gamma<T: Real>(state: &PosteriorState<T>) -> Result<T> {
    let m = state.topics.cov.rows();
    let blocks = state.users.iter().map(|u| u.cov.trace() + dot(&u.mean, &u.mean));
    precision_estimate("gamma", m, blocks, state.users.len())
}

/// Expected topic-word counts from η, smoothed and row-normalized.
pub fn estimate_beta<T: Real>(state: &PosteriorState<T>, corpus: &Corpus) -> TopicWordDist<T> {
    let k = state.topics.num_topics();
    let v = corpus.vocab_size();
    let mut counts = vec![T::zero(); k * v];
    for (doc, post) in corpus.documents().iter().zip(&state.docs) {
        for (r, &(w, c)) in doc.bag().iter().enumerate() {
            let c = T::from_count(c as usize);
            for (t, &eta) in post.eta_row(r).iter().enumerate() {
                counts[t * v + w as usize] = counts[t * v + w as usize] + c * eta;
            }
        }
    }
    TopicWordDist::from_counts(k, v, counts)
}

/// Closed-form ξ² and τ. Either keeps its current value when there is
/// nothing to estimate it from (no pairs, no documents).
pub fn estimate_xi_tau<T: Real>(state: &PosteriorState<T>, corpus: &Corpus, hyper: &HyperParams<T>) -> (T, T) {
    let two = T::lit(2.0);
    let moments: Vec<_> = state.users.iter().map(UserPosterior::second_moment).collect();

    let mut xi2 = hyper.xi * hyper.xi;
    if !state.pairs.is_empty() {
        let (mut num, mut den) = (T::zero(), T::zero());
        for t in &state.pairs.terms {
            let p = &t.post;
            let var = (p.log_sd + p.log_sd).exp();
            let cross = dot(&state.users[t.i].mean, &state.users[t.j].mean);
            let r = p.mean * p.mean + var - two * p.mean * cross + moments[t.i].frobenius(&moments[t.j]);
            num = num + t.weight * r;
            den = den + t.weight;
        }
        xi2 = floored("xi^2", num / den);
    }

    let mut tau = hyper.tau;
    if corpus.num_documents() > 0 {
        let s_phi = state.topics.second_moment_sum();
        let user_cross: Vec<T> = moments.iter().map(|e| e.frobenius(&s_phi)).collect();
        let mut total = T::zero();
        for (doc, post) in corpus.documents().iter().zip(&state.docs) {
            let u = &state.users[doc.owner].mean;
            let mut r = user_cross[doc.owner];
            for (t, phi) in state.topics.means.iter().enumerate() {
                let mu = post.mean[t];
                r = r + post.var(t) + mu * mu - two * mu * dot(phi, u);
            }
            total = total + r;
        }
        let k = state.topics.num_topics();
        let inv = floored("1/tau", total / T::from_count(k * corpus.num_documents()));
        tau = inv.recip();
    }
    (xi2, tau)
}

/// β seeded from the word counts of one random document per topic plus
/// uniform noise, which breaks the symmetry between topics.
pub fn initial_beta<T: Real, R: Rng + ?Sized>(corpus: &Corpus, num_topics: usize, rng: &mut R) -> TopicWordDist<T> {
    let v = corpus.vocab_size();
    let mut counts: Vec<T> = (0..num_topics * v).map(|_| T::lit(rng.random::<f64>())).collect();
    let d = corpus.num_documents();
    if d > 0 {
        let picks: Vec<usize> = if d >= num_topics {
            index::sample(rng, d, num_topics).into_vec()
        } else {
            (0..num_topics).map(|_| rng.random_range(0..d)).collect()
        };
        for (t, &doc) in picks.iter().enumerate() {
            for &(w, c) in corpus.documents()[doc].bag() {
                counts[t * v + w as usize] = counts[t * v + w as usize] + T::from_count(c as usize);
            }
        }
    }
    TopicWordDist::from_counts(num_topics, v, counts)
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct TrainOutput<T> {
    pub model: TrainedModel<T>,
    pub state: PosteriorState<T>,
    pub hyper: HyperParams<T>,
    /// ELBO after each EM iteration's M-step
    pub trace: Vec<SweepRecord>,
}

impl<T: Real> TrainOutput<T> {
    /// Writes the checkpoint (with full state) and `trace.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_checkpoint(dir, &self.model, Some(&self.state))?;
        write_trace(&dir.join("trace.csv"), &self.trace)
    }
}

fn run_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| JnetError::Invalid(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// One M-step: α, γ, β always, ξ and τ when `refresh` is set.
pub fn m_step<T: Real>(
    state: &PosteriorState<T>,
    corpus: &Corpus,
    hyper: &mut HyperParams<T>,
    refresh: bool,
) -> Result<TopicWordDist<T>> {
    hyper.alpha = estimate_alpha(state)?;
    hyper.gamma = estimate_gamma(state)?;
    if refresh {
        let (xi2, tau) = estimate_xi_tau(state, corpus, hyper);
        hyper.xi = xi2.sqrt();
        hyper.tau = tau;
    }
    Ok(estimate_beta(state, corpus))
}

/// Variational EM from the given starting hyperparameters.
pub fn train<T: Real>(corpus: &Corpus, hyper: &HyperParams<T>, config: &TrainConfig<T>) -> Result<TrainOutput<T>>
where
    StandardNormal: Distribution<T>,
{
    config.validate()?;
    hyper.validate()?;
    if hyper.vocab_size != corpus.vocab_size() {
        return Err(JnetError::Invalid(format!(
            "hyperparameters expect V={}, corpus has {}",
            hyper.vocab_size,
            corpus.vocab_size()
        )));
    }
    run_pool(config.threads, || train_in_pool(corpus, *hyper, config))?
}

fn train_in_pool<T: Real>(corpus: &Corpus, mut hyper: HyperParams<T>, config: &TrainConfig<T>) -> Result<TrainOutput<T>>
where
    StandardNormal: Distribution<T>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = PosteriorState::initialize(corpus, &hyper, config.estep.pair_strategy, &mut rng)?;
    let mut beta = initial_beta(corpus, hyper.num_topics, &mut rng);
    let mut trace = Vec::with_capacity(config.em_iters);
    let mut prev: Option<f64> = None;
    let mut iterations = 0;
    for it in 1..=config.em_iters {
        let start = Instant::now();
        let estep = EStepConfig { seed: config.seed.wrapping_add(it as u64), ..config.estep };
        e_step(&mut state, corpus, &hyper, &beta, &estep).map_err(|e| at_iteration(it, e))?;
        beta = m_step(&state, corpus, &mut hyper, it % config.refresh_period == 0).map_err(|e| at_iteration(it, e))?;
        let elbo = compute_elbo(&state, corpus, &hyper, &beta).map_err(|e| at_iteration(it, e))?.as_f64();
        let delta = prev.map_or(0.0, |p| elbo - p);
        trace.push(SweepRecord { sweep: it, elbo, delta, seconds: start.elapsed().as_secs_f64() });
        iterations = it;
        log::info!(
            "iteration {it}: elbo {elbo:.6} delta {delta:.3e} alpha {:.4} gamma {:.4} tau {:.4} xi {:.4}",
            hyper.alpha,
            hyper.gamma,
            hyper.tau,
            hyper.xi
        );
        if prev.is_some() && delta.abs() < config.tolerance.as_f64() * elbo.abs() {
            break;
        }
        prev = Some(elbo);
    }
    let final_elbo = trace.last().map_or(f64::NAN, |r| r.elbo);
    let meta = TrainingMeta { iterations, final_elbo, seed: config.seed };
    let model = TrainedModel::from_state(&state, beta, hyper, corpus, meta);
    Ok(TrainOutput { model, state, hyper, trace })
}

fn at_iteration(it: usize, e: JnetError) -> JnetError {
    match e {
        JnetError::NonFinite(msg) => JnetError::NonFinite(format!("EM iteration {it}: {msg}")),
        JnetError::Singular(msg) => JnetError::Singular(format!("EM iteration {it}: {msg}")),
        other => other,
    }
}
