//! Ancestral sampling from the generative model, and recovery scoring
//! against the latents that produced a corpus.

mod hungarian;

use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

pub use hungarian::hungarian;

use crate::corpus::{write_corpus, AdjacencySet, Corpus, Document, Vocabulary};
use crate::error::{JnetError, Result};
use crate::evaluation::auc;
use crate::linalg::Mat;
use crate::model::{logistic, softmax, write_checkpoint, HyperParams, TopicWordDist, TrainedModel, TrainingMeta};
use crate::scalar::{cosine, dot, Real};

/// A per-user or per-document count distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum CountDist {
    Fixed(usize),
    Poisson(f64),
}

impl CountDist {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match *self {
            CountDist::Fixed(n) => n,
            CountDist::Poisson(mean) => Poisson::new(mean).expect("validated mean").sample(rng) as usize,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        match *self {
            CountDist::Fixed(n) if n >= 1 => Ok(()),
            CountDist::Poisson(m) if m > 0.0 && m.is_finite() => Ok(()),
            _ => Err(JnetError::Invalid(format!("{name} must be at least 1 (or a positive Poisson mean)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_users: usize,
    pub num_topics: usize,
    pub dim: usize,
    pub vocab_size: usize,
    pub docs_per_user: CountDist,
    /// words per document; Poisson draws of zero are raised to one
    pub words_per_doc: CountDist,
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub xi: f64,
    /// symmetric Dirichlet concentration of the true topics
    pub beta_concentration: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_users: 50,
            num_topics: 3,
            dim: 2,
            vocab_size: 100,
            docs_per_user: CountDist::Fixed(10),
            words_per_doc: CountDist::Fixed(30),
            alpha: 1.0,
            gamma: 1.0,
            tau: 1.0,
            xi: 1.0,
            beta_concentration: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("users", self.num_users),
            ("topics", self.num_topics),
            ("dim", self.dim),
            ("vocabulary size", self.vocab_size),
        ] {
            if v == 0 {
                return Err(JnetError::Invalid(format!("{name} must be at least 1")));
            }
        }
        self.docs_per_user.validate("documents per user")?;
        self.words_per_doc.validate("words per document")?;
        for (name, v) in [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("tau", self.tau),
            ("xi", self.xi),
            ("beta concentration", self.beta_concentration),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(JnetError::Invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    pub fn hyper<T: Real>(&self) -> HyperParams<T> {
        HyperParams {
            alpha: T::lit(self.alpha),
            gamma: T::lit(self.gamma),
            tau: T::lit(self.tau),
            xi: T::lit(self.xi),
            num_topics: self.num_topics,
            dim: self.dim,
            vocab_size: self.vocab_size,
        }
    }
}

/// The sampled latent variables behind a synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<T> {
    pub topics: Vec<Vec<T>>,
    pub users: Vec<Vec<T>>,
    pub beta: TopicWordDist<T>,
    /// symmetric U×U affinities with a zero diagonal
    pub affinity: Mat<T>,
    pub edges: Vec<(usize, usize)>,
    pub theta: Vec<Vec<T>>,
    pub z: Vec<Vec<u32>>,
}

impl<T: Real> GroundTruth<T> {
    /// The truth as a model: point-mass posteriors at the true values.
    pub fn to_model(&self, corpus: &Corpus, hyper: HyperParams<T>) -> TrainedModel<T> {
        let m = hyper.dim;
        TrainedModel {
            hyper,
            topic_means: self.topics.clone(),
            topic_cov: Mat::zeros(m, m),
            user_means: self.users.clone(),
            user_covs: vec![Mat::zeros(m, m); self.users.len()],
            beta: self.beta.clone(),
            doc_means: self.theta.clone(),
            users: corpus.users.clone(),
            vocabulary: corpus.vocabulary.terms().to_vec(),
            documents: corpus.documents().iter().map(|d| (d.id.clone(), d.owner)).collect(),
            meta: TrainingMeta::default(),
        }
    }

    pub fn is_edge(&self, i: usize, j: usize) -> bool {
        self.edges.binary_search(&(i.min(j), i.max(j))).is_ok()
    }
}

fn gaussian_rows<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, sd: f64) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, sd).expect("positive stddev");
    (0..rows).map(|_| (0..cols).map(|_| normal.sample(rng)).collect()).collect()
}

fn dirichlet_row<R: Rng + ?Sized>(rng: &mut R, v: usize, conc: f64) -> Vec<f64> {
    let gamma = Gamma::new(conc, 1.0).expect("positive concentration");
    loop {
        let draws: Vec<f64> = (0..v).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|x| x / total).collect();
        }
    }
}

fn cast<T: Real>(rows: Vec<Vec<f64>>) -> Vec<Vec<T>> {
    rows.into_iter().map(|r| r.into_iter().map(T::lit).collect()).collect()
}

/// Samples a corpus and its latents. Draw order is fixed (β, Φ, U, pairs,
/// documents), so a spec and seed determine the output bit for bit.
pub fn generate<T: Real>(spec: &SynthSpec) -> Result<(Corpus, GroundTruth<T>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (u, k, m, v) = (spec.num_users, spec.num_topics, spec.dim, spec.vocab_size);

    let beta_rows: Vec<Vec<f64>> = (0..k).map(|_| dirichlet_row(&mut rng, v, spec.beta_concentration)).collect();
    let topics = gaussian_rows(&mut rng, k, m, spec.alpha.powf(-0.5));
    let users = gaussian_rows(&mut rng, u, m, spec.gamma.powf(-0.5));

    let mut affinity = Mat::zeros(u, u);
    let mut edges = Vec::new();
    for i in 0..u {
        for j in (i + 1)..u {
            let delta = Normal::new(dot(&users[i], &users[j]), spec.xi).expect("positive xi").sample(&mut rng);
            affinity[(i, j)] = delta;
            affinity[(j, i)] = delta;
            if Bernoulli::new(logistic(delta)).expect("probability").sample(&mut rng) {
                edges.push((i, j));
            }
        }
    }

    let word_dists: Vec<WeightedIndex<f64>> =
        beta_rows.iter().map(|r| WeightedIndex::new(r).expect("non-degenerate topic")).collect();
    let theta_noise = Normal::new(0.0, spec.tau.powf(-0.5)).expect("positive tau");
    let mut documents = Vec::new();
    let mut theta = Vec::new();
    let mut z = Vec::new();
    for (i, user) in users.iter().enumerate() {
        let prior: Vec<f64> = topics.iter().map(|phi| dot(phi, user)).collect();
        for d in 0..spec.docs_per_user.sample(&mut rng) {
            let th: Vec<f64> = prior.iter().map(|&p| p + theta_noise.sample(&mut rng)).collect();
            let pi = softmax(&th)?;
            let topic_dist = WeightedIndex::new(&pi).map_err(|e| JnetError::NonFinite(format!("topic proportions: {e}")))?;
            let n = spec.words_per_doc.sample(&mut rng).max(1);
            let mut zs = Vec::with_capacity(n);
            let mut tokens = Vec::with_capacity(n);
            for _ in 0..n {
                let t = topic_dist.sample(&mut rng);
                zs.push(t as u32);
                tokens.push(word_dists[t].sample(&mut rng) as u32);
            }
            documents.push(Document::new(i, format!("u{i}_d{d}"), tokens)?);
            theta.push(th);
            z.push(zs);
        }
    }

    let vocabulary = Vocabulary::from_terms((0..v).map(|w| format!("w{w}")).collect())?;
    let user_ids = (0..u).map(|i| format!("u{i}")).collect();
    let adjacency = AdjacencySet::from_edges(u, edges.iter().copied())?;
    let corpus = Corpus::new(vocabulary, user_ids, documents, adjacency)?;
    let truth = GroundTruth {
        topics: cast(topics),
        users: cast(users),
        beta: TopicWordDist::from_counts(k, v, beta_rows.into_iter().flatten().map(T::lit).collect()),
        affinity: Mat::from_rows(u, u, affinity.as_slice().iter().map(|&x| T::lit(x)).collect()),
        edges,
        theta: cast(theta),
        z,
    };
    Ok((corpus, truth))
}

/// Writes `docs.tsv`, `edges.tsv`, `users.txt`, and a `truth/` directory in
/// the checkpoint layout plus `affinity.csv`, `theta.csv` and `z.csv`.
pub fn write_synthetic<T: Real>(dir: &Path, spec: &SynthSpec, corpus: &Corpus, truth: &GroundTruth<T>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| JnetError::io(dir, e))?;
    write_corpus(corpus, &dir.join("docs.tsv"), &dir.join("edges.tsv"))?;
    let users: String = corpus.users.iter().map(|u| format!("{u}\n")).collect();
    let users_path = dir.join("users.txt");
    fs::write(&users_path, users).map_err(|e| JnetError::io(&users_path, e))?;

    let truth_dir = dir.join("truth");
    write_checkpoint(&truth_dir, &truth.to_model(corpus, spec.hyper()), None)?;
    let fmt_rows = |rows: &mut dyn Iterator<Item = Vec<String>>| -> String {
        rows.map(|r| r.join(",") + "\n").collect()
    };
    let f = |x: T| format!("{:.16e}", x.as_f64());
    let n = truth.affinity.rows();
    let files = [
        ("affinity.csv", fmt_rows(&mut (0..n).map(|r| truth.affinity.row(r).iter().map(|&x| f(x)).collect()))),
        ("theta.csv", fmt_rows(&mut truth.theta.iter().map(|r| r.iter().map(|&x| f(x)).collect()))),
        ("z.csv", fmt_rows(&mut truth.z.iter().map(|r| r.iter().map(|x| x.to_string()).collect()))),
    ];
    for (name, text) in files {
        let p = truth_dir.join(name);
        fs::write(&p, text).map_err(|e| JnetError::io(&p, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    /// mean matched cosine between true and learned β rows
    pub topic_cosine: f64,
    /// learned topic matched to each true topic
    pub matching: Vec<usize>,
    pub per_topic: Vec<f64>,
    /// AUC of `μ_iᵀμ_j` against true edges on the scored pairs
    pub link_auc: Option<f64>,
}

/// Compares a model with the truth: Hungarian-matched topic cosine, and
/// link AUC over `pairs` (labels from the true edges). The AUC is `None`
/// when the pairs hold only one class.
pub fn recovery_score<T: Real>(truth: &GroundTruth<T>, model: &TrainedModel<T>, pairs: &[(usize, usize)]) -> Result<RecoveryReport> {
    let (k, v) = (truth.beta.num_topics(), truth.beta.vocab_size());
    if model.beta.num_topics() != k || model.beta.vocab_size() != v {
        return Err(JnetError::Invalid(format!(
            "model β is {}×{}, truth is {k}×{v}",
            model.beta.num_topics(),
            model.beta.vocab_size()
        )));
    }
    if model.num_users() != truth.users.len() {
        return Err(JnetError::Invalid(format!("model has {} users, truth {}", model.num_users(), truth.users.len())));
    }
    let sim: Vec<Vec<f64>> = (0..k)
        .map(|a| {
            (0..k)
                .map(|b| cosine(truth.beta.row(a), model.beta.row(b)).map_or(0.0, |c| c.as_f64()))
                .collect()
        })
        .collect();
    let cost: Vec<Vec<f64>> = sim.iter().map(|r| r.iter().map(|s| -s).collect()).collect();
    let matching = hungarian(&cost);
    let per_topic: Vec<f64> = matching.iter().enumerate().map(|(a, &b)| sim[a][b]).collect();
    let topic_cosine = per_topic.iter().sum::<f64>() / k as f64;

    let mut scores = Vec::with_capacity(pairs.len());
    let mut labels = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs {
        if i >= model.num_users() || j >= model.num_users() || i == j {
            return Err(JnetError::Invalid(format!("bad scoring pair ({i}, {j})")));
        }
        scores.push(dot(&model.user_means[i], &model.user_means[j]).as_f64());
        labels.push(truth.is_edge(i, j));
    }
    Ok(RecoveryReport { topic_cosine, matching, per_topic, link_auc: auc(&scores, &labels) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SynthSpec {
        SynthSpec { num_users: 20, docs_per_user: CountDist::Fixed(3), words_per_doc: CountDist::Fixed(10), seed: 3, ..SynthSpec::default() }
    }

    #[test]
    fn generation_is_reproducible() {
        let (c1, t1) = generate::<f64>(&spec()).unwrap();
        let (c2, t2) = generate::<f64>(&spec()).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(c1.documents(), c2.documents());
        let (_, t3) = generate::<f64>(&SynthSpec { seed: 4, ..spec() }).unwrap();
        assert_ne!(t1.topics, t3.topics);
    }

    #[test]
    fn shapes_and_invariants() {
        let (corpus, truth) = generate::<f64>(&spec()).unwrap();
        assert_eq!(corpus.num_users(), 20);
        assert_eq!(corpus.num_documents(), 60);
        assert_eq!(truth.theta.len(), 60);
        assert!(corpus.documents().iter().all(|d| d.len() == 10));
        for k in 0..3 {
            assert!((truth.beta.row(k).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        for i in 0..20 {
            for j in 0..20 {
                assert_eq!(truth.affinity[(i, j)], truth.affinity[(j, i)]);
                assert_eq!(corpus.adjacency.contains(i, j), i != j && truth.is_edge(i, j));
            }
        }
    }

    #[test]
    fn vanishing_affinity_noise() {
        let (_, truth) = generate::<f64>(&SynthSpec { xi: 1e-12, ..spec() }).unwrap();
        for i in 0..20 {
            for j in (i + 1)..20 {
                assert!((truth.affinity[(i, j)] - dot(&truth.users[i], &truth.users[j])).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn vanishing_proportion_noise() {
        let (corpus, truth) = generate::<f64>(&SynthSpec { tau: 1e24, ..spec() }).unwrap();
        for (d, doc) in corpus.documents().iter().enumerate() {
            for (k, phi) in truth.topics.iter().enumerate() {
                assert!((truth.theta[d][k] - dot(phi, &truth.users[doc.owner])).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn edge_density_matches_expected_probability() {
        let (mut edges, mut expected, mut var) = (0.0, 0.0, 0.0);
        let mut pairs = 0.0;
        for seed in 0..50 {
            let (corpus, truth) = generate::<f64>(&SynthSpec { seed, num_users: 15, ..spec() }).unwrap();
            edges += corpus.adjacency.len() as f64;
            for i in 0..15 {
                for j in (i + 1)..15 {
                    let p = logistic(truth.affinity[(i, j)]);
                    expected += p;
                    var += p * (1.0 - p);
                    pairs += 1.0;
                }
            }
        }
        // conditional on δ the edge count is a sum of independent Bernoullis
        assert!((edges - expected).abs() <= 3.0 * var.sqrt(), "{edges} vs {expected} ({pairs} pairs)");
    }

    #[test]
    fn poisson_counts_and_validation() {
        let s = SynthSpec { docs_per_user: CountDist::Poisson(2.0), words_per_doc: CountDist::Poisson(5.0), ..spec() };
        let (corpus, _) = generate::<f64>(&s).unwrap();
        assert!(corpus.documents().iter().all(|d| !d.is_empty()));
        assert!(generate::<f64>(&SynthSpec { num_users: 0, ..spec() }).is_err());
        assert!(generate::<f64>(&SynthSpec { xi: 0.0, ..spec() }).is_err());
    }

    #[test]
    fn truth_recovers_itself_and_permutation_is_absorbed() {
        let (corpus, mut truth) = generate::<f64>(&spec()).unwrap();
        // noiseless labels: an edge exactly where the score is positive
        truth.edges = (0..20)
            .flat_map(|i| ((i + 1)..20).map(move |j| (i, j)))
            .filter(|&(i, j)| dot(&truth.users[i], &truth.users[j]) > 0.0)
            .collect();
        let model = truth.to_model(&corpus, spec().hyper());
        let pairs: Vec<_> = (0..20).flat_map(|i| ((i + 1)..20).map(move |j| (i, j))).collect();
        let r = recovery_score(&truth, &model, &pairs).unwrap();
        assert!((r.topic_cosine - 1.0).abs() < 1e-12);
        assert_eq!(r.link_auc, Some(1.0));

        let mut permuted = model.clone();
        let rows: Vec<f64> = [2, 0, 1].iter().flat_map(|&k| truth.beta.row(k).to_vec()).collect();
        permuted.beta = TopicWordDist::from_counts(3, 100, rows);
        let r = recovery_score(&truth, &permuted, &pairs).unwrap();
        assert!((r.topic_cosine - 1.0).abs() < 1e-9);
        assert_eq!(r.matching, vec![1, 2, 0]);
    }

    #[test]
    fn random_models_score_at_chance() {
        let (corpus, truth) = generate::<f64>(&SynthSpec { num_users: 40, ..spec() }).unwrap();
        let pairs: Vec<_> = (0..40).flat_map(|i| ((i + 1)..40).map(move |j| (i, j))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (mut cos, mut aucs) = (0.0, 0.0);
        let trials = 30;
        for _ in 0..trials {
            let mut model = truth.to_model(&corpus, spec().hyper());
            let rows: Vec<f64> = (0..3).flat_map(|_| dirichlet_row(&mut rng, 100, 0.1)).collect();
            model.beta = TopicWordDist::from_counts(3, 100, rows);
            model.user_means = gaussian_rows(&mut rng, 40, 2, 1.0);
            let r = recovery_score(&truth, &model, &pairs).unwrap();
            cos += r.topic_cosine;
            aucs += r.link_auc.unwrap();
        }
        // null distribution of the matched cosine, by brute-force matching
        // over all 3! assignments of independent random simplexes
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut null = 0.0;
        let draws = 400;
        for _ in 0..draws {
            let a: Vec<Vec<f64>> = (0..3).map(|_| dirichlet_row(&mut rng, 100, 0.1)).collect();
            let b: Vec<Vec<f64>> = (0..3).map(|_| dirichlet_row(&mut rng, 100, 0.1)).collect();
            let best = perms
                .iter()
                .map(|p| (0..3).map(|k| cosine(&a[k], &b[p[k]]).unwrap()).sum::<f64>() / 3.0)
                .fold(f64::NEG_INFINITY, f64::max);
            null += best;
        }
        let null = null / draws as f64;
        assert!((cos / trials as f64 - null).abs() < 0.05, "{} vs null {null}", cos / trials as f64);
        assert!((aucs / trials as f64 - 0.5).abs() < 0.05, "{}", aucs / trials as f64);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let (corpus, truth) = generate::<f64>(&spec()).unwrap();
        let mut model = truth.to_model(&corpus, spec().hyper());
        model.beta = TopicWordDist::uniform(2, 100);
        assert!(recovery_score(&truth, &model, &[]).is_err());
    }

    #[test]
    fn writes_corpus_and_truth() {
        let dir = tempfile::tempdir().unwrap();
        let (corpus, truth) = generate::<f64>(&spec()).unwrap();
        write_synthetic(dir.path(), &spec(), &corpus, &truth).unwrap();
        for f in ["docs.tsv", "edges.tsv", "users.txt", "truth/manifest.json", "truth/beta.csv", "truth/theta.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let back = crate::model::read_checkpoint::<f64>(&dir.path().join("truth")).unwrap();
        assert_eq!(back.topic_means, truth.topics);
    }
}
