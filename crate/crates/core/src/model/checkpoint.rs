//! Checkpoint directory: `manifest.json` plus CSV matrices.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AffinityPosterior, DocPosterior, HyperParams, PairSet, PairStrategy, PairTerm, PosteriorState, TopicPosteriors, TopicWordDist, UserPosterior};
use crate::corpus::Corpus;
use crate::error::{JnetError, Result};
use crate::linalg::Mat;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub iterations: usize,
    pub final_elbo: f64,
    pub seed: u64,
}

/// Frozen posterior means and covariances, β, and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel<T> {
    pub hyper: HyperParams<T>,
    pub topic_means: Vec<Vec<T>>,
    pub topic_cov: Mat<T>,
    pub user_means: Vec<Vec<T>>,
    pub user_covs: Vec<Mat<T>>,
    pub beta: TopicWordDist<T>,
    pub doc_means: Vec<Vec<T>>,
    pub users: Vec<String>,
    pub vocabulary: Vec<String>,
    /// `(doc id, owner index)` aligned with `doc_means`
    pub documents: Vec<(String, usize)>,
    pub meta: TrainingMeta,
}

impl<T: Real> TrainedModel<T> {
    pub fn from_state(
        state: &PosteriorState<T>,
        beta: TopicWordDist<T>,
        hyper: HyperParams<T>,
        corpus: &Corpus,
        meta: TrainingMeta,
    ) -> Self {
        Self {
            hyper,
            topic_means: state.topics.means.clone(),
            topic_cov: state.topics.cov.clone(),
            user_means: state.users.iter().map(|u| u.mean.clone()).collect(),
            user_covs: state.users.iter().map(|u| u.cov.clone()).collect(),
            beta,
            doc_means: state.docs.iter().map(|d| d.mean.clone()).collect(),
            users: corpus.users.clone(),
            vocabulary: corpus.vocabulary.terms().to_vec(),
            documents: corpus.documents().iter().map(|d| (d.id.clone(), d.owner)).collect(),
            meta,
        }
    }

    pub fn num_users(&self) -> usize {
        self.user_means.len()
    }

    pub fn num_topics(&self) -> usize {
        self.topic_means.len()
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.users.iter().position(|u| u == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub num_topics: usize,
    pub dim: usize,
    pub vocab_size: usize,
    pub num_users: usize,
    pub num_documents: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub xi: f64,
    pub iterations: usize,
    pub final_elbo: f64,
    pub seed: u64,
    pub scalar: String,
    /// whether the full variational state (`state/`) was saved too
    pub has_state: bool,
}

fn fmt<T: Real>(x: T) -> String {
    // 17 significant digits round-trips every f64
    format!("{:.16e}", x.as_f64())
}

fn write_rows<'a, T: Real>(path: &Path, rows: impl IntoIterator<Item = &'a [T]>) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&x| fmt(x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| JnetError::io(path, e))
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut out = String::new();
    for l in lines {
        out.push_str(&l);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| JnetError::io(path, e))
}

fn corrupt(file: &str, msg: impl Into<String>) -> JnetError {
    JnetError::Checkpoint { file: file.to_string(), msg: msg.into() }
}

fn read_text(dir: &Path, name: &str) -> Result<String> {
    let p = dir.join(name);
    fs::read_to_string(&p).map_err(|e| JnetError::io(p, e))
}

fn read_rows<T: Real>(dir: &Path, name: &str, width: Option<usize>) -> Result<Vec<Vec<T>>> {
    let text = read_text(dir, name)?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            rows.push(Vec::new());
            continue;
        }
        let row = line
            .split(',')
            .map(|c| c.trim().parse::<f64>().map(T::lit))
            .collect::<std::result::Result<Vec<T>, _>>()
            .map_err(|e| corrupt(name, format!("line {}: {e}", n + 1)))?;
        if let Some(w) = width {
            if row.len() != w {
                return Err(corrupt(name, format!("line {}: expected {w} columns, found {}", n + 1, row.len())));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

fn expect_rows<T>(name: &str, rows: Vec<Vec<T>>, n: usize) -> Result<Vec<Vec<T>>> {
    if rows.len() != n {
        return Err(corrupt(name, format!("expected {n} rows, found {}", rows.len())));
    }
    Ok(rows)
}

/// Writes a checkpoint; `state` additionally saves every variational
/// parameter under `state/` so the posterior can be restored exactly.
pub fn write_checkpoint<T: Real>(dir: &Path, model: &TrainedModel<T>, state: Option<&PosteriorState<T>>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| JnetError::io(dir, e))?;
    let h = &model.hyper;
    let manifest = Manifest {
        num_topics: h.num_topics,
        dim: h.dim,
        vocab_size: h.vocab_size,
        num_users: model.num_users(),
        num_documents: model.doc_means.len(),
        alpha: h.alpha.as_f64(),
        gamma: h.gamma.as_f64(),
        tau: h.tau.as_f64(),
        xi: h.xi.as_f64(),
        iterations: model.meta.iterations,
        final_elbo: model.meta.final_elbo,
        seed: model.meta.seed,
        scalar: std::any::type_name::<T>().to_string(),
        has_state: state.is_some(),
    };
    let mp = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mp, json + "\n").map_err(|e| JnetError::io(mp, e))?;

    write_rows(&dir.join("topic_means.csv"), model.topic_means.iter().map(Vec::as_slice))?;
    write_rows(&dir.join("topic_cov.csv"), (0..h.dim).map(|r| model.topic_cov.row(r)))?;
    write_rows(&dir.join("user_means.csv"), model.user_means.iter().map(Vec::as_slice))?;
    write_rows(&dir.join("user_covs.csv"), model.user_covs.iter().flat_map(|c| (0..h.dim).map(move |r| c.row(r))))?;
    write_rows(&dir.join("beta.csv"), (0..h.num_topics).map(|k| model.beta.row(k)))?;
    write_rows(&dir.join("doc_means.csv"), model.doc_means.iter().map(Vec::as_slice))?;
    write_lines(&dir.join("users.txt"), model.users.iter().cloned())?;
    write_lines(&dir.join("vocab.txt"), model.vocabulary.iter().cloned())?;
    write_lines(
        &dir.join("documents.tsv"),
        model.documents.iter().map(|(id, owner)| format!("{id}\t{}", model.users[*owner])),
    )?;

    if let Some(st) = state {
        let sd = dir.join("state");
        fs::create_dir_all(&sd).map_err(|e| JnetError::io(&sd, e))?;
        write_rows(&sd.join("doc_log_vars.csv"), st.docs.iter().map(|d| d.log_var.as_slice()))?;
        write_rows(&sd.join("eta.csv"), st.docs.iter().map(|d| d.eta.as_slice()))?;
        let strategy = serde_json::to_string(&st.pairs.strategy()).expect("strategy serializes");
        let sp = sd.join("pair_strategy.json");
        fs::write(&sp, strategy).map_err(|e| JnetError::io(sp, e))?;
        let mut aff = String::new();
        for t in &st.pairs.terms {
            let _ = writeln!(aff, "{},{},{},{},{},{}", t.i, t.j, u8::from(t.edge), fmt(t.weight), fmt(t.post.mean), fmt(t.post.log_sd));
        }
        let ap = sd.join("affinities.csv");
        fs::write(&ap, aff).map_err(|e| JnetError::io(ap, e))?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = read_text(dir, "manifest.json")?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| corrupt("manifest.json", e.to_string()))?;
    if m.num_topics == 0 || m.dim == 0 || m.vocab_size == 0 {
        return Err(corrupt("manifest.json", "zero dimension"));
    }
    Ok(m)
}

/// Loads a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint<T: Real>(dir: &Path) -> Result<TrainedModel<T>> {
    let m = read_manifest(dir)?;
    let (k, dim, v, u) = (m.num_topics, m.dim, m.vocab_size, m.num_users);
    let topic_means = expect_rows("topic_means.csv", read_rows(dir, "topic_means.csv", Some(dim))?, k)?;
    let topic_cov = expect_rows("topic_cov.csv", read_rows::<T>(dir, "topic_cov.csv", Some(dim))?, dim)?;
    let topic_cov = Mat::from_rows(dim, dim, topic_cov.concat());
    let user_means = expect_rows("user_means.csv", read_rows(dir, "user_means.csv", Some(dim))?, u)?;
    let cov_rows = expect_rows("user_covs.csv", read_rows::<T>(dir, "user_covs.csv", Some(dim))?, u * dim)?;
    let user_covs = cov_rows.chunks(dim.max(1)).map(|c| Mat::from_rows(dim, dim, c.concat())).collect();
    let beta_rows = expect_rows("beta.csv", read_rows::<T>(dir, "beta.csv", Some(v))?, k)?;
    let beta = TopicWordDist::from_probs(k, v, beta_rows.concat());
    let doc_means = expect_rows("doc_means.csv", read_rows(dir, "doc_means.csv", Some(k))?, m.num_documents)?;

    let users: Vec<String> = read_text(dir, "users.txt")?.lines().map(String::from).collect();
    if users.len() != u {
        return Err(corrupt("users.txt", format!("expected {u} users, found {}", users.len())));
    }
    let vocabulary: Vec<String> = read_text(dir, "vocab.txt")?.lines().map(String::from).collect();
    if vocabulary.len() != v {
        return Err(corrupt("vocab.txt", format!("expected {v} terms, found {}", vocabulary.len())));
    }
    let mut documents = Vec::with_capacity(m.num_documents);
    for (n, line) in read_text(dir, "documents.tsv")?.lines().enumerate() {
        let (id, owner) = line.split_once('\t').ok_or_else(|| corrupt("documents.tsv", format!("line {}", n + 1)))?;
        let owner = users
            .iter()
            .position(|x| x == owner)
            .ok_or_else(|| corrupt("documents.tsv", format!("line {}: unknown user {owner}", n + 1)))?;
        documents.push((id.to_string(), owner));
    }
    if documents.len() != m.num_documents {
        return Err(corrupt("documents.tsv", "document count does not match manifest"));
    }

    let hyper = HyperParams {
        alpha: T::lit(m.alpha),
        gamma: T::lit(m.gamma),
        tau: T::lit(m.tau),
        xi: T::lit(m.xi),
        num_topics: k,
        dim,
        vocab_size: v,
    };
    hyper.validate().map_err(|e| corrupt("manifest.json", e.to_string()))?;
    Ok(TrainedModel {
        hyper,
        topic_means,
        topic_cov,
        user_means,
        user_covs,
        beta,
        doc_means,
        users,
        vocabulary,
        documents,
        meta: TrainingMeta { iterations: m.iterations, final_elbo: m.final_elbo, seed: m.seed },
    })
}

/// Restores the full posterior saved alongside a checkpoint. ζ and ε are
/// recomputed from their defining equalities.
pub fn read_state<T: Real>(dir: &Path) -> Result<PosteriorState<T>> {
    let model: TrainedModel<T> = read_checkpoint(dir)?;
    let sd = dir.join("state");
    let k = model.num_topics();
    let log_vars = expect_rows("doc_log_vars.csv", read_rows::<T>(&sd, "doc_log_vars.csv", Some(k))?, model.doc_means.len())?;
    let etas = expect_rows("eta.csv", read_rows::<T>(&sd, "eta.csv", None)?, model.doc_means.len())?;
    let docs = model
        .doc_means
        .iter()
        .zip(log_vars)
        .zip(etas)
        .map(|((mean, log_var), eta)| {
            let mut d = DocPosterior { mean: mean.clone(), log_var, eta, zeta: T::one() };
            d.refresh_zeta();
            d
        })
        .collect();
    let strategy: PairStrategy = serde_json::from_str(&read_text(&sd, "pair_strategy.json")?)
        .map_err(|e| corrupt("pair_strategy.json", e.to_string()))?;
    let mut terms = Vec::new();
    for (n, line) in read_text(&sd, "affinities.csv")?.lines().enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || corrupt("affinities.csv", format!("line {}", n + 1));
        if f.len() != 6 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map(T::lit).map_err(|_| bad());
        let mut post = AffinityPosterior { mean: num(f[4])?, log_sd: num(f[5])?, epsilon: T::one() };
        post.refresh_epsilon();
        terms.push(PairTerm {
            i: f[0].parse().map_err(|_| bad())?,
            j: f[1].parse().map_err(|_| bad())?,
            edge: f[2] == "1",
            weight: num(f[3])?,
            post,
        });
    }
    let pairs = PairSet::from_terms(strategy, model.num_users(), terms)?;
    Ok(PosteriorState {
        topics: TopicPosteriors { means: model.topic_means, cov: model.topic_cov },
        users: model
            .user_means
            .into_iter()
            .zip(model.user_covs)
            .map(|(mean, cov)| UserPosterior { mean, cov })
            .collect(),
        docs,
        pairs,
    })
}
