//! Command-line front end: `train`, `eval`, `synth` and `export`.
//!
//! Exit codes: 0 on success, 1 on usage or input errors, 2 when a
//! numerical failure aborts the run. Every command writes the settings it
//! actually used to `run.json` beside its outputs.

mod eval;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::corpus::{load_corpus, Corpus, LoadOptions, Vocabulary};
use crate::error::{JnetError, Result};
use crate::learning::{train, TrainConfig, TrainOutput};
use crate::model::{read_checkpoint, HyperParams, PairStrategy};
use crate::synth::{generate, write_synthetic, CountDist, SynthSpec};

pub use eval::{EvalArgs, EvalMode, Holdout};

#[derive(Debug, Parser)]
#[command(name = "jnet", version, about = "Joint user-network and topic embedding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a document file and an edge file.
    Train(TrainArgs),
    /// Score a model on held-out text, links, expert queries or cold-start users.
    Eval(EvalArgs),
    /// Sample a synthetic corpus with known parameters.
    Synth(SynthArgs),
    /// Write user and topic embeddings as CSV.
    Export(ExportArgs),
}

/// `all_pairs` or `sampled:RATIO`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PairArg(pub PairStrategy);

impl FromStr for PairArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "all_pairs" {
            return Ok(Self(PairStrategy::AllPairs));
        }
        let ratio = s
            .strip_prefix("sampled:")
            .and_then(|r| r.parse::<f64>().ok())
            .ok_or_else(|| format!("expected all_pairs or sampled:RATIO, got {s}"))?;
        Ok(Self(PairStrategy::Sampled { ratio }))
    }
}

impl TryFrom<String> for PairArg {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl fmt::Display for PairArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            PairStrategy::AllPairs => write!(f, "all_pairs"),
            PairStrategy::Sampled { ratio } => write!(f, "sampled:{ratio}"),
        }
    }
}

impl From<PairArg> for String {
    fn from(p: PairArg) -> String {
        p.to_string()
    }
}

/// Model and optimizer settings shared by `train` and the retraining
/// evaluation protocols. Unset fields fall back to the `--config` file,
/// then to the defaults.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelArgs {
    /// number of topics K [default: 40]
    #[arg(long)]
    pub topics: Option<usize>,
    /// embedding dimension M [default: 10]
    #[arg(long)]
    pub dim: Option<usize>,
    /// EM iteration budget [default: 100]
    #[arg(long)]
    pub em_iters: Option<usize>,
    /// initial topic prior precision [default: 1]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// initial user prior precision [default: 1]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// initial document precision [default: 1]
    #[arg(long)]
    pub tau: Option<f64>,
    /// initial affinity standard deviation [default: 1]
    #[arg(long)]
    pub xi: Option<f64>,
    /// all_pairs or sampled:RATIO [default: all_pairs]
    #[arg(long)]
    pub pair_strategy: Option<PairArg>,
    /// keep this many terms by document frequency [default: all]
    #[arg(long)]
    pub max_features: Option<usize>,
    /// relative ELBO change that stops EM [default: 1e-4]
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// EM iterations between xi/tau updates [default: 5]
    #[arg(long)]
    pub refresh_period: Option<usize>,
    /// inner gradient steps per document or pair [default: 50]
    #[arg(long)]
    pub inner_steps: Option<usize>,
    /// E-step sweeps per EM iteration [default: 1]
    #[arg(long)]
    pub estep_sweeps: Option<usize>,
}

impl ModelArgs {
    fn overlay(self, base: ModelArgs) -> ModelArgs {
        ModelArgs {
            topics: self.topics.or(base.topics),
            dim: self.dim.or(base.dim),
            em_iters: self.em_iters.or(base.em_iters),
            alpha: self.alpha.or(base.alpha),
            gamma: self.gamma.or(base.gamma),
            tau: self.tau.or(base.tau),
            xi: self.xi.or(base.xi),
            pair_strategy: self.pair_strategy.or(base.pair_strategy),
            max_features: self.max_features.or(base.max_features),
            tolerance: self.tolerance.or(base.tolerance),
            refresh_period: self.refresh_period.or(base.refresh_period),
            inner_steps: self.inner_steps.or(base.inner_steps),
            estep_sweeps: self.estep_sweeps.or(base.estep_sweeps),
        }
    }

    /// Applies `config` under the flags and fills in defaults.
    fn resolve(self, config: Option<&Path>) -> Result<Settings> {
        let merged = match config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| JnetError::io(path, e))?;
                let file: ModelArgs = serde_json::from_str(&text).map_err(|e| JnetError::Parse {
                    file: path.display().to_string(),
                    line: e.line(),
                    msg: e.to_string(),
                })?;
                self.overlay(file)
            }
            None => self,
        };
        let base = TrainConfig::<f64>::default();
        Ok(Settings {
            topics: merged.topics.unwrap_or(40),
            dim: merged.dim.unwrap_or(10),
            em_iters: merged.em_iters.unwrap_or(base.em_iters),
            alpha: merged.alpha.unwrap_or(1.0),
            gamma: merged.gamma.unwrap_or(1.0),
            tau: merged.tau.unwrap_or(1.0),
            xi: merged.xi.unwrap_or(1.0),
            pair_strategy: merged.pair_strategy.unwrap_or(PairArg(PairStrategy::AllPairs)),
            max_features: merged.max_features,
            tolerance: merged.tolerance.unwrap_or(base.tolerance),
            refresh_period: merged.refresh_period.unwrap_or(base.refresh_period),
            inner_steps: merged.inner_steps.unwrap_or(base.estep.inner_steps),
            estep_sweeps: merged.estep_sweeps.unwrap_or(base.estep.max_sweeps),
        })
    }
}

/// Fully resolved model settings, as recorded in `run.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub topics: usize,
    pub dim: usize,
    pub em_iters: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub xi: f64,
    pub pair_strategy: PairArg,
    pub max_features: Option<usize>,
    pub tolerance: f64,
    pub refresh_period: usize,
    pub inner_steps: usize,
    pub estep_sweeps: usize,
}

impl Settings {
    fn hyper(&self, vocab_size: usize) -> HyperParams<f64> {
        HyperParams {
            alpha: self.alpha,
            gamma: self.gamma,
            tau: self.tau,
            xi: self.xi,
            num_topics: self.topics,
            dim: self.dim,
            vocab_size,
        }
    }

    fn train_config(&self, seed: u64, threads: usize) -> TrainConfig<f64> {
        let base = TrainConfig::<f64>::default();
        TrainConfig {
            em_iters: self.em_iters,
            tolerance: self.tolerance,
            refresh_period: self.refresh_period,
            seed,
            threads,
            estep: crate::inference::EStepConfig {
                inner_steps: self.inner_steps,
                max_sweeps: self.estep_sweeps,
                pair_strategy: self.pair_strategy.0,
                ..base.estep
            },
        }
    }

    fn load_options(&self, vocab: Option<&Path>, users: Option<&Path>) -> Result<LoadOptions> {
        let mut opts = match vocab {
            Some(p) => LoadOptions::with_vocabulary(Vocabulary::read(p)?),
            None => LoadOptions::build(self.max_features.unwrap_or(usize::MAX)),
        };
        if let Some(p) = users {
            let text = fs::read_to_string(p).map_err(|e| JnetError::io(p, e))?;
            opts.users = Some(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect());
        }
        Ok(opts)
    }

    fn fit(&self, corpus: &Corpus, seed: u64, threads: usize) -> Result<TrainOutput<f64>> {
        train(corpus, &self.hyper(corpus.vocab_size()), &self.train_config(seed, threads))
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// documents: user_id<TAB>doc_id<TAB>space-separated tokens
    #[arg(long)]
    pub docs: PathBuf,
    /// friendships: user_id<TAB>user_id
    #[arg(long)]
    pub edges: PathBuf,
    /// output checkpoint directory
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with model settings; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// fixed vocabulary, one term per line
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// fixed user list, one id per line (keeps users without documents or edges)
    #[arg(long)]
    pub users: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// worker threads (0 = all cores)
    #[arg(long, env = "JNET_THREADS", default_value_t = 0)]
    pub threads: usize,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub users: usize,
    #[arg(long, default_value_t = 3)]
    pub topics: usize,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 100)]
    pub vocab: usize,
    /// N or poisson:MEAN
    #[arg(long, default_value = "10")]
    pub docs_per_user: CountArg,
    /// N or poisson:MEAN
    #[arg(long, default_value = "30")]
    pub words_per_doc: CountArg,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 1.0)]
    pub xi: f64,
    /// symmetric Dirichlet concentration of the true topics
    #[arg(long, default_value_t = 0.1)]
    pub concentration: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// `N` or `poisson:MEAN`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountArg(pub CountDist);

impl FromStr for CountArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if let Some(m) = s.strip_prefix("poisson:") {
            return m.parse().map(|m| Self(CountDist::Poisson(m))).map_err(|_| format!("bad Poisson mean in {s}"));
        }
        s.parse().map(|n| Self(CountDist::Fixed(n))).map_err(|_| format!("expected N or poisson:MEAN, got {s}"))
    }
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// checkpoint directory
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Output format used in every CSV the CLI writes.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_run_json(dir: &Path, record: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| JnetError::io(dir, e))?;
    let path = dir.join("run.json");
    let text = serde_json::to_string_pretty(&record).expect("json values serialize") + "\n";
    fs::write(&path, text).map_err(|e| JnetError::io(&path, e))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let settings = args.model.resolve(args.config.as_deref())?;
    let opts = settings.load_options(args.vocab.as_deref(), args.users.as_deref())?;
    let (corpus, report) = load_corpus(&args.docs, &args.edges, &opts)?;
    let out = settings.fit(&corpus, args.seed, args.threads)?;
    out.save(&args.out)?;
    write_run_json(
        &args.out,
        serde_json::json!({
            "command": "train",
            "docs": args.docs,
            "edges": args.edges,
            "config": args.config,
            "vocab": args.vocab,
            "users": args.users,
            "out": args.out,
            "seed": args.seed,
            "threads": args.threads,
            "settings": settings,
            "ingestion": report,
            "iterations": out.model.meta.iterations,
            "final_elbo": out.model.meta.final_elbo,
        }),
    )?;
    println!(
        "trained K={} M={} on {} users, {} documents: {} iterations, final ELBO {:.6}",
        settings.topics,
        settings.dim,
        corpus.num_users(),
        corpus.num_documents(),
        out.model.meta.iterations,
        out.model.meta.final_elbo
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        num_users: args.users,
        num_topics: args.topics,
        dim: args.dim,
        vocab_size: args.vocab,
        docs_per_user: args.docs_per_user.0,
        words_per_doc: args.words_per_doc.0,
        alpha: args.alpha,
        gamma: args.gamma,
        tau: args.tau,
        xi: args.xi,
        beta_concentration: args.concentration,
        seed: args.seed,
    };
    spec.validate()?;
    let (corpus, truth) = generate::<f64>(&spec)?;
    write_synthetic(&args.out, &spec, &corpus, &truth)?;
    write_run_json(&args.out, serde_json::json!({ "command": "synth", "out": args.out, "spec": spec }))?;
    println!(
        "wrote {} users, {} documents, {} edges to {}",
        corpus.num_users(),
        corpus.num_documents(),
        corpus.adjacency.len(),
        args.out.display()
    );
    Ok(())
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (k, &x)| if x > best.1 { (k, x) } else { best }).0
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let model = read_checkpoint::<f64>(&args.model)?;
    fs::create_dir_all(&args.out).map_err(|e| JnetError::io(&args.out, e))?;
    let dim = model.hyper.dim;
    let header = |first: &str| {
        let cols: Vec<String> = (0..dim).map(|m| format!("v{m}")).collect();
        format!("{first},{},label\n", cols.join(","))
    };

    let mut users = header("user");
    for (id, mean) in model.users.iter().zip(&model.user_means) {
        let affinity: Vec<f64> = model.topic_means.iter().map(|phi| crate::scalar::dot(phi, mean)).collect();
        let vals: Vec<String> = mean.iter().map(|&x| num(x)).collect();
        users.push_str(&format!("{id},{},{}\n", vals.join(","), argmax(&affinity)));
    }
    let mut topics = header("topic");
    for (k, mean) in model.topic_means.iter().enumerate() {
        let top_word = &model.vocabulary[argmax(model.beta.row(k))];
        let vals: Vec<String> = mean.iter().map(|&x| num(x)).collect();
        topics.push_str(&format!("{k},{},{top_word}\n", vals.join(",")));
    }
    for (name, text) in [("user_embeddings.csv", users), ("topic_embeddings.csv", topics)] {
        let path = args.out.join(name);
        fs::write(&path, text).map_err(|e| JnetError::io(&path, e))?;
    }
    write_run_json(&args.out, serde_json::json!({ "command": "export", "model": args.model, "out": args.out }))?;
    println!("exported {} users and {} topics to {}", model.num_users(), model.num_topics(), args.out.display());
    Ok(())
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => eval::cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Export(a) => cmd_export(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_arg_round_trip() {
        for s in ["all_pairs", "sampled:2.5"] {
            assert_eq!(s.parse::<PairArg>().unwrap().to_string(), s);
        }
        assert!("sampled".parse::<PairArg>().is_err());
        assert!("sampled:x".parse::<PairArg>().is_err());
    }

    #[test]
    fn count_arg_forms() {
        assert_eq!("7".parse::<CountArg>().unwrap().0, CountDist::Fixed(7));
        assert_eq!("poisson:3.5".parse::<CountArg>().unwrap().0, CountDist::Poisson(3.5));
        assert!("poisson".parse::<CountArg>().is_err());
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"topics": 7, "dim": 3, "pair_strategy": "sampled:2"}"#).unwrap();
        let flags = ModelArgs { dim: Some(5), ..ModelArgs::default() };
        let s = flags.resolve(Some(&cfg)).unwrap();
        assert_eq!((s.topics, s.dim, s.em_iters), (7, 5, 100));
        assert_eq!(s.pair_strategy.0, PairStrategy::Sampled { ratio: 2.0 });
    }

    #[test]
    fn defaults_without_config() {
        let s = ModelArgs::default().resolve(None).unwrap();
        assert_eq!((s.topics, s.dim, s.em_iters, s.refresh_period), (40, 10, 100, 5));
        assert_eq!(s.pair_strategy.0, PairStrategy::AllPairs);
    }

    #[test]
    fn unknown_config_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"topcs": 7}"#).unwrap();
        let err = ModelArgs::default().resolve(Some(&cfg)).unwrap_err();
        assert!(err.to_string().contains("c.json"), "{err}");
    }

    #[test]
    fn argmax_first_of_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, -1.0]), 1);
    }
}
