use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;

use super::{write_run_json, ModelArgs, Settings};
use crate::corpus::{
    group_cold_start_users, load_corpus, read_documents, read_edges, split_folds, AdjacencySet, Corpus, Document,
    FoldMode, GroupMetric,
};
use crate::error::{JnetError, Result};
use crate::evaluation::{
    build_link_tasks, evaluate_cold_start, evaluate_experts, perplexity, score_link_tasks, write_plot_data,
    write_reports, ColdStartInput, EvalReport, ExpertQuery,
};
use crate::inference::EStepConfig;
use crate::model::{read_checkpoint, TrainedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// held-out document perplexity
    Perplexity,
    /// held-out friend ranking among injected non-friends
    Links,
    /// answerer ranking for questions
    Expert,
    /// per-group scores for users with one modality removed from training
    ColdStart,
}

/// What is removed from training for cold-start users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Holdout {
    Text,
    Links,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Connections,
    Documents,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub mode: EvalMode,
    /// trained checkpoint to score (frozen-model evaluation)
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// documents: held-out text with --model, the full corpus when retraining,
    /// questions in expert mode
    #[arg(long)]
    pub docs: Option<PathBuf>,
    /// edges: held-out friendships with --model, the full graph when retraining
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// training friendships excluded from negatives (links with --model)
    #[arg(long)]
    pub train_edges: Option<PathBuf>,
    /// question answerers: doc_id<TAB>user_id (expert)
    #[arg(long)]
    pub answers: Option<PathBuf>,
    /// retrain on each of N folds (perplexity, links) or repeat N group draws (cold-start)
    #[arg(long)]
    pub folds: Option<usize>,
    /// non-friends injected per held-out friend; comma-separated list allowed
    #[arg(long, value_delimiter = ',')]
    pub ratio: Vec<usize>,
    /// weight of topical expertise against social closeness; list allowed
    #[arg(long, value_delimiter = ',')]
    pub mix_weight: Vec<f64>,
    /// LOW,HIGH: light < LOW <= medium < HIGH <= heavy
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub group_thresholds: Vec<usize>,
    /// quantity the cold-start thresholds apply to [default: connections for text, documents for links]
    #[arg(long)]
    pub group_metric: Option<GroupBy>,
    /// users drawn from each cold-start pool
    #[arg(long)]
    pub group_size: Option<usize>,
    /// modality removed for cold-start users
    #[arg(long)]
    pub holdout: Option<Holdout>,
    /// fixed user list for retraining runs, one id per line
    #[arg(long)]
    pub users: Option<PathBuf>,
    /// JSON file with model settings for retraining runs; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// report CSV: metric,group,param,value,fold,seed
    #[arg(long)]
    pub report: PathBuf,
    /// directory for per-metric series CSVs
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "JNET_THREADS", default_value_t = 0)]
    pub threads: usize,
    #[command(flatten)]
    pub train: ModelArgs,
}

fn invalid(msg: impl Into<String>) -> JnetError {
    JnetError::Invalid(msg.into())
}

fn require<'a>(v: &'a Option<PathBuf>, flag: &str, mode: EvalMode) -> Result<&'a Path> {
    v.as_deref().ok_or_else(|| invalid(format!("{} mode needs --{flag}", mode_name(mode))))
}

fn mode_name(mode: EvalMode) -> &'static str {
    match mode {
        EvalMode::Perplexity => "perplexity",
        EvalMode::Links => "links",
        EvalMode::Expert => "expert",
        EvalMode::ColdStart => "cold-start",
    }
}

impl EvalArgs {
    /// Rejects flags that the chosen mode does not read.
    fn check_flags(&self) -> Result<()> {
        let mode = self.mode;
        let name = mode_name(mode);
        let reject = |set: bool, flag: &str, ok: bool| {
            if set && !ok {
                Err(invalid(format!("{flag} does not apply to {name} mode")))
            } else {
                Ok(())
            }
        };
        let retraining = self.model.is_none();
        reject(!self.ratio.is_empty(), "--ratio", matches!(mode, EvalMode::Links | EvalMode::ColdStart))?;
        reject(!self.mix_weight.is_empty(), "--mix-weight", mode == EvalMode::Expert)?;
        reject(!self.group_thresholds.is_empty(), "--group-thresholds", mode == EvalMode::ColdStart)?;
        reject(self.group_metric.is_some(), "--group-metric", mode == EvalMode::ColdStart)?;
        reject(self.group_size.is_some(), "--group-size", mode == EvalMode::ColdStart)?;
        reject(self.holdout.is_some(), "--holdout", mode == EvalMode::ColdStart)?;
        reject(self.answers.is_some(), "--answers", mode == EvalMode::Expert)?;
        reject(self.train_edges.is_some(), "--train-edges", mode == EvalMode::Links && !retraining)?;
        reject(self.model.is_some(), "--model", mode != EvalMode::ColdStart)?;
        reject(self.folds.is_some(), "--folds", retraining)?;
        reject(self.train != ModelArgs::default(), "model settings (--topics, --dim, ...)", retraining)?;
        reject(self.config.is_some(), "--config", retraining)?;
        reject(self.users.is_some(), "--users", retraining)?;
        if mode == EvalMode::Expert && retraining {
            return Err(invalid("expert mode needs --model"));
        }
        if retraining && mode != EvalMode::ColdStart && self.folds.is_none() {
            return Err(invalid(format!("{name} mode needs --model or --folds")));
        }
        if self.ratio.contains(&0) {
            return Err(invalid("--ratio values must be at least 1"));
        }
        Ok(())
    }
}

pub(super) fn cmd_eval(args: EvalArgs) -> Result<()> {
    args.check_flags()?;
    let estep = EStepConfig::<f64>::default();
    let mut resolved: Option<Settings> = None;
    let reports = match (args.mode, &args.model) {
        (EvalMode::Perplexity, Some(m)) => {
            let model = read_checkpoint::<f64>(m)?;
            let docs = heldout_documents(&model, require(&args.docs, "docs", args.mode)?)?;
            vec![EvalReport::new("perplexity", "all", "", perplexity(&model, &docs, &estep)?, None, args.seed)?]
        }
        (EvalMode::Links, Some(m)) => {
            let model = read_checkpoint::<f64>(m)?;
            let ids = user_lookup(&model.users);
            let heldout = map_edges(&ids, require(&args.edges, "edges", args.mode)?)?;
            let train = match &args.train_edges {
                Some(p) => map_edges(&ids, p)?,
                None => Vec::new(),
            };
            let train = AdjacencySet::from_edges(model.num_users(), train)?;
            link_reports(&model, &train, &heldout, &ratios(&args, &[2]), None, args.seed)?
        }
        (EvalMode::Expert, Some(m)) => {
            let model = read_checkpoint::<f64>(m)?;
            let queries = expert_queries(&model, require(&args.docs, "docs", args.mode)?, require(&args.answers, "answers", args.mode)?)?;
            let weights = if args.mix_weight.is_empty() { vec![0.5] } else { args.mix_weight.clone() };
            let mut out = Vec::new();
            for w in weights {
                let (n, m) = evaluate_experts(&model, &queries, w, &estep)?;
                out.push(EvalReport::new("ndcg", "all", w, n, None, args.seed)?);
                out.push(EvalReport::new("map", "all", w, m, None, args.seed)?);
            }
            out
        }
        (mode, _) => {
            let settings = args.train.clone().resolve(args.config.as_deref())?;
            let opts = settings.load_options(None, args.users.as_deref())?;
            let docs = require(&args.docs, "docs", mode)?;
            let edges = require(&args.edges, "edges", mode)?;
            let (corpus, _) = load_corpus(docs, edges, &opts)?;
            let rows = match mode {
                EvalMode::ColdStart => cold_start(&args, &settings, &corpus, &estep)?,
                _ => cross_validate(&args, &settings, &corpus, &estep)?,
            };
            resolved = Some(settings);
            rows
        }
    };

    if let Some(dir) = args.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| JnetError::io(dir, e))?;
    }
    write_reports(&args.report, &reports)?;
    if let Some(dir) = &args.plot_data {
        write_plot_data(dir, &reports)?;
    }
    let run_dir = args.report.parent().map(Path::to_path_buf).unwrap_or_default();
    write_run_json(
        if run_dir.as_os_str().is_empty() { Path::new(".") } else { &run_dir },
        serde_json::json!({
            "command": "eval",
            "mode": args.mode,
            "model": args.model,
            "docs": args.docs,
            "edges": args.edges,
            "train_edges": args.train_edges,
            "answers": args.answers,
            "folds": args.folds,
            "ratio": args.ratio,
            "mix_weight": args.mix_weight,
            "group_thresholds": args.group_thresholds,
            "group_metric": args.group_metric,
            "group_size": args.group_size,
            "holdout": args.holdout,
            "report": args.report,
            "plot_data": args.plot_data,
            "seed": args.seed,
            "threads": args.threads,
            "settings": resolved,
        }),
    )?;
    for r in &reports {
        let fold = r.fold.map(|f| format!(" fold {f}")).unwrap_or_default();
        println!("{} {} {}{fold}: {:.6}", r.metric, r.group, r.param, r.value);
    }
    Ok(())
}

fn ratios(args: &EvalArgs, default: &[usize]) -> Vec<usize> {
    if args.ratio.is_empty() {
        default.to_vec()
    } else {
        args.ratio.clone()
    }
}

fn user_lookup(users: &[String]) -> HashMap<&str, usize> {
    users.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect()
}

fn map_edges(ids: &HashMap<&str, usize>, path: &Path) -> Result<Vec<(usize, usize)>> {
    let find = |u: &str| ids.get(u).copied().ok_or_else(|| invalid(format!("{}: unknown user {u}", path.display())));
    read_edges(path)?.iter().map(|(a, b)| Ok((find(a)?, find(b)?))).collect()
}

/// Documents mapped onto the model's vocabulary. Unknown terms are dropped,
/// as are documents left empty; unknown owners get an index past the
/// model's users so fold-in uses the prior.
fn heldout_documents(model: &TrainedModel<f64>, path: &Path) -> Result<Vec<Document>> {
    let vocab: HashMap<&str, u32> = model.vocabulary.iter().enumerate().map(|(v, t)| (t.as_str(), v as u32)).collect();
    let ids = user_lookup(&model.users);
    let mut out = Vec::new();
    for raw in read_documents(path)? {
        let tokens: Vec<u32> = raw.tokens.iter().filter_map(|t| vocab.get(t.as_str()).copied()).collect();
        if tokens.is_empty() {
            log::warn!("document {} has no known terms, skipped", raw.id);
            continue;
        }
        let owner = ids.get(raw.user.as_str()).copied().unwrap_or(model.num_users());
        out.push(Document::new(owner, raw.id, tokens)?);
    }
    if out.is_empty() {
        return Err(JnetError::NoUsableTerms);
    }
    Ok(out)
}

fn expert_queries(model: &TrainedModel<f64>, questions: &Path, answers: &Path) -> Result<Vec<ExpertQuery>> {
    let ids = user_lookup(&model.users);
    let docs = heldout_documents(model, questions)?;
    if let Some(d) = docs.iter().find(|d| d.owner >= model.num_users()) {
        return Err(invalid(format!("question {} asked by a user unknown to the model", d.id)));
    }
    let mut answerers: HashMap<String, Vec<usize>> = HashMap::new();
    for (doc, user) in read_edges(answers)? {
        let u = ids.get(user.as_str()).copied().ok_or_else(|| invalid(format!("{}: unknown user {user}", answers.display())))?;
        answerers.entry(doc).or_default().push(u);
    }
    Ok(docs
        .into_iter()
        .map(|d| {
            let answerers = answerers.get(&d.id).cloned().unwrap_or_default();
            ExpertQuery { question: d, answerers }
        })
        .collect())
}

fn link_reports(
    model: &TrainedModel<f64>,
    train: &AdjacencySet,
    heldout: &[(usize, usize)],
    ratios: &[usize],
    fold: Option<usize>,
    seed: u64,
) -> Result<Vec<EvalReport>> {
    let mut out = Vec::new();
    for &t in ratios {
        let tasks = build_link_tasks(train, heldout, t, seed)?;
        let (n, m) = score_link_tasks(model, &tasks)?;
        out.push(EvalReport::new("ndcg", "all", t, n, fold, seed)?);
        out.push(EvalReport::new("map", "all", t, m, fold, seed)?);
    }
    Ok(out)
}

fn cross_validate(args: &EvalArgs, settings: &Settings, corpus: &Corpus, estep: &EStepConfig<f64>) -> Result<Vec<EvalReport>> {
    let folds = args.folds.expect("checked by check_flags");
    let mode = if args.mode == EvalMode::Perplexity { FoldMode::Documents } else { FoldMode::Edges };
    let split = split_folds(corpus, folds, args.seed, mode)?;
    let mut out = Vec::new();
    for f in 0..folds {
        log::info!("fold {f} of {folds}");
        if mode == FoldMode::Documents {
            let held = &split.documents[f];
            let train = corpus.filter_documents(|idx, _| held.binary_search(&idx).is_err());
            let model = settings.fit(&train, args.seed, args.threads)?.model;
            let docs: Vec<Document> = held.iter().map(|&d| corpus.documents()[d].clone()).collect();
            out.push(EvalReport::new("perplexity", "all", "", perplexity(&model, &docs, estep)?, Some(f), args.seed)?);
        } else {
            let held = &split.edges[f];
            let adj = corpus.adjacency.without(held);
            let model = settings.fit(&corpus.with_adjacency(adj.clone())?, args.seed, args.threads)?.model;
            out.extend(link_reports(&model, &adj, held, &ratios(args, &[2]), Some(f), args.seed)?);
        }
    }
    Ok(out)
}

fn cold_start(args: &EvalArgs, settings: &Settings, corpus: &Corpus, estep: &EStepConfig<f64>) -> Result<Vec<EvalReport>> {
    let [low, high] = args.group_thresholds[..] else {
        return Err(invalid("cold-start mode needs --group-thresholds LOW,HIGH"));
    };
    let holdout = args.holdout.unwrap_or(Holdout::Text);
    let metric = match args.group_metric {
        Some(GroupBy::Connections) => GroupMetric::Connections,
        Some(GroupBy::Documents) => GroupMetric::Documents,
        None if holdout == Holdout::Text => GroupMetric::Connections,
        None => GroupMetric::Documents,
    };
    let size = args.group_size.unwrap_or(10);
    let mut out = Vec::new();
    for rep in 0..args.folds.unwrap_or(1) {
        let seed = args.seed.wrapping_add(rep as u64);
        let groups = group_cold_start_users(corpus, low, high, metric, size, seed)?;
        let members: Vec<usize> = groups.labeled().iter().flat_map(|(_, g)| g.iter().copied()).collect();
        let fold = args.folds.map(|_| rep);
        match holdout {
            Holdout::Text => {
                let train = corpus.filter_documents(|_, d| !members.contains(&d.owner));
                let held: Vec<Document> = corpus.documents().iter().filter(|d| members.contains(&d.owner)).cloned().collect();
                let model = settings.fit(&train, seed, args.threads)?.model;
                out.extend(evaluate_cold_start(&model, &groups, ColdStartInput::Text { documents: &held }, fold, seed, estep)?);
            }
            Holdout::Links => {
                let held: Vec<(usize, usize)> =
                    corpus.adjacency.edges().filter(|&(i, j)| members.contains(&i) || members.contains(&j)).collect();
                let adj = corpus.adjacency.without(&held);
                let model = settings.fit(&corpus.with_adjacency(adj.clone())?, seed, args.threads)?.model;
                let ratios = ratios(args, &[2, 4, 6]);
                let input = ColdStartInput::Links { train: &adj, heldout: &held, ratios: &ratios };
                out.extend(evaluate_cold_start(&model, &groups, input, fold, seed, estep)?);
            }
        }
    }
    Ok(out)
}
